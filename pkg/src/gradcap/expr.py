"""Small closed-form expression language over the variables x, y, t, u.

Model data (fluxes, reaction terms, constraint thresholds, initial data) is
given as strings like ``"1 - 0.5*u"`` and compiled to an immutable tree.
Evaluation broadcasts over numpy arrays, so a single tree walk evaluates a
whole grid at once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x", "y", "t", "u")

# name -> arity
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sqrt": 1,
    "tanh": 1,
    "min": 2,
    "max": 2,
}


class ExpressionError(ValueError):
    """Parse failure, with the offending position in the source string."""


class EvaluationError(ArithmeticError):
    """Domain failure (division by zero, log of a non-positive value, ...)."""


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Expression:
    """Wrapper around a parsed tree; compares structurally."""

    root: object

    def variables(self) -> frozenset:
        return frozenset(_collect_vars(self.root))

    def uses(self, name: str) -> bool:
        return name in self.variables()

    def __str__(self) -> str:
        return to_source(self)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            # either trailing whitespace or an illegal character
            rest = source[pos:]
            if rest.strip() == "":
                break
            bad = pos + len(rest) - len(rest.lstrip())
            raise ExpressionError(
                f"unexpected character {source[bad]!r} at position {bad}"
            )
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    """Recursive descent over the grammar:

    sum     := product (('+'|'-') product)*
    product := unary (('*'|'/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          (right associative)
    atom    := number | variable | func '(' args ')' | '(' sum ')'
    """

    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExpressionError(
                f"expected {op!r} at position {pos} in {self.source!r}"
            )
        return self.advance()

    def parse(self):
        node = self.sum()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(
                f"unexpected {text!r} at position {pos} in {self.source!r}"
            )
        return node

    def sum(self):
        node = self.product()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = Bin(text, node, self.product())
            else:
                return node

    def product(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = Bin(text, node, self.unary())
            else:
                return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect_op("(")
                args = [self.sum()]
                while self.peek()[:2] == ("op", ","):
                    self.advance()
                    args.append(self.sum())
                self.expect_op(")")
                arity = FUNCTIONS[text]
                if len(args) != arity:
                    raise ExpressionError(
                        f"{text} takes {arity} argument(s), got {len(args)}"
                    )
                return Call(text, tuple(args))
            if text in VARIABLES:
                return Var(text)
            raise ExpressionError(f"unknown identifier {text!r} at position {pos}")
        if kind == "op" and text == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        raise ExpressionError(
            f"unexpected {text or 'end of input'!r} at position {pos} in {self.source!r}"
        )


def parse_expression(source: str) -> Expression:
    """Compile a source string to an Expression. Raises ExpressionError."""
    return Expression(_Parser(source).parse())


def _collect_vars(node):
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, Neg):
        yield from _collect_vars(node.operand)
    elif isinstance(node, Bin):
        yield from _collect_vars(node.left)
        yield from _collect_vars(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _collect_vars(a)


def _fail(node, reason):
    raise EvaluationError(f"{reason} in {_render(node, 0)!r}")


def _eval(node, env):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        v = env.get(node.name)
        if v is None:
            raise EvaluationError(f"variable {node.name!r} is not bound here")
        return v
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Bin):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                _fail(node, "division by zero")
            return a / b
        # node.op == "^"
        bi = np.rint(b)
        integral = np.all(b == bi)
        if np.any(np.asarray(a) < 0) and not integral:
            _fail(node, "fractional power of a negative value")
        if np.any((np.asarray(a) == 0) & (np.asarray(b) < 0)):
            _fail(node, "zero raised to a negative power")
        return np.power(a, b)
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        if node.name == "log":
            if np.any(np.asarray(args[0]) <= 0):
                _fail(node, "log of a non-positive value")
            return np.log(args[0])
        if node.name == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                _fail(node, "square root of a negative value")
            return np.sqrt(args[0])
        if node.name == "min":
            return np.minimum(args[0], args[1])
        if node.name == "max":
            return np.maximum(args[0], args[1])
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
              "abs": np.abs, "tanh": np.tanh}[node.name]
        return fn(args[0])
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(expr: Expression, x=None, y=None, t=None, u=None):
    """Evaluate at a point or over broadcastable numpy arrays.

    Unbound variables are an error only if the expression references them.
    """
    env = {}
    if x is not None:
        env["x"] = x
    if y is not None:
        env["y"] = y
    if t is not None:
        env["t"] = t
    if u is not None:
        env["u"] = u
    out = _eval(expr.root, env)
    if np.ndim(out) == 0:
        return float(out)
    return out


def partial_u(expr: Expression, x=None, y=None, t=None, u=None, h: float = 1e-6):
    """Centered-difference derivative in u at the given point(s)."""
    if u is None:
        raise EvaluationError("partial_u needs a u value")
    hi = evaluate(expr, x=x, y=y, t=t, u=np.asarray(u) + h)
    lo = evaluate(expr, x=x, y=y, t=t, u=np.asarray(u) - h)
    return (hi - lo) / (2.0 * h)


# precedence levels used when printing
_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _render(node, parent_level, right_of=None):
    if isinstance(node, Const):
        s = repr(node.value)
        if node.value < 0 and (parent_level >= 2 or right_of in ("+", "-")):
            return "(" + s + ")"
        return s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _render(node.operand, 3)
        s = "-" + inner
        # parenthesize when the sign would fuse with a binary operator,
        # e.g. the right operand of '-' or any operand of '*', '/', '^'
        if parent_level >= 2 or right_of in ("+", "-"):
            return "(" + s + ")"
        return s
    if isinstance(node, Bin):
        lvl = _LEVEL[node.op]
        if node.op == "^":
            left = _render(node.left, 5)
            right = _render(node.right, lvl)
        else:
            left = _render(node.left, lvl)
            right = _render(node.right, lvl + 1, right_of=node.op)
        s = f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"
        if lvl < parent_level:
            return "(" + s + ")"
        return s
    if isinstance(node, Call):
        args = ", ".join(_render(a, 0) for a in node.args)
        return f"{node.name}({args})"
    raise TypeError(f"not an expression node: {node!r}")


def to_source(expr: Expression) -> str:
    """Print the tree back to a string that reparses to an equal tree."""
    return _render(expr.root, 0)
