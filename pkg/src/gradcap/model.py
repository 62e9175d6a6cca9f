"""Problem data and the a priori machinery attached to it.

A ProblemSpec bundles the flux Phi, reaction f, gradient threshold G,
initial datum and the structure constants (c1, c2) of the growth assumption
|div Phi + f| <= c1|u| + c2.  From those constants a computable sup bound
for the solution is produced, and the assumptions themselves can be
spot-checked on a randomized lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression, evaluate, parse_expression, partial_u

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ProblemSpec:
    dim: int
    extents: tuple                  # ((x0,x1),) or ((x0,x1),(y0,y1))
    horizon: float                  # final time T
    phi: tuple                      # one flux Expression per axis
    f: Expression
    g: Expression                   # threshold G(x[,y],u); must not use t
    u0: Expression
    c1: float
    c2: float
    lambda_min: float
    lambda_max: float | None = None
    mu: float | None = None
    f_inf: Expression | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if len(self.phi) != self.dim:
            raise ValueError("one flux component per axis required")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.lambda_min <= 0:
            raise ValueError("lambda_min must be positive")
        if self.g.uses("t"):
            raise ValueError("constraint G may not depend on t")
        if self.dim == 1:
            for name, e in self._named_exprs():
                if e.uses("y"):
                    raise ValueError(f"{name} references y in a 1d problem")

    def _named_exprs(self):
        pairs = [("phi_x", self.phi[0]), ("f", self.f), ("g", self.g),
                 ("u0", self.u0)]
        if self.dim == 2:
            pairs.insert(1, ("phi_y", self.phi[1]))
        if self.f_inf is not None:
            pairs.append(("f_inf", self.f_inf))
        return pairs

    def is_quasi(self) -> bool:
        """True when the threshold depends on the solution itself."""
        return self.g.uses("u")


def make_spec(dim=1, extents=((-1.0, 1.0),), horizon=1.0, phi=("0",),
              f="0", g="1", u0="0", c1=1.0, c2=1.0, lambda_min=0.5,
              lambda_max=None, mu=None, f_inf=None) -> ProblemSpec:
    """Convenience constructor taking expression sources as strings."""
    return ProblemSpec(
        dim=dim,
        extents=tuple(tuple(e) for e in extents),
        horizon=horizon,
        phi=tuple(parse_expression(p) for p in phi),
        f=parse_expression(f),
        g=parse_expression(g),
        u0=parse_expression(u0),
        c1=c1, c2=c2,
        lambda_min=lambda_min, lambda_max=lambda_max, mu=mu,
        f_inf=None if f_inf is None else parse_expression(f_inf),
    )


def u0_sup(spec: ProblemSpec, per_axis: int = 1025) -> float:
    """max |u0| sampled on a fine lattice (u0 depends on space only)."""
    if spec.dim == 1:
        xs = np.linspace(*spec.extents[0], per_axis)
        vals = evaluate(spec.u0, x=xs, t=0.0, u=0.0)
    else:
        m = 257
        xs = np.linspace(*spec.extents[0], m)
        ys = np.linspace(*spec.extents[1], m)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        vals = evaluate(spec.u0, x=gx, y=gy, t=0.0, u=0.0)
    return float(np.max(np.abs(vals)))


def _golden_min(fn, a: float, b: float, iters: int = 120) -> float:
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def sup_bound_value(c1: float, c2: float, horizon: float, u0_max: float,
                    constants: str = "proof") -> float:
    """inf over lam > b1 of exp(lam*T) * max(u0_max + 1, sqrt(b2/(lam-b1))).

    Two published forms of the constants circulate; the "proof" pair
    (b1 = 2*c1 + 1, b2 = c2^2) is what the derivation actually supports and
    is the one used for the binding bound.  The "statement" pair
    (b1 = c1 + 1/2, b2 = c2^2/2) is reported alongside for comparison.
    """
    if constants == "proof":
        b1, b2 = 2.0 * c1 + 1.0, c2 * c2
    elif constants == "statement":
        b1, b2 = c1 + 0.5, 0.5 * c2 * c2
    else:
        raise ValueError(f"unknown constants variant {constants!r}")
    amp = u0_max + 1.0

    def objective(lam: float) -> float:
        pen = math.sqrt(b2 / (lam - b1)) if b2 > 0 else 0.0
        try:
            return math.exp(lam * horizon) * max(amp, pen)
        except OverflowError:
            return math.inf  # long horizons push the probe window past exp range

    lam_star = _golden_min(objective, b1 + 1e-9, b1 + 50.0)
    return objective(lam_star)


def sup_bound_M(spec: ProblemSpec, constants: str = "proof") -> float:
    """A priori sup bound for the evolution, from the growth constants."""
    return sup_bound_value(spec.c1, spec.c2, spec.horizon, u0_sup(spec),
                           constants=constants)


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float          # most positive violation seen (<= 0 means ok)
    witness: dict         # sample point realizing the worst value
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            lines.append(f"{c.name}: {status} (worst {c.worst:.3e}) {c.detail}")
        return "\n".join(lines)


def _sample_points(spec: ProblemSpec, count: int, u_range: float, rng):
    """Random interior points plus a few deterministic anchors."""
    pts = {"t": rng.uniform(0.0, spec.horizon, count)}
    for k, name in enumerate("xy"[: spec.dim]):
        a, b = spec.extents[k]
        pad = 1e-4 * (b - a)
        pts[name] = rng.uniform(a + pad, b - pad, count)
    pts["u"] = rng.uniform(-u_range, u_range, count)
    # anchors: centred u values hit sign changes that random draws miss
    anchors = np.array([0.0, u_range, -u_range, 1.0, -1.0])
    m = len(anchors)
    for key in pts:
        pts[key] = np.concatenate([pts[key], np.resize(pts[key][:1], m)])
    pts["u"][-m:] = anchors
    return pts


def _partial_divergence(spec: ProblemSpec, pts: dict) -> np.ndarray:
    """Sum over axes of d(phi_k)/dx_k at fixed u (centered differences)."""
    total = np.zeros_like(pts["u"])
    for k, name in enumerate("xy"[: spec.dim]):
        a, b = spec.extents[k]
        h = 1e-6 * (b - a)
        shifted = dict(pts)
        shifted[name] = pts[name] + h
        hi = evaluate(spec.phi[k], **shifted)
        shifted[name] = pts[name] - h
        lo = evaluate(spec.phi[k], **shifted)
        total = total + (np.asarray(hi) - np.asarray(lo)) / (2.0 * h)
    return total


def _worst(pts: dict, violation: np.ndarray):
    violation = np.broadcast_to(np.asarray(violation, dtype=float),
                                pts["u" if "u" in pts else "x"].shape)
    i = int(np.argmax(violation))
    witness = {k: float(v[i]) for k, v in pts.items()}
    return float(violation[i]), witness


def validate(spec: ProblemSpec, samples: int = 200, seed: int = 0,
             tol: float = 1e-9) -> ValidationReport:
    """Spot-check the structural assumptions on a randomized lattice.

    Samples (x[, y], t, u) with |u| <= 2 * sup bound.  Deterministic for a
    fixed seed.
    """
    rng = np.random.default_rng(seed)
    m_hat = sup_bound_M(spec)
    u_range = 2.0 * m_hat
    pts = _sample_points(spec, samples, u_range, rng)
    report = ValidationReport()

    div_phi = _partial_divergence(spec, pts)
    f_vals = np.asarray(evaluate(spec.f, **pts))
    growth = np.abs(div_phi + f_vals) - (spec.c1 * np.abs(pts["u"]) + spec.c2)
    worst, witness = _worst(pts, growth)
    report.checks.append(AssumptionCheck(
        "growth-bound", bool(worst <= tol), worst, witness,
        f"|div(phi)+f| vs {spec.c1}|u|+{spec.c2}"))

    g_pts = {k: v for k, v in pts.items() if k != "t"}
    g_vals = np.broadcast_to(np.asarray(evaluate(spec.g, **g_pts), dtype=float),
                             pts["u"].shape)
    floor = spec.lambda_min - g_vals
    worst, witness = _worst(g_pts, floor)
    report.checks.append(AssumptionCheck(
        "threshold-floor", bool(worst <= tol), worst, witness,
        f"G >= {spec.lambda_min}; witness G = {g_vals[np.argmax(floor)]:.6g}"))

    if spec.lambda_max is not None:
        ceil = g_vals - spec.lambda_max
        worst, witness = _worst(g_pts, ceil)
        report.checks.append(AssumptionCheck(
            "threshold-ceiling", bool(worst <= tol), worst, witness,
            f"G <= {spec.lambda_max}"))

    if spec.mu is not None:
        dfu = np.asarray(partial_u(spec.f, **pts, h=1e-6))
        damp = dfu + 0.5 * spec.mu
        worst, witness = _worst(pts, damp)
        report.checks.append(AssumptionCheck(
            "reaction-damping", bool(worst <= tol), worst, witness,
            f"d f/d u <= -mu/2 with mu = {spec.mu}"))

    # boundary trace of the initial datum
    b_pts = _boundary_points(spec)
    u0b = np.abs(np.asarray(evaluate(spec.u0, **b_pts, t=0.0, u=0.0)))
    worst, witness = _worst(b_pts, u0b)
    report.checks.append(AssumptionCheck(
        "initial-boundary", bool(worst <= 1e-12 + tol), worst, witness,
        "u0 vanishes on the boundary"))

    return report


def _boundary_points(spec: ProblemSpec) -> dict:
    if spec.dim == 1:
        a, b = spec.extents[0]
        return {"x": np.array([a, b])}
    (xa, xb), (ya, yb) = spec.extents
    side = np.linspace(0.0, 1.0, 65)
    xs = np.concatenate([side * (xb - xa) + xa, side * (xb - xa) + xa,
                         np.full_like(side, xa), np.full_like(side, xb)])
    ys = np.concatenate([np.full_like(side, ya), np.full_like(side, yb),
                         side * (yb - ya) + ya, side * (yb - ya) + ya])
    return {"x": xs, "y": ys}
