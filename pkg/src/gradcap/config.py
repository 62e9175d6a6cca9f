"""INI-style run configuration: parse, default, validate, normalize.

A loaded config re-serializes to a canonical form (all keys present, fixed
order, expressions re-printed from their parse trees) so that normalization
is idempotent and manifests embed a stable echo.
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import dataclass

from .continuation import ContinuationSchedule
from .expr import Const, ExpressionError, parse_expression, to_source
from .grid import Grid
from .model import ProblemSpec, ValidationReport, validate
from .parabolic import StepControls


class ConfigError(ValueError):
    pass


# section -> key -> (default text, kind); kind drives both conversion and
# normalization.  Optional keys default to the empty string, meaning unset.
SCHEMA = {
    "domain": {
        "dim": ("1", "int"),
        "extents": ("-1,1", "extents"),
        "n": ("81", "counts"),
    },
    "model": {
        "phi_x": ("0", "expr"),
        "phi_y": ("0", "expr"),
        "f": ("0", "expr"),
        "g": ("1", "expr"),
        "u0": ("0", "expr"),
        "c1": ("1", "float"),
        "c2": ("1", "float"),
        "lambda_min": ("0.01", "float"),
        "lambda_max": ("", "optfloat"),
        "mu": ("", "optfloat"),
        "f_inf": ("", "optexpr"),
        "T": ("4.0", "float"),
    },
    "solver": {
        "dt_init": ("0.01", "float"),
        "cfl": ("0.45", "float"),
        "picard_tol": ("1e-08", "float"),
        "picard_max": ("50", "int"),
        "dt_min": ("1e-09", "float"),
        "dt_max": ("0.05", "float"),
        "snapshots": ("50", "int"),
    },
    "continuation": {
        "eps_init": ("0.1", "float"),
        "eps_factor": ("0.5", "float"),
        "eps_min": ("0.001", "float"),
        "delta_init": ("0.1", "float"),
        "delta_factor": ("0.5", "float"),
        "delta_min": ("0.001", "float"),
        "violation_target": ("0.01", "float"),
        "warm_start": ("true", "bool"),
    },
    "asymptotic": {
        "t_max": ("16.0", "float"),
        "stall_tol": ("1e-05", "float"),
        "alpha": ("0.5", "float"),
        "t_probe": ("2.0", "float"),
    },
    "output": {
        "directory": ("runs", "word"),
        "prefix": ("run", "word"),
        "seed": ("0", "int"),
    },
}

_BOOLS = {"true": True, "false": False, "1": True, "0": False,
          "yes": True, "no": False, "on": True, "off": False}


def _strip_quotes(text: str) -> str:
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    return t


def _normalize(section: str, key: str, raw_value: str) -> str:
    kind = SCHEMA[section][key][1]
    value = _strip_quotes(raw_value)
    where = f"[{section}].{key}"
    try:
        if kind == "int":
            return str(int(value))
        if kind == "float":
            return repr(float(value))
        if kind == "optfloat":
            return "" if value == "" else repr(float(value))
        if kind == "bool":
            if value.lower() not in _BOOLS:
                raise ValueError(f"not a boolean: {value!r}")
            return "true" if _BOOLS[value.lower()] else "false"
        if kind == "expr":
            return to_source(parse_expression(value))
        if kind == "optexpr":
            return "" if value == "" else to_source(parse_expression(value))
        if kind == "extents":
            groups = [g for g in value.split(";") if g.strip()]
            pairs = []
            for grp in groups:
                a, b = (float(p) for p in grp.split(","))
                if b <= a:
                    raise ValueError(f"empty interval {a},{b}")
                pairs.append(f"{a!r},{b!r}")
            return ";".join(pairs)
        if kind == "counts":
            return ",".join(str(int(p)) for p in value.split(","))
        if kind == "word":
            if not value:
                raise ValueError("must not be empty")
            return value
    except ExpressionError as e:
        raise ConfigError(f"{where}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    raise ConfigError(f"{where}: unhandled kind {kind}")


def parse_config_text(text: str) -> dict:
    """Raw text -> normalized {section: {key: value}} with all defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    raw = {sec: {k: v for k, (v, _) in keys.items()}
           for sec, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            hint = difflib.get_close_matches(section, SCHEMA, n=1)
            extra = f" (did you mean [{hint[0]}]?)" if hint else ""
            raise ConfigError(f"unknown section [{section}]{extra}")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                hint = difflib.get_close_matches(key, SCHEMA[section], n=1)
                extra = f" (did you mean {hint[0]!r}?)" if hint else ""
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]{extra}")
            raw[section][key] = value
    for section, keys in raw.items():
        for key in keys:
            raw[section][key] = _normalize(section, key, keys[key])
    return raw


@dataclass
class RunConfig:
    raw: dict
    spec: ProblemSpec
    grid: Grid
    ctl: StepControls
    schedule: ContinuationSchedule
    snapshots: int
    t_max: float
    stall_tol: float
    alpha: float
    t_probe: float
    directory: str
    prefix: str
    seed: int
    validation: ValidationReport


def _is_zero_expr(text: str) -> bool:
    root = parse_expression(text).root
    return isinstance(root, Const) and root.value == 0.0


def build_config(raw: dict, validation_samples: int = 200) -> RunConfig:
    dom, mod, sol = raw["domain"], raw["model"], raw["solver"]
    cont, asym, out = raw["continuation"], raw["asymptotic"], raw["output"]

    dim = int(dom["dim"])
    if dim not in (1, 2):
        raise ConfigError("[domain].dim: must be 1 or 2")
    pairs = [tuple(float(p) for p in grp.split(","))
             for grp in dom["extents"].split(";")]
    if len(pairs) == 1 and dim == 2:
        pairs = pairs * 2
    counts = [int(p) for p in dom["n"].split(",")]
    if len(counts) == 1 and dim == 2:
        counts = counts * 2
    if len(pairs) != dim or len(counts) != dim:
        raise ConfigError("[domain]: extents/n do not match dim")
    if dim == 1 and not _is_zero_expr(mod["phi_y"]):
        raise ConfigError("[model].phi_y: set but dim is 1")

    def opt_float(text):
        return None if text == "" else float(text)

    try:
        spec = ProblemSpec(
            dim=dim,
            extents=tuple(pairs),
            horizon=float(mod["T"]),
            phi=tuple(parse_expression(mod[k]) for k in ("phi_x", "phi_y"))[:dim],
            f=parse_expression(mod["f"]),
            g=parse_expression(mod["g"]),
            u0=parse_expression(mod["u0"]),
            c1=float(mod["c1"]),
            c2=float(mod["c2"]),
            lambda_min=float(mod["lambda_min"]),
            lambda_max=opt_float(mod["lambda_max"]),
            mu=opt_float(mod["mu"]),
            f_inf=(None if mod["f_inf"] == ""
                   else parse_expression(mod["f_inf"])),
        )
        grid = Grid(dim=dim, extents=tuple(pairs), n=tuple(counts))
        ctl = StepControls(
            dt_init=float(sol["dt_init"]), cfl=float(sol["cfl"]),
            picard_tol=float(sol["picard_tol"]),
            picard_max=int(sol["picard_max"]),
            dt_min=float(sol["dt_min"]), dt_max=float(sol["dt_max"]))
        schedule = ContinuationSchedule(
            eps_init=float(cont["eps_init"]),
            eps_factor=float(cont["eps_factor"]),
            eps_min=float(cont["eps_min"]),
            delta_init=float(cont["delta_init"]),
            delta_factor=float(cont["delta_factor"]),
            delta_min=float(cont["delta_min"]),
            violation_target=float(cont["violation_target"]),
            warm_start=cont["warm_start"] == "true")
    except (ValueError, ExpressionError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e

    snapshots = int(sol["snapshots"])
    if snapshots < 1:
        raise ConfigError("[solver].snapshots: must be >= 1")
    report = validate(spec, samples=validation_samples, seed=int(out["seed"]))
    return RunConfig(
        raw=raw, spec=spec, grid=grid, ctl=ctl, schedule=schedule,
        snapshots=snapshots,
        t_max=float(asym["t_max"]), stall_tol=float(asym["stall_tol"]),
        alpha=float(asym["alpha"]), t_probe=float(asym["t_probe"]),
        directory=out["directory"], prefix=out["prefix"],
        seed=int(out["seed"]), validation=report)


def load_config_text(text: str) -> RunConfig:
    return build_config(parse_config_text(text))


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return load_config_text(text)


def serialize_config(raw: dict) -> str:
    """Canonical text form; expressions are quoted."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, kind) in keys.items():
            value = raw[section][key]
            if kind in ("expr", "optexpr") and value != "":
                value = f'"{value}"'
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
