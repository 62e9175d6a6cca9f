"""Command line front end: run, sweep, steady, diagnose, eval-expr.

All artifacts are plain text with stable column orders.  The manifest opens
with a schema-version line; wall-clock numbers live in a [timings] section
at the end so replay comparisons can drop them.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
import textwrap
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .asymptotic import (data_hypotheses, holder_convergence, holder_floor,
                         solve_stationary, stationary_residual)
from .config import (ConfigError, RunConfig, build_config, parse_config_text,
                     serialize_config)
from .continuation import Trajectory, solve_qvi, solve_vi
from .diagnostics import estimate_ledger, serialize_report
from .expr import EvaluationError, ExpressionError, evaluate, parse_expression
from .grid import ScalarField, _atomic_write, read_snapshot, write_snapshot
from .parabolic import StiffnessCollapse, Stepper
from .penalty import RegularizationParams

MANIFEST_HEADER = "# gradcap-manifest v1"
LEDGER_TESTS = 16

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_TARGET_MISSED = 2


def write_manifest(path, sections) -> None:
    parts = [MANIFEST_HEADER, ""]
    for name, body in sections:
        parts.append(f"[{name}]")
        body = body.rstrip("\n")
        if body:
            parts.append(body)
        parts.append("")
    _atomic_write(path, "\n".join(parts) + "\n")


def read_manifest(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read manifest: {e}") from e
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ConfigError("manifest schema mismatch")
    sections = {}
    name = None
    buf = []
    for ln in lines[1:]:
        if ln.startswith("[") and ln.endswith("]") and " " not in ln:
            if name is not None:
                sections[name] = "\n".join(buf).strip("\n")
            name = ln[1:-1]
            buf = []
        elif name is not None:
            buf.append(ln)
    if name is not None:
        sections[name] = "\n".join(buf).strip("\n")
    return sections


def _dedent(body: str) -> str:
    return "\n".join(ln[2:] if ln.startswith("  ") else ln
                     for ln in body.splitlines())


def _kv_body(pairs) -> str:
    return "\n".join(f"{k} = {v}" for k, v in pairs)


def _parse_kv(body: str) -> dict:
    out = {}
    for ln in body.splitlines():
        if not ln.strip():
            continue
        key, _, value = ln.partition(" = ")
        out[key] = value
    return out


def _node_threshold(spec, grid, values: np.ndarray) -> np.ndarray:
    env = {"x": grid.node_coords()[0], "u": values}
    if grid.dim == 2:
        env["y"] = grid.node_coords()[1]
    return np.broadcast_to(
        np.asarray(evaluate(spec.g, **env), dtype=float), grid.shape)


def _stage_rows(stages) -> str:
    head = ("eps,delta,steps,final_violation,stalled,first_picard,"
            "mean_picard,clamp_events,dt_l2")
    rows = [head]
    for s in stages:
        rows.append(",".join((
            repr(s.eps), repr(s.delta), str(s.steps),
            repr(float(s.final_violation)),
            "true" if s.stalled else "false",
            str(s.first_picard), repr(float(s.mean_picard)),
            str(s.clamp_events), repr(float(s.dt_l2)))))
    return "\n".join(rows)


def _series_text(series: dict) -> str:
    names = list(series)
    lines = [",".join(names)]
    length = len(series[names[0]]) if names else 0
    for i in range(length):
        lines.append(",".join(repr(float(series[name][i])) for name in names))
    return "\n".join(lines) + "\n"


def _snapshot_digest(run_dir: Path, fnames) -> str:
    """sha256 over the snapshot files in index order; any byte matters."""
    h = hashlib.sha256()
    for fname in fnames:
        h.update((run_dir / fname).read_bytes())
    return h.hexdigest()


def _write_run_outputs(run_dir: Path, cfg: RunConfig, traj: Trajectory,
                       report, timings) -> None:
    spec, grid = cfg.spec, cfg.grid
    stepper = Stepper(spec, grid, traj.reg_used, cfg.ctl)
    snap_rows = []
    fnames = []
    for i, (t, snap) in enumerate(zip(traj.times, traj.snapshots)):
        field = ScalarField(grid, snap)
        fname = f"snap_{i:04d}.csv"
        write_snapshot(run_dir / fname, field,
                       _node_threshold(spec, grid, snap),
                       stepper.multiplier_nodes(field))
        snap_rows.append(f"{i},{float(t)!r},{fname}")
        fnames.append(fname)
    report.context["files-sha256"] = _snapshot_digest(run_dir, fnames)
    _atomic_write(run_dir / "series.csv", _series_text(traj.series))

    status = "saturated" if traj.saturation is not None else "ok"
    result = _kv_body((
        ("status", status),
        ("eps", repr(traj.reg_used.epsilon)),
        ("delta", repr(traj.reg_used.delta)),
        ("stalled", "true" if traj.stalled else "false"),
        ("saturation", "-" if traj.saturation is None
         else repr(traj.saturation)),
        ("quasi", "true" if spec.is_quasi() else "false"),
    ))
    sections = [
        ("config", textwrap.indent(serialize_config(cfg.raw), "  ")),
        ("result", result),
        ("snapshots", "\n".join(snap_rows)),
        ("stages", _stage_rows(traj.stages)),
        ("diagnostics", serialize_report(report)),
        ("timings", _kv_body(timings)),
    ]
    write_manifest(run_dir / "manifest.txt", sections)


def _execute_run(cfg: RunConfig, run_dir: Path):
    """Shared by run and sweep children; returns (exit code, metrics)."""
    run_dir.mkdir(parents=True, exist_ok=True)
    spec, grid = cfg.spec, cfg.grid
    solver = solve_qvi if spec.is_quasi() else solve_vi
    started = time.perf_counter()
    try:
        traj = solver(spec, grid, cfg.schedule, cfg.ctl,
                      snapshot_count=cfg.snapshots)
    except StiffnessCollapse as e:
        write_manifest(run_dir / "manifest.txt", [
            ("config", textwrap.indent(serialize_config(cfg.raw), "  ")),
            ("result", _kv_body((("status", "stiffness-collapse"),
                                 ("detail", str(e))))),
            ("timings", _kv_body(
                (("total", repr(time.perf_counter() - started)),)))])
        return EXIT_FAILURE, {"error": str(e)}
    solve_wall = time.perf_counter() - started
    reg = traj.reg_used
    report = estimate_ledger(traj, spec, reg, n_tests=LEDGER_TESTS,
                             seed=cfg.seed)
    timings = [("total", repr(time.perf_counter() - started)),
               ("solve", repr(solve_wall))]
    timings += [(f"stage_{i:03d}", repr(s.wall_time))
                for i, s in enumerate(traj.stages)]
    _write_run_outputs(run_dir, cfg, traj, report, timings)

    d2 = reg.delta ** 2
    metrics = {
        "penalty_mass": report.entry("penalty-mass-scaled").measured / d2,
        "grad_q2": report.entry("gradient-q2-scaled").measured / d2,
        "grad_q4": report.entry("gradient-q4-scaled").measured / d2,
        "violation": report.entry("constraint-violation").measured,
        "wall_time": solve_wall,
    }
    code = EXIT_TARGET_MISSED if traj.saturation is not None else EXIT_OK
    return code, metrics


def cmd_run(cfg: RunConfig, out_base: str) -> int:
    run_dir = Path(out_base) / cfg.prefix
    code, metrics = _execute_run(cfg, run_dir)
    if code == EXIT_FAILURE:
        print(f"stiffness collapse: {metrics.get('error', '')}",
              file=sys.stderr)
    elif code == EXIT_TARGET_MISSED:
        print(f"constraint saturation residual above target; see {run_dir}")
    else:
        print(f"run complete: {run_dir}")
    return code


# sweep ---------------------------------------------------------------------

SWEEP_AXES = ("delta", "eps_min", "n", "dt_init")


def _apply_axis(raw: dict, axis: str, value: str) -> dict:
    out = {sec: dict(kv) for sec, kv in raw.items()}
    if axis == "delta":
        v = repr(float(value))
        out["continuation"]["delta_init"] = v
        out["continuation"]["delta_min"] = v
    elif axis == "eps_min":
        out["continuation"]["eps_min"] = repr(float(value))
    elif axis == "n":
        out["domain"]["n"] = str(int(float(value)))
    elif axis == "dt_init":
        v = float(value)
        out["solver"]["dt_init"] = repr(v)
        out["solver"]["dt_max"] = repr(max(v, float(raw["solver"]["dt_max"])))
    else:
        raise ConfigError(
            f"unknown sweep axis {axis!r}; one of {', '.join(SWEEP_AXES)}")
    return out


def _sweep_child(payload):
    raw, axis, value, child_dir = payload
    cfg = build_config(_apply_axis(raw, axis, value))
    return _execute_run(cfg, Path(child_dir))


def cmd_sweep(cfg: RunConfig, axis: str, values, jobs: int,
              out_base: str) -> int:
    if not values:
        print("sweep: empty value list", file=sys.stderr)
        return EXIT_FAILURE
    base = Path(out_base) / f"{cfg.prefix}_sweep_{axis}"
    base.mkdir(parents=True, exist_ok=True)
    payloads = [(cfg.raw, axis, v, str(base / f"{axis}={v}")) for v in values]

    results = {}
    failed = False
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {p[2]: pool.submit(_sweep_child, p) for p in payloads}
        for v, fut in futures.items():
            err = fut.exception()
            if err is not None:
                print(f"sweep point {axis}={v} failed: {err}", file=sys.stderr)
                failed = True
                results[v] = None
            else:
                results[v] = fut.result()
    else:
        for payload in payloads:
            v = payload[2]
            try:
                results[v] = _sweep_child(payload)
            except Exception as err:
                print(f"sweep point {axis}={v} failed: {err}", file=sys.stderr)
                failed = True
                results[v] = None

    lines = ["value,penalty_mass,grad_q2,grad_q4,violation,wall_time,status"]
    for v in values:
        got = results[v]
        if got is None:
            lines.append(f"{v},nan,nan,nan,nan,nan,failed")
            continue
        code, m = got
        if code == EXIT_FAILURE:
            lines.append(f"{v},nan,nan,nan,nan,nan,failed")
            failed = True
            continue
        status = "saturated" if code == EXIT_TARGET_MISSED else "ok"
        lines.append(",".join((
            v, repr(m["penalty_mass"]), repr(m["grad_q2"]),
            repr(m["grad_q4"]), repr(m["violation"]),
            repr(m["wall_time"]), status)))
    _atomic_write(base / "table.csv", "\n".join(lines) + "\n")
    print(f"sweep table: {base / 'table.csv'}")
    return EXIT_FAILURE if failed else EXIT_OK


# steady ----------------------------------------------------------------------

def _fit_row(name: str, fit, floor) -> str:
    return ",".join((
        name, repr(float(fit.window[0])), repr(float(fit.window[1])),
        repr(float(fit.fitted_rate)), repr(float(fit.fitted_amplitude)),
        repr(float(fit.residual)),
        "-" if floor is None else repr(float(floor))))


def cmd_steady(cfg: RunConfig, out_base: str) -> int:
    run_dir = Path(out_base) / f"{cfg.prefix}_steady"
    run_dir.mkdir(parents=True, exist_ok=True)
    spec, grid = cfg.spec, cfg.grid
    started = time.perf_counter()
    try:
        result = solve_stationary(spec, grid, cfg.schedule, cfg.ctl,
                                  t_max=cfg.t_max, stall_tol=cfg.stall_tol)
    except StiffnessCollapse as e:
        print(f"stiffness collapse: {e}", file=sys.stderr)
        return EXIT_FAILURE
    traj = result.trajectory
    residual = stationary_residual(result.u_inf, spec, n_tests=64,
                                   seed=cfg.seed)

    fit_lines = ["name,window_lo,window_hi,rate,amplitude,misfit,floor"]
    fit_lines.append(_fit_row("decay", result.decay, None))
    for alpha in sorted({0.0, cfg.alpha}):
        fit = holder_convergence(traj, result.u_inf, alpha)
        floor = None if spec.mu is None else holder_floor(spec, alpha)
        fit_lines.append(_fit_row(f"holder-{alpha:g}", fit, floor))

    u_cap = float(np.max(np.abs(result.u_inf.values))) + 1.0
    hyp = data_hypotheses(spec, radius=u_cap, t_max=cfg.t_max)

    reg = traj.reg_used
    write_snapshot(run_dir / "stationary.csv", result.u_inf,
                   _node_threshold(spec, grid, result.u_inf.values),
                   Stepper(spec, grid, reg, cfg.ctl).multiplier_nodes(
                       result.u_inf))
    nu_lines = ["t,nu"]
    for t, nu in zip(traj.series["t"], traj.series["dw_dt_l1"]):
        nu_lines.append(f"{float(t)!r},{float(nu)!r}")
    _atomic_write(run_dir / "nu.csv", "\n".join(nu_lines) + "\n")

    result_body = _kv_body((
        ("status", "ok" if result.stalled else "not-stalled"),
        ("stalled", "true" if result.stalled else "false"),
        ("eps", repr(reg.epsilon)),
        ("delta", repr(reg.delta)),
        ("stationary_residual", repr(residual)),
        ("saturation", "-" if traj.saturation is None
         else repr(traj.saturation)),
    ))
    hyp_body = _kv_body((
        ("xi", repr(hyp["xi"])),
        ("eta", "-" if hyp["eta"] is None else repr(hyp["eta"])),
        ("radius", repr(u_cap)),
    ))
    write_manifest(run_dir / "manifest.txt", [
        ("config", textwrap.indent(serialize_config(cfg.raw), "  ")),
        ("result", result_body),
        ("stages", _stage_rows(traj.stages)),
        ("fits", "\n".join(fit_lines)),
        ("hypotheses", hyp_body),
        ("timings", _kv_body(
            (("total", repr(time.perf_counter() - started)),))),
    ])
    print(f"steady state: {run_dir}")
    if not result.stalled or traj.saturation is not None:
        return EXIT_TARGET_MISSED
    return EXIT_OK


# diagnose --------------------------------------------------------------------

def cmd_diagnose(run_dir: str) -> int:
    path = Path(run_dir)
    manifest = read_manifest(path / "manifest.txt")
    for needed in ("config", "result", "snapshots", "diagnostics"):
        if needed not in manifest:
            print(f"manifest missing [{needed}] section", file=sys.stderr)
            return EXIT_FAILURE
    cfg = build_config(parse_config_text(_dedent(manifest["config"])))
    result = _parse_kv(manifest["result"])
    reg = RegularizationParams(float(result["eps"]), float(result["delta"]))

    times = []
    snaps = []
    fnames = []
    for row in manifest["snapshots"].splitlines():
        _, t, fname = row.split(",")
        times.append(float(t))
        snaps.append(read_snapshot(path / fname, cfg.grid)["u"])
        fnames.append(fname)
    traj = Trajectory(grid=cfg.grid, times=times, snapshots=snaps,
                      series={}, reg_used=reg)
    report = estimate_ledger(traj, cfg.spec, reg, n_tests=LEDGER_TESTS,
                             seed=cfg.seed)
    report.context["files-sha256"] = _snapshot_digest(path, fnames)
    recomputed = serialize_report(report).strip("\n")
    stored = manifest["diagnostics"].strip("\n")
    if recomputed == stored:
        print("MATCH")
        return EXIT_OK
    for ours, theirs in zip(recomputed.splitlines(), stored.splitlines()):
        if ours != theirs:
            print(f"MISMATCH {_diff_name(ours, theirs)}")
            return EXIT_FAILURE
    print("MISMATCH entry-count")
    return EXIT_FAILURE


def _diff_name(ours: str, theirs: str) -> str:
    """Name the first check that disagrees between two report lines."""
    if not ours.startswith("#"):
        return ours.split("\t")[0]
    for a, b in zip(ours.split(), theirs.split()):
        if a != b:
            return a.split("=")[0]
    return "context"


def cmd_eval_expr(source: str, bindings: dict) -> int:
    try:
        expr = parse_expression(source)
        value = evaluate(expr, **bindings)
    except (ExpressionError, EvaluationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"{float(value):g}")
    return EXIT_OK


# entry point -------------------------------------------------------------------

def _load(args) -> RunConfig:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {args.config}: {e}") from e
    raw = parse_config_text(text)
    if getattr(args, "seed", None) is not None:
        raw["output"]["seed"] = str(args.seed)
    cfg = build_config(raw)
    if not cfg.validation.passed:
        summary = cfg.validation.summary()
        if args.strict:
            raise ConfigError(f"assumption validation failed:\n{summary}")
        print(f"warning: assumption validation failed\n{summary}",
              file=sys.stderr)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradcap",
        description="Gradient-constrained evolution solver and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override [output].seed")
        p.add_argument("--strict", action="store_true",
                       help="treat assumption-check failures as errors")

    common(sub.add_parser("run", help="evolution solve"))
    p_sweep = sub.add_parser("sweep", help="repeat a run along one axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma separated values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    common(sub.add_parser("steady", help="long-time stationary solve"))
    p_diag = sub.add_parser("diagnose", help="replay-check a run directory")
    p_diag.add_argument("run_dir")
    p_eval = sub.add_parser("eval-expr", help="evaluate one expression")
    p_eval.add_argument("expression")
    for var in "xytu":
        p_eval.add_argument(f"--{var}", type=float, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args)
            return cmd_run(cfg, args.out or cfg.directory)
        if args.command == "sweep":
            cfg = _load(args)
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            return cmd_sweep(cfg, args.axis, values, max(1, args.jobs),
                             args.out or cfg.directory)
        if args.command == "steady":
            cfg = _load(args)
            return cmd_steady(cfg, args.out or cfg.directory)
        if args.command == "diagnose":
            return cmd_diagnose(args.run_dir)
        if args.command == "eval-expr":
            bindings = {v: getattr(args, v) for v in "xytu"
                        if getattr(args, v) is not None}
            return cmd_eval_expr(args.expression, bindings)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
