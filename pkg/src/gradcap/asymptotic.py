"""Long-time behaviour: stationary limits, decay-rate and contraction
measurements, Holder-distance convergence fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .continuation import ContinuationSchedule, Trajectory, solve_qvi, solve_vi
from .diagnostics import (_ResidualKernel, _bump_values, face_threshold,
                          feasibility_factor)
from .expr import Expression, evaluate, parse_expression, partial_u
from .grid import (Grid, ScalarField, distance_to_boundary,
                   face_gradient_magnitude)
from .model import ProblemSpec
from .parabolic import StepControls


@dataclass
class DecayFit:
    window: tuple                 # (t_start, t_end) requested
    samples: tuple                # (times, values) actually entering the fit
    fitted_rate: float
    fitted_amplitude: float
    residual: float               # rms misfit of log values


def _nu_series(source):
    if isinstance(source, Trajectory):
        return (np.asarray(source.series["t"], dtype=float),
                np.asarray(source.series["dw_dt_l1"], dtype=float))
    t, v = source
    return np.asarray(t, dtype=float), np.asarray(v, dtype=float)


def decay_rate(source, window: tuple | None = None) -> DecayFit:
    """Least-squares exponential rate of a positive decaying series.

    source: a Trajectory (uses its per-step increment-rate column) or a
    (times, values) pair.  Nonpositive values are dropped, which shrinks the
    window when the tail has already hit the noise floor.
    """
    t, v = _nu_series(source)
    if t.size == 0:
        raise ValueError("empty series")
    if window is None:
        window = (float(t[0] + 0.2 * (t[-1] - t[0])), float(t[-1]))
    mask = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12) & (v > 0.0)
    tt, vv = t[mask], v[mask]
    if tt.size < 2:
        raise ValueError("fewer than two positive samples in the fit window")
    slope, intercept = np.polyfit(tt, np.log(vv), 1)
    misfit = np.log(vv) - (slope * tt + intercept)
    return DecayFit(window=(float(window[0]), float(window[1])),
                    samples=(tt, vv),
                    fitted_rate=float(-slope),
                    fitted_amplitude=float(np.exp(intercept)),
                    residual=float(np.sqrt(np.mean(misfit ** 2))))


def _trivial_fit(t, v) -> DecayFit:
    return DecayFit(window=(float(t[0]) if len(t) else 0.0,
                            float(t[-1]) if len(t) else 0.0),
                    samples=(np.asarray(t, dtype=float),
                             np.asarray(v, dtype=float)),
                    fitted_rate=math.inf, fitted_amplitude=0.0, residual=0.0)


@dataclass
class StationaryResult:
    u_inf: ScalarField
    decay: DecayFit
    trajectory: Trajectory
    stalled: bool

    def __iter__(self):
        # unpacks as (u_inf, decay); the trajectory rides along as attribute
        return iter((self.u_inf, self.decay))


def solve_stationary(spec: ProblemSpec, grid: Grid,
                     schedule: ContinuationSchedule, ctl: StepControls,
                     t_max: float = 16.0,
                     stall_tol: float = 1e-5) -> StationaryResult:
    """Integrate until the increment rate nu(t) stalls; fit its decay.

    Requires an autonomous flux and at least one decay hypothesis: either a
    reaction damping rate mu or an upper bound on the threshold.  Runs that
    never stall within t_max come back flagged, not raised.
    """
    if any(p.uses("t") for p in spec.phi):
        raise ValueError("stationary limit needs a time-independent flux")
    if spec.mu is None and spec.lambda_max is None:
        raise ValueError("set mu or lambda_max; no decay hypothesis holds")
    traj = solve_qvi(spec, grid, schedule, ctl, horizon=t_max,
                     stall_tol=stall_tol)
    t = traj.series["t"]
    nu = traj.series["dw_dt_l1"]
    if not np.any(nu > 0.0):
        fit = _trivial_fit(t, nu)
    else:
        fit = decay_rate(traj)
    return StationaryResult(u_inf=traj.final(), decay=fit, trajectory=traj,
                            stalled=traj.stalled)


def stationary_residual(u_inf: ScalarField, spec: ProblemSpec,
                        n_tests: int = 64, seed: int = 0) -> float:
    """Weak-form residual of the stationary inequality at u_inf.

    Same sampling as the evolution residual with the time-derivative term
    dropped; the forcing is f_inf when set, otherwise f frozen at the final
    time.
    """
    grid = u_inf.grid
    rng = np.random.default_rng(seed)
    profile = distance_to_boundary(grid).values
    gfs = face_threshold(u_inf, spec)
    f_expr = spec.f_inf if spec.f_inf is not None else spec.f
    kernel = _ResidualKernel(spec, u_inf, spec.horizon, None, f_expr)
    worst = math.inf
    # same sampling as the evolution residual: the maximal boundary-distance
    # profile first, then the random bumps
    raws = [profile] + [_bump_values(grid, rng, profile) for _ in range(n_tests)]
    for raw in raws:
        mags = face_gradient_magnitude(ScalarField(grid, raw))
        worst = min(worst, kernel.evaluate(feasibility_factor(mags, gfs) * raw))
    return float(worst)


@dataclass
class ContractionResult:
    measured: float               # L1 distance of the two states at t_probe
    bound: float                  # Gronwall envelope e^{L_f t} * initial gap
    mu_bound: float | None        # decay envelope when mu is set
    times: np.ndarray
    distances: np.ndarray

    def __iter__(self):
        return iter((self.measured, self.bound))


def _reaction_lipschitz(spec: ProblemSpec, u_cap: float, t_probe: float) -> float:
    xs = [np.linspace(a, b, 65) for a, b in spec.extents]
    if spec.dim == 2:
        grids = np.meshgrid(xs[0], xs[1], indexing="ij")
        env = {"x": grids[0], "y": grids[1]}
    else:
        env = {"x": xs[0]}
    ts = np.linspace(0.0, t_probe, 17) if spec.f.uses("t") else [0.0]
    us = np.linspace(-u_cap, u_cap, 33)
    worst = 0.0
    for t in ts:
        for u in us:
            d = partial_u(spec.f, t=float(t), u=float(u), **env)
            worst = max(worst, float(np.max(np.abs(d))))
    return worst


def contraction_test(spec: ProblemSpec, grid: Grid,
                     schedule: ContinuationSchedule, ctl: StepControls,
                     u0_a, u0_b, t_probe: float = 2.0) -> ContractionResult:
    """Distance growth of two runs differing only in the initial datum.

    Threshold must not depend on u; with damping (mu set) the decayed
    envelope is reported alongside the Gronwall bound.
    """
    if spec.is_quasi():
        raise ValueError("contraction check needs a u-independent threshold")

    def as_expr(e):
        return e if isinstance(e, Expression) else parse_expression(e)

    spec_a = replace(spec, u0=as_expr(u0_a))
    spec_b = replace(spec, u0=as_expr(u0_b))
    traj_a = solve_vi(spec_a, grid, schedule, ctl, horizon=t_probe)
    traj_b = solve_vi(spec_b, grid, schedule, ctl, horizon=t_probe)

    vols = grid.node_volumes()
    count = min(len(traj_a.snapshots), len(traj_b.snapshots))
    distances = np.array([
        float(np.sum(vols * np.abs(traj_a.snapshots[i] - traj_b.snapshots[i])))
        for i in range(count)])
    times = np.asarray(traj_a.times[:count], dtype=float)

    u_cap = max(float(np.max(np.abs(s)))
                for t in (traj_a, traj_b) for s in t.snapshots) + 1.0
    lip = _reaction_lipschitz(spec, u_cap, t_probe)
    d0 = distances[0]
    measured = float(distances[-1])
    bound = float(math.exp(lip * t_probe) * d0)
    mu_bound = (float(math.exp(-spec.mu * t_probe) * d0)
                if spec.mu is not None else None)
    return ContractionResult(measured=measured, bound=bound,
                             mu_bound=mu_bound, times=times,
                             distances=distances)


def _pair_offsets(grid: Grid, reach: int = 5):
    """Axis offsets of node pairs within reach*h, with their distances."""
    h = grid.h
    cap = reach * max(h) + 1e-12
    offs = []
    if grid.dim == 1:
        for k in range(1, reach + 1):
            d = k * h[0]
            if d <= cap:
                offs.append(((k,), d))
        return offs
    for di in range(0, reach + 1):
        for dj in range(-reach, reach + 1):
            if di == 0 and dj <= 0:
                continue
            d = math.hypot(di * h[0], dj * h[1])
            if d <= cap:
                offs.append(((di, dj), d))
    return offs


def _shifted_diff(e: np.ndarray, off) -> np.ndarray:
    if len(off) == 1:
        k = off[0]
        return e[k:] - e[:-k]
    di, dj = off
    if dj >= 0:
        a = e[di:, dj:] if dj else e[di:, :]
        b = e[:e.shape[0] - di, :e.shape[1] - dj]
    else:
        a = e[di:, :dj]
        b = e[:e.shape[0] - di, -dj:]
    return a - b


def holder_distance(e: np.ndarray, grid: Grid, alpha: float) -> float:
    """sup|e| plus, for alpha>0, the discrete alpha-Holder seminorm over
    node pairs within five spacings."""
    val = float(np.max(np.abs(e)))
    if alpha > 0.0:
        semi = 0.0
        for off, dist in _pair_offsets(grid):
            diff = _shifted_diff(e, off)
            if diff.size:
                semi = max(semi, float(np.max(np.abs(diff))) / dist ** alpha)
        val += semi
    return val


def holder_convergence(traj: Trajectory, u_inf: ScalarField,
                       alpha: float) -> DecayFit:
    """Exponential-rate fit of t -> d_alpha(u(t), u_inf) over the snapshots."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    grid = traj.grid
    d = [holder_distance(s - u_inf.values, grid, alpha)
         for s in traj.snapshots]
    t = np.asarray(traj.times, dtype=float)
    if max(d) <= 1e-13:
        return _trivial_fit(t, d)
    return decay_rate((t, d))


def holder_floor(spec: ProblemSpec, alpha: float,
                 gamma: float = math.inf) -> float:
    """Guaranteed asymptotic rate (1-alpha)/(dim+1) * min(mu, gamma)."""
    if spec.mu is None:
        raise ValueError("floor needs the reaction damping rate mu")
    return (1.0 - alpha) / (spec.dim + 1) * min(spec.mu, gamma)


def data_hypotheses(spec: ProblemSpec, radius: float, t_max: float,
                    samples: int = 33) -> dict:
    """Sampled sizes of the time-variation and forcing-limit hypotheses.

    xi: integral over the domain of sup over |u| <= radius of |df/dt|,
    maximised over [0, t_max].  eta: same with |f - f_inf| (None when f_inf
    is unset).  Reported, never asserted: these qualify the data, not us.
    """
    xs = [np.linspace(a, b, 65) for a, b in spec.extents]
    steps = [(b - a) / 64 for a, b in spec.extents]
    if spec.dim == 2:
        mesh = np.meshgrid(xs[0], xs[1], indexing="ij")
        env = {"x": mesh[0], "y": mesh[1]}
        shape = mesh[0].shape
    else:
        env = {"x": xs[0]}
        shape = xs[0].shape
    us = np.linspace(-radius, radius, samples)
    ts = np.linspace(0.0, t_max, 17)
    ht = 1e-6 * max(1.0, t_max)

    def integral(vals: np.ndarray) -> float:
        # trapezoid on the uniform sampling lattice
        for axis in range(spec.dim - 1, -1, -1):
            ends = np.take(vals, 0, axis=axis) + np.take(vals, -1, axis=axis)
            vals = (vals.sum(axis=axis) - 0.5 * ends) * steps[axis]
        return float(vals)

    xi = 0.0
    eta = None if spec.f_inf is None else 0.0
    for t in ts:
        sup_dt = None
        sup_gap = None
        for u in us:
            hi = np.broadcast_to(np.asarray(
                evaluate(spec.f, t=float(t + ht), u=float(u), **env),
                dtype=float), shape)
            lo = np.broadcast_to(np.asarray(
                evaluate(spec.f, t=float(max(t - ht, 0.0)), u=float(u), **env),
                dtype=float), shape)
            dt_f = np.abs(hi - lo) / (ht + min(t, ht))
            sup_dt = dt_f if sup_dt is None else np.maximum(sup_dt, dt_f)
            if eta is not None:
                f_now = np.broadcast_to(np.asarray(
                    evaluate(spec.f, t=float(t), u=float(u), **env),
                    dtype=float), shape)
                f_lim = np.broadcast_to(np.asarray(
                    evaluate(spec.f_inf, t=float(t), u=float(u), **env),
                    dtype=float), shape)
                gap = np.abs(f_now - f_lim)
                sup_gap = gap if sup_gap is None else np.maximum(sup_gap, gap)
        xi = max(xi, integral(sup_dt))
        if eta is not None:
            eta = max(eta, integral(sup_gap))
    return {"xi": xi, "eta": eta}
