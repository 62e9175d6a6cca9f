"""Regularization continuation: sweep eps down at fixed delta, then delta.

Every stage re-integrates the full time interval from the same (feasibility
rescaled) initial datum; warm starting reuses the previous stage's final
state as the Picard guess of the next stage's first implicit solve.  A stage
sweep stops early once the worst face violation of the final state drops
below the target.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import face_threshold, rescale_into
from .grid import Grid, ScalarField, face_gradient_magnitude, face_total
from .model import ProblemSpec, sup_bound_M
from .parabolic import (StepControls, Stepper, StepperState, StiffnessCollapse,
                        initial_state)
from .penalty import RegularizationParams, penalty_k


@dataclass(frozen=True)
class ContinuationSchedule:
    eps_init: float = 0.1
    eps_factor: float = 0.5
    eps_min: float = 1e-3
    delta_init: float = 0.1
    delta_factor: float = 0.5
    delta_min: float = 1e-3
    violation_target: float = 1e-2
    warm_start: bool = True
    g_smoothing: int = 0

    def __post_init__(self):
        for name in ("eps", "delta"):
            init = getattr(self, f"{name}_init")
            factor = getattr(self, f"{name}_factor")
            floor = getattr(self, f"{name}_min")
            if not 0.0 < factor < 1.0:
                raise ValueError(f"{name}_factor must lie in (0, 1)")
            if not 0.0 < floor <= init < 1.0:
                raise ValueError(f"need 0 < {name}_min <= {name}_init < 1")
        if self.violation_target <= 0.0:
            raise ValueError("violation_target must be positive")


def ladder(init: float, factor: float, floor: float) -> list:
    """Descending schedule ending exactly at the floor."""
    vals = []
    v = init
    while v > floor * (1.0 + 1e-12):
        vals.append(v)
        v *= factor
    vals.append(floor)
    return vals


@dataclass
class StageRecord:
    eps: float
    delta: float
    steps: int
    final_violation: float
    stalled: bool
    wall_time: float
    first_picard: int
    mean_picard: float
    clamp_events: int
    dt_l2: float            # L2-in-time, L2-in-space norm of (w+ - w)/dt


@dataclass
class Trajectory:
    grid: Grid
    times: list
    snapshots: list               # node arrays, one per recorded instant
    series: dict                  # per-step columns of the final stage
    reg_used: RegularizationParams = RegularizationParams(0.1, 0.1)
    stages: list = field(default_factory=list)
    horizon: float = 0.0
    stalled: bool = False
    saturation: float | None = None   # achieved violation when target unmet

    def field_at(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.snapshots[i])

    def final(self) -> ScalarField:
        return ScalarField(self.grid, self.snapshots[-1])


SERIES_COLUMNS = ("t", "dt", "picard", "max_w", "dw_dt_l1",
                  "penalty_mass", "max_violation", "max_multiplier")


def feasible_initial_values(spec: ProblemSpec, grid: Grid,
                            ctl: StepControls) -> np.ndarray:
    """Nodal u0, pulled into the constraint set when sampling broke it."""
    w0 = initial_state(spec, grid, ctl).w
    g_faces = face_threshold(w0, spec)
    mags = face_gradient_magnitude(w0)
    worst = max(float(np.max(m - g)) for m, g in zip(mags, g_faces))
    if worst > 1e-12:
        w0 = rescale_into(w0, g_faces, spec.lambda_min)
    return w0.values


def _integrate_stage(spec, grid, reg, ctl, horizon, snap_times, stall_tol,
                     w0_values, picard_seed, m_hat):
    stepper = Stepper(spec, grid, reg, ctl, m_cap=m_hat)
    state = StepperState(w=ScalarField(grid, w0_values.copy()), t=0.0,
                         dt=ctl.dt_init)
    vols = grid.node_volumes()
    omega = grid.domain_volume
    g_static = None if spec.g.uses("u") else face_threshold(state.w, spec)

    times = [0.0]
    snaps = [w0_values.copy()]
    rows = {name: [] for name in SERIES_COLUMNS}
    next_snap = 1
    stalled = False
    first_picard = 0
    picard_total = 0
    dt_l2_acc = 0.0
    started = time.perf_counter()

    while state.t < horizon - 1e-12:
        prev_vals = state.w.values
        prev_t = state.t
        try:
            state = stepper.advance(state, t_end=horizon,
                                    picard_seed=picard_seed if state.steps == 0 else None)
        except StiffnessCollapse as exc:
            raise StiffnessCollapse(
                f"{exc} [stage eps={reg.epsilon:g} delta={reg.delta:g} "
                f"t={state.t:g}]", exc.state) from None
        dt_used = state.t - prev_t
        diff = state.w.values - prev_vals
        nu = float(np.sum(vols * np.abs(diff))) / dt_used
        dt_l2_acc += dt_used * float(np.sum(vols * (diff / dt_used) ** 2))

        mags = face_gradient_magnitude(state.w)
        g_raw = g_static if g_static is not None else face_threshold(state.w, spec)
        violation = max(float(np.max(m - g)) for m, g in zip(mags, g_raw))
        violation = max(violation, 0.0)
        # mass and multiplier use the smoothed threshold when smoothing is on
        ks = [penalty_k(s, reg.epsilon) for s in stepper.penalty_argument(state.w)]
        mass = face_total(grid, ks)
        peak_mult = reg.delta * max(float(np.max(k)) for k in ks)

        if state.steps == 1:
            first_picard = state.picard_iters
        picard_total += state.picard_iters
        for name, value in zip(SERIES_COLUMNS, (
                state.t, dt_used, state.picard_iters,
                float(np.max(np.abs(state.w.values))), nu, mass, violation,
                peak_mult)):
            rows[name].append(float(value))

        if next_snap < len(snap_times) and state.t >= snap_times[next_snap] - 1e-12:
            times.append(state.t)
            snaps.append(state.w.values.copy())
            while next_snap < len(snap_times) and state.t >= snap_times[next_snap] - 1e-12:
                next_snap += 1

        if stall_tol is not None and nu < stall_tol * omega:
            stalled = True
            break

    if times[-1] != state.t:
        times.append(state.t)
        snaps.append(state.w.values.copy())

    series = {name: np.asarray(vals) for name, vals in rows.items()}
    record = StageRecord(
        eps=reg.epsilon, delta=reg.delta, steps=state.steps,
        final_violation=series["max_violation"][-1] if state.steps else 0.0,
        stalled=stalled, wall_time=time.perf_counter() - started,
        first_picard=first_picard,
        mean_picard=picard_total / state.steps if state.steps else 0.0,
        clamp_events=state.clamp_events, dt_l2=float(np.sqrt(dt_l2_acc)))
    return times, snaps, series, record, state.w.values, stalled


def solve_parabolic_qvi(spec: ProblemSpec, grid: Grid,
                        schedule: ContinuationSchedule, ctl: StepControls,
                        delta: float | None = None, horizon: float | None = None,
                        stall_tol: float | None = None, snapshot_count: int = 50,
                        seed_values: np.ndarray | None = None,
                        m_hat: float | None = None) -> Trajectory:
    """Sweep eps down at fixed delta (delta_init unless given)."""
    d = schedule.delta_init if delta is None else delta
    horizon = spec.horizon if horizon is None else horizon
    m_hat = sup_bound_M(spec) if m_hat is None else m_hat
    w0 = feasible_initial_values(spec, grid, ctl)
    snap_times = np.linspace(0.0, horizon, snapshot_count + 2)

    traj = None
    records = []
    prev_final = seed_values
    for eps in ladder(schedule.eps_init, schedule.eps_factor, schedule.eps_min):
        reg = RegularizationParams(eps, d, g_smoothing=schedule.g_smoothing)
        seed = prev_final if schedule.warm_start else None
        times, snaps, series, record, final_vals, stalled = _integrate_stage(
            spec, grid, reg, ctl, horizon, snap_times, stall_tol, w0, seed, m_hat)
        records.append(record)
        prev_final = final_vals
        traj = Trajectory(grid=grid, times=times, snapshots=snaps, series=series,
                          reg_used=reg, stages=records, horizon=horizon,
                          stalled=stalled)
        if record.final_violation <= schedule.violation_target:
            break
    if traj.stages[-1].final_violation > schedule.violation_target:
        # constraint saturation residual: target unmet at the smallest eps
        traj.saturation = traj.stages[-1].final_violation
    return traj


def solve_qvi(spec: ProblemSpec, grid: Grid, schedule: ContinuationSchedule,
              ctl: StepControls, horizon: float | None = None,
              stall_tol: float | None = None,
              snapshot_count: int = 50) -> Trajectory:
    """Outer loop over delta descending; returns the final-stage trajectory."""
    m_hat = sup_bound_M(spec)
    records = []
    traj = None
    seed = None
    for d in ladder(schedule.delta_init, schedule.delta_factor, schedule.delta_min):
        traj = solve_parabolic_qvi(
            spec, grid, schedule, ctl, delta=d, horizon=horizon,
            stall_tol=stall_tol, snapshot_count=snapshot_count,
            seed_values=seed, m_hat=m_hat)
        records.extend(traj.stages)
        seed = traj.snapshots[-1]
    traj.stages = records
    return traj


def solve_vi(spec: ProblemSpec, grid: Grid, schedule: ContinuationSchedule,
             ctl: StepControls, horizon: float | None = None,
             stall_tol: float | None = None,
             snapshot_count: int = 50) -> Trajectory:
    """Constraint threshold independent of u; same path as solve_qvi.

    The per-stage records carry the L2-in-time norm of the discrete time
    derivative, which stays bounded as delta shrinks.
    """
    if spec.is_quasi():
        raise ValueError("solve_vi requires a threshold independent of u")
    return solve_qvi(spec, grid, schedule, ctl, horizon=horizon,
                     stall_tol=stall_tol, snapshot_count=snapshot_count)
