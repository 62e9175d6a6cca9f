"""Continuation drivers: schedules, warm starts, and the two-limit sweep."""

import numpy as np
import pytest

from gradcap.continuation import (ContinuationSchedule, feasible_initial_values,
                                  ladder, solve_parabolic_qvi, solve_qvi,
                                  solve_vi)
from gradcap.diagnostics import constraint_violation
from gradcap.grid import Grid, ScalarField
from gradcap.model import make_spec, sup_bound_M
from gradcap.parabolic import StepControls, StiffnessCollapse

CTL = StepControls()


def sandpile(horizon=4.0, **kw):
    base = dict(dim=1, extents=((-1.0, 1.0),), horizon=horizon, f="1", g="1",
                u0="0", c1=0.0, c2=1.0)
    base.update(kw)
    return make_spec(**base)


@pytest.fixture(scope="module")
def pile_run():
    # one eps sweep at fixed delta, the workhorse config reused below
    grid = Grid(1, ((-1.0, 1.0),), (81,))
    traj = solve_parabolic_qvi(sandpile(), grid, ContinuationSchedule(), CTL,
                               delta=0.05, horizon=4.0)
    return traj


def test_schedule_validation():
    with pytest.raises(ValueError):
        ContinuationSchedule(eps_factor=1.0)
    with pytest.raises(ValueError):
        ContinuationSchedule(delta_factor=0.0)
    with pytest.raises(ValueError):
        ContinuationSchedule(eps_min=0.2, eps_init=0.1)
    with pytest.raises(ValueError):
        ContinuationSchedule(violation_target=0.0)


def test_ladder_hits_floor_exactly():
    vals = ladder(0.1, 0.5, 1e-3)
    assert vals == [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125,
                    0.0015625, 1e-3]
    assert ladder(0.1, 0.5, 0.1) == [0.1]


def test_zero_problem_constant_zero_violation():
    spec = sandpile(horizon=1.0, f="0", c2=0.0)
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    traj = solve_parabolic_qvi(spec, grid, ContinuationSchedule(eps_min=0.025),
                               CTL, delta=0.1, horizon=1.0)
    assert all(float(np.max(np.abs(s))) == 0.0 for s in traj.snapshots)
    assert all(rec.final_violation == 0.0 for rec in traj.stages)


def test_wide_threshold_schedule_independent():
    # constraint never active and no forcing: u0 is preserved under any schedule
    spec = sandpile(horizon=1.0, f="0", g="10", c2=0.0)
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    for sched in (ContinuationSchedule(eps_min=0.05),
                  ContinuationSchedule(eps_init=0.2, eps_factor=0.25,
                                       eps_min=0.0125, delta_init=0.05,
                                       delta_min=0.05)):
        traj = solve_qvi(spec, grid, sched, CTL, horizon=1.0)
        assert all(float(np.max(np.abs(s))) == 0.0 for s in traj.snapshots)


def test_sandpile_meets_violation_target(pile_run):
    assert pile_run.stages[-1].final_violation <= 0.02
    assert pile_run.saturation is None
    assert pile_run.reg_used.delta == 0.05
    assert pile_run.reg_used.epsilon < 0.01


def test_violation_decreases_with_eps(pile_run):
    viols = [rec.final_violation for rec in pile_run.stages]
    assert len(viols) >= 3
    for a, b in zip(viols, viols[1:]):
        assert b <= 1.1 * a


def test_warm_start_first_step_stays_cheap(pile_run):
    # the carried seed must never make the first implicit solve of a stage
    # noticeably harder than an ordinary step of the stage before it
    for prev, rec in zip(pile_run.stages, pile_run.stages[1:]):
        assert rec.first_picard <= prev.mean_picard + 5


def test_violation_mass_bound(pile_run):
    spec = sandpile()
    mx, mass = constraint_violation(pile_run.final(), spec)
    assert mx == pytest.approx(pile_run.stages[-1].final_violation, abs=1e-12)
    bound = pile_run.grid.domain_volume * 0.01 * 2.0
    assert mass <= bound


def test_trajectory_invariants(pile_run):
    for snap in pile_run.snapshots:
        assert snap[0] == 0.0 and snap[-1] == 0.0
    times = np.asarray(pile_run.times)
    assert np.all(np.diff(times) > 0.0)
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(4.0, abs=1e-9)


def test_qvi_vi_identical_for_static_threshold():
    spec = sandpile(horizon=1.0)
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    sched = ContinuationSchedule(eps_min=0.01, delta_min=0.025)
    a = solve_qvi(spec, grid, sched, CTL, horizon=1.0)
    b = solve_vi(spec, grid, sched, CTL, horizon=1.0)
    assert a.times == b.times
    assert all(np.array_equal(x, y) for x, y in zip(a.snapshots, b.snapshots))
    assert all(np.array_equal(a.series[k], b.series[k]) for k in a.series)
    assert [(r.eps, r.delta) for r in a.stages] == \
           [(r.eps, r.delta) for r in b.stages]


def test_vi_rejects_state_dependent_threshold():
    spec = sandpile(horizon=1.0, g="1-0.5*u")
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    with pytest.raises(ValueError, match="independent"):
        solve_vi(spec, grid, ContinuationSchedule(), CTL)


def test_growing_pile_stays_under_envelope():
    # by comparison u <= t*max f, by feasibility u <= dist(x, boundary)
    grid = Grid(1, ((-1.0, 1.0),), (81,))
    traj = solve_qvi(sandpile(), grid, ContinuationSchedule(), CTL, horizon=0.5)
    x = grid.axis_coords(0)
    envelope = np.minimum(0.5, 1.0 - np.abs(x))
    u = traj.snapshots[-1]
    assert float(np.min(u)) >= -1e-12
    assert float(np.max(u - envelope)) <= 0.02


def test_time_derivative_norm_bounded_in_delta():
    # L2-in-time norm of dw/dt may not blow up as the viscosity shrinks
    grid = Grid(1, ((-1.0, 1.0),), (81,))
    norms = []
    for delta in (0.1, 0.05, 0.025):
        traj = solve_parabolic_qvi(sandpile(), grid, ContinuationSchedule(),
                                   CTL, delta=delta, horizon=4.0)
        norms.append(traj.stages[-1].dt_l2)
    assert max(norms) / min(norms) <= 3.0


def test_convective_run_completes_within_bounds():
    spec = make_spec(dim=1, extents=((-1.0, 1.0),), horizon=1.0,
                     phi=("u^2/2",), f="1-u", g="1", u0="0",
                     c1=2.0, c2=2.0, mu=1.0)
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    traj = solve_vi(spec, grid, ContinuationSchedule(delta_min=0.0125), CTL,
                    horizon=1.0)
    mx, _ = constraint_violation(traj.final(), spec)
    assert mx <= 0.02
    peak = max(float(np.max(np.abs(s))) for s in traj.snapshots)
    assert peak <= sup_bound_M(spec)


def test_collapse_reports_stage_context():
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    bad = StepControls(dt_init=0.01, dt_min=0.009, picard_tol=1e-15,
                       picard_max=2)
    with pytest.raises(StiffnessCollapse,
                       match=r"stage eps=0\.1 delta=0\.1"):
        solve_parabolic_qvi(sandpile(horizon=1.0), grid,
                            ContinuationSchedule(), bad, delta=0.1,
                            horizon=1.0)


def test_unreachable_target_records_saturation():
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    sched = ContinuationSchedule(eps_min=0.05, violation_target=1e-4)
    traj = solve_parabolic_qvi(sandpile(horizon=1.0), grid, sched, CTL,
                               delta=0.1, horizon=1.0)
    assert traj.saturation is not None
    assert traj.saturation == traj.stages[-1].final_violation
    assert traj.saturation > 1e-4


def test_stall_cuts_stages_short():
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    traj = solve_parabolic_qvi(sandpile(horizon=50.0), grid,
                               ContinuationSchedule(eps_min=0.0125), CTL,
                               delta=0.05, horizon=50.0, stall_tol=1e-10)
    assert traj.stalled
    assert all(rec.stalled for rec in traj.stages)
    assert traj.times[-1] < 10.0  # steady well before the nominal horizon


def test_infeasible_datum_is_rescaled():
    spec = sandpile(horizon=1.0, f="0", u0="2*(1-abs(x))", c2=0.0)
    grid = Grid(1, ((-1.0, 1.0),), (41,))
    vals = feasible_initial_values(spec, grid, CTL)
    mx, _ = constraint_violation(ScalarField(grid, vals), spec)
    assert mx <= 1e-12
    assert float(np.max(vals)) <= 1.0 + 1e-12
