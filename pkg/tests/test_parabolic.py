"""Stepper behavior: stationarity, comparison bounds, CFL, multiplier laws."""

import numpy as np
import pytest

from gradcap.grid import Grid, ScalarField, field_from_callable, inner_product
from gradcap.model import make_spec, sup_bound_M
from gradcap.parabolic import (StepControls, Stepper, StiffnessCollapse,
                               cfl_dt, initial_state, step)
from gradcap.penalty import RegularizationParams


def _run_to(stepper, state, t_end):
    while state.t < t_end - 1e-12:
        state = stepper.advance(state, t_end=t_end)
    return state


def test_controls_validate():
    with pytest.raises(ValueError):
        StepControls(cfl=0.0)
    with pytest.raises(ValueError):
        StepControls(cfl=0.95)
    with pytest.raises(ValueError):
        StepControls(dt_init=1e-10, dt_min=1e-9)
    with pytest.raises(ValueError):
        StepControls(picard_max=0)


def test_zero_data_is_stationary():
    # f=0, Phi=0, u0=0: the discrete steady point, preserved exactly
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="0", g="1", u0="0")
    grid = Grid(1, ((0.0, 1.0),), (21,))
    ctl = StepControls()
    state = initial_state(spec, grid, ctl)
    out = step(state, spec, RegularizationParams(0.05, 0.05), ctl)
    assert float(np.max(np.abs(out.w.values))) <= 1e-10


def test_feasible_datum_drifts_at_viscosity_rate():
    # with delta > 0 a curved feasible datum is NOT stationary: the equation
    # keeps the artificial diffusion delta*k*grad(w), so one step moves w by
    # about dt*delta*|lap u0|; the drift must vanish linearly with delta
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="0", g="1",
                     u0="0.5*(0.5-abs(x-0.5))")
    grid = Grid(1, ((0.0, 1.0),), (21,))
    ctl = StepControls()
    drifts = []
    for delta in (0.01, 0.001):
        state = initial_state(spec, grid, ctl)
        out = Stepper(spec, grid, RegularizationParams(0.05, delta), ctl).advance(state)
        drifts.append(float(np.max(np.abs(out.w.values - state.w.values))))
    assert drifts[0] > 1e-6  # genuinely moves
    assert drifts[1] <= 0.15 * drifts[0]  # ~ linear in delta


def test_comparison_principle_bound():
    # u0=0, f=1: 0 <= w(t) <= t * max f
    spec = make_spec(dim=1, extents=((-1.0, 1.0),), f="1", g="1", u0="0",
                     c1=0.0, c2=1.0)
    grid = Grid(1, ((-1.0, 1.0),), (81,))
    ctl = StepControls()
    stepper = Stepper(spec, grid, RegularizationParams(0.05, 0.05), ctl)
    state = _run_to(stepper, initial_state(spec, grid, ctl), 0.1)
    assert float(np.min(state.w.values)) >= -1e-12
    assert float(np.max(state.w.values)) <= 0.1 + 1e-9
    assert float(np.max(np.abs(state.w.values))) <= sup_bound_M(spec) + 1e-3


def test_heat_equation_limit():
    # inactive constraint: the scheme is the heat equation with conductivity
    # delta; compare against exp(-delta pi^2 t) sin(pi x)
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="0", g="10",
                     u0="sin(3.141592653589793*x)")
    grid = Grid(1, ((0.0, 1.0),), (101,))
    ctl = StepControls(dt_init=1e-4, dt_min=1e-6, dt_max=1e-4)
    stepper = Stepper(spec, grid, RegularizationParams(0.05, 0.5), ctl)
    state = _run_to(stepper, initial_state(spec, grid, ctl), 0.1)
    x = grid.node_coords()[0]
    exact = np.exp(-0.5 * np.pi**2 * 0.1) * np.sin(np.pi * x)
    assert float(np.max(np.abs(state.w.values - exact))) <= 1e-3


def test_quadratic_energy_decreases():
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="0", g="10",
                     u0="sin(3.141592653589793*x)")
    grid = Grid(1, ((0.0, 1.0),), (41,))
    ctl = StepControls()
    stepper = Stepper(spec, grid, RegularizationParams(0.05, 0.5), ctl)
    state = initial_state(spec, grid, ctl)
    energy = inner_product(state.w, state.w)
    for _ in range(30):
        state = stepper.advance(state)
        here = inner_product(state.w, state.w)
        assert here <= energy + 1e-12
        energy = here
        assert np.all(state.w.values[grid.boundary_mask()] == 0.0)


def test_cfl_goldens():
    ctl = StepControls(cfl=0.5)
    grid = Grid(1, ((-1.0, 1.0),), (81,))  # h = 0.025

    quiet = make_spec(dim=1, extents=((-1.0, 1.0),), phi=("0",), f="0")
    state = initial_state(quiet, grid, ctl)
    assert cfl_dt(state, quiet, ctl) == ctl.dt_max

    burgers = make_spec(dim=1, extents=((-1.0, 1.0),), phi=("u^2/2",), f="0",
                        u0="1-abs(x)", c1=2.0, c2=2.0)
    state = initial_state(burgers, grid, ctl)
    assert cfl_dt(state, burgers, ctl) <= 0.0125 + 1e-9

    stiff = make_spec(dim=1, extents=((-1.0, 1.0),), f="1-10*u", c1=10.0,
                      c2=1.0)
    state = initial_state(stiff, grid, ctl)
    assert cfl_dt(state, stiff, ctl) <= 0.05 + 1e-9


def test_multiplier_floor_and_penalty_value():
    grid = Grid(1, ((0.0, 1.0),), (21,))
    spec = make_spec(dim=1, extents=((0.0, 1.0),), g="1")
    reg = RegularizationParams(0.1, 0.05)
    stepper = Stepper(spec, grid, reg, StepControls())

    lam = stepper.multiplier_faces(ScalarField(grid, np.zeros(21)))[0]
    assert np.allclose(lam, reg.delta, atol=1e-15)

    # tent with slope^2 - 1 = 2 eps on every face -> multiplier delta e^2
    slope = np.sqrt(1.0 + 2.0 * reg.epsilon)
    tent = field_from_callable(grid, lambda x: slope * (0.5 - np.abs(x - 0.5)))
    lam = stepper.multiplier_faces(tent)[0]
    assert np.allclose(lam, reg.delta * np.e**2, rtol=1e-12)
    assert np.all(lam >= reg.delta)


def test_active_step_uses_inner_passes():
    # forcing into the constraint makes single linear passes insufficient
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="1", g="1",
                     u0="0.9*(0.5-abs(x-0.5))", c1=0.0, c2=1.0)
    grid = Grid(1, ((0.0, 1.0),), (21,))
    ctl = StepControls()
    stepper = Stepper(spec, grid, RegularizationParams(0.01, 0.1), ctl)
    state = initial_state(spec, grid, ctl)
    most = 0
    for _ in range(30):
        state = stepper.advance(state)
        most = max(most, state.picard_iters)
    assert most >= 2
    assert float(np.max(np.abs(state.w.values))) <= sup_bound_M(spec) + 1e-3


def test_clamped_start_collapses():
    # |grad u0|^2 - G^2 = 8 > 700*eps: every retry clamps, dt drains away
    spec = make_spec(dim=1, extents=((0.0, 1.0),), f="0", g="1",
                     u0="3*(0.5-abs(x-0.5))")
    grid = Grid(1, ((0.0, 1.0),), (21,))
    ctl = StepControls()
    stepper = Stepper(spec, grid, RegularizationParams(0.01, 0.05), ctl)
    state = initial_state(spec, grid, ctl)
    with pytest.raises(StiffnessCollapse, match="penalty clamp"):
        stepper.advance(state)


def test_initial_state_zero_boundary():
    spec = make_spec(dim=1, extents=((0.0, 1.0),), u0="1")  # nonzero sample
    grid = Grid(1, ((0.0, 1.0),), (11,))
    state = initial_state(spec, grid, StepControls())
    assert state.w.values[0] == 0.0 and state.w.values[-1] == 0.0
    assert np.all(state.w.values[1:-1] == 1.0)
