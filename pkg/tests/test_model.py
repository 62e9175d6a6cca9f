"""Problem-data validation and the sup bound constant."""

import math

import numpy as np
import pytest

from gradcap.model import make_spec, sup_bound_M, sup_bound_value, validate


def _check(report, name):
    return next(c for c in report.checks if c.name == name)


def test_spec_guards():
    with pytest.raises(ValueError, match="may not depend on t"):
        make_spec(g="1+t")
    with pytest.raises(ValueError, match="lambda_min"):
        make_spec(lambda_min=0.0)
    with pytest.raises(ValueError, match="flux component"):
        make_spec(dim=2, phi=("0",))


def test_validate_constant_data_passes():
    report = validate(make_spec(f="1", g="1", c1=0.0, c2=1.0, lambda_min=1.0))
    assert report.passed
    assert all(c.passed for c in report.checks)


def test_validate_burgers_growth():
    # |div(phi) + f| = |u + 1 - u| = 1 <= 2|u| + 2
    report = validate(make_spec(phi=("u^2/2",), f="1-u", c1=2.0, c2=2.0))
    assert _check(report, "growth-bound").passed


def test_validate_threshold_floor_failure():
    report = validate(make_spec(g="0.5/(1+u^2)", lambda_min=1.0))
    floor = _check(report, "threshold-floor")
    assert not floor.passed
    assert floor.witness["x"] is not None
    # every sample violates; the reported worst shortfall is at least 0.5
    assert floor.worst >= 0.5


def test_validate_boundary_datum():
    report = validate(make_spec(u0="1"))
    assert not _check(report, "initial-boundary").passed
    report2 = validate(make_spec(u0="0.5*(1-abs(x))", g="1"))
    assert report2.passed


def test_validate_reaction_damping():
    assert _check(validate(make_spec(f="1-u", mu=1.0)), "reaction-damping").passed
    assert not _check(validate(make_spec(f="1+u", mu=1.0)), "reaction-damping").passed


def test_validate_deterministic():
    spec = make_spec(f="1-0.1*u", g="1+x^2")
    assert validate(spec, seed=123) == validate(spec, seed=123)


def test_sup_bound_degenerate():
    spec = make_spec(horizon=1.0, c1=0.0, c2=0.0, u0="0")
    assert abs(sup_bound_M(spec) - math.e) <= 1e-6


def test_sup_bound_closed_form():
    # objective e^lambda (lambda-1)^{-1/2} is stationary at lambda = 3/2
    spec = make_spec(horizon=1.0, c1=0.0, c2=1.0, u0="0")
    assert abs(sup_bound_M(spec) - math.exp(1.5) * math.sqrt(2.0)) <= 1e-3


def test_sup_bound_statement_constants_smaller():
    spec = make_spec(horizon=1.0, c1=0.0, c2=1.0, u0="0")
    stmt = sup_bound_M(spec, constants="statement")
    assert abs(stmt - math.e) <= 1e-6
    assert stmt < sup_bound_M(spec)


def test_sup_bound_horizon_growth():
    b1 = sup_bound_M(make_spec(horizon=1.0, c1=0.0, c2=1.0, u0="0"))
    b2 = sup_bound_M(make_spec(horizon=2.0, c1=0.0, c2=1.0, u0="0"))
    assert b2 / b1 >= math.e


def test_sup_bound_monotone_lattice():
    grid = [0.0, 0.5, 1.0]
    pts = [(c1, c2, T, u0) for c1 in grid for c2 in grid
           for T in (0.5, 1.0, 2.0) for u0 in grid]
    val = {p: sup_bound_value(p[0], p[1], p[2], p[3]) for p in pts}
    for i in range(4):
        for p in pts:
            q = list(p)
            bigger = {0: 0.25, 1: 0.25, 2: 0.5, 3: 0.25}[i]
            q[i] = p[i] + bigger
            assert sup_bound_value(*q) >= val[p] - 1e-9
