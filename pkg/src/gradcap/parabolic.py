"""IMEX time stepping for the penalized gradient-constrained evolution.

Each step solves

    (w+ - w)/dt = div( delta * k_eps(|grad w+|^2 - G_eps(w+)^2) grad w+ )
                  + div Phi(w) + f(w)

with the diffusion implicit in w+, convection handled explicitly by a local
Lax-Friedrichs flux, and the reaction explicit.  Inside the step, each face's
penalty argument keeps its transverse-difference and constraint contributions
frozen at the base state w, so the implicit system is the Euler-Lagrange
equation of a strictly convex separable energy.  An inner loop of linear
passes solves it: each pass freezes the scalar tangent coefficient
delta*(k + 2*k'*d^2) (d the face's own difference quotient) from the previous
inner iterate, solves one symmetric positive definite system for a
correction, and backtracks until the residual drops; the frozen data makes
the correction an exact Newton direction, so the backtracking always
terminates.  Failed steps are retried with a halved dt; running out of dt is
a hard "stiffness collapse".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .expr import Const, evaluate, partial_u
from .grid import (Grid, ScalarField, FaceVectorField, average_to_faces,
                   divergence, face_gradient_magnitude, gradient)
from .model import ProblemSpec, sup_bound_M
from .penalty import (RegularizationParams, penalty_clamped, penalty_k,
                      penalty_k_prime, smooth_constraint)

_FD_U = 1e-6  # step for finite differences in u


@dataclass(frozen=True)
class StepControls:
    dt_init: float = 0.01
    cfl: float = 0.45
    picard_tol: float = 1e-8
    picard_max: int = 50
    dt_min: float = 1e-9
    dt_max: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.cfl <= 0.9:
            raise ValueError("cfl must lie in (0, 0.9]")
        if not 0.0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.picard_max < 1 or self.picard_tol <= 0:
            raise ValueError("bad picard controls")


@dataclass
class StepperState:
    w: ScalarField
    t: float
    dt: float                 # nominal next step before CFL/retry adjustments
    picard_iters: int = 0     # passes used by the last accepted step
    clamp_events: int = 0
    steps: int = 0


class StiffnessCollapse(RuntimeError):
    """dt fell below dt_min; carries the state at the point of failure."""

    def __init__(self, message: str, state: StepperState):
        super().__init__(message)
        self.state = state


class _Reject(Exception):
    def __init__(self, reason: str, clamped: bool = False):
        self.reason = reason
        self.clamped = clamped


def _is_zero(e) -> bool:
    return isinstance(e.root, Const) and e.root.value == 0.0


class Stepper:
    """Holds per-grid caches; advance() performs one accepted step."""

    def __init__(self, spec: ProblemSpec, grid: Grid,
                 reg: RegularizationParams, ctl: StepControls,
                 m_cap: float | None = None):
        if spec.dim != grid.dim:
            raise ValueError("spec and grid dimension differ")
        self.spec = spec
        self.grid = grid
        self.reg = reg
        self.ctl = ctl
        self.node_xy = grid.node_coords()
        self.face_xy = [grid.face_coords(k) for k in range(grid.dim)]
        self.g_uses_u = spec.g.uses("u")
        self.active_axes = [k for k in range(grid.dim) if not _is_zero(spec.phi[k])]
        self.f_zero = _is_zero(spec.f)
        self.m_hat = sup_bound_M(spec) if m_cap is None else m_cap
        self.blow_cap = 4.0 * (self.m_hat + 1.0)
        self._static_g = None if self.g_uses_u else self._g_faces(None)

    # threshold and penalty plumbing -------------------------------------

    def _g_faces(self, w_values) -> tuple:
        out = []
        for k in range(self.grid.dim):
            env = {"x": self.face_xy[k][0]}
            if self.grid.dim == 2:
                env["y"] = self.face_xy[k][1]
            if self.g_uses_u:
                env["u"] = average_to_faces(w_values, k)
            vals = np.broadcast_to(
                np.asarray(evaluate(self.spec.g, **env), dtype=float),
                self.face_xy[k][0].shape).copy()
            if self.reg.g_smoothing:
                vals = smooth_constraint(vals, self.reg, self.spec.lambda_min)
            out.append(vals)
        return tuple(out)

    def constraint_faces(self, w: ScalarField) -> tuple:
        if self._static_g is not None:
            return self._static_g
        return self._g_faces(w.values)

    def penalty_argument(self, w: ScalarField) -> tuple:
        """s = |grad w|^2 - G^2 on every face family."""
        mags = face_gradient_magnitude(w)
        gs = self.constraint_faces(w)
        return tuple(m * m - g * g for m, g in zip(mags, gs))

    def coefficient(self, w: ScalarField) -> tuple:
        """Diffusion coefficient delta * k_eps(s) per face; flags clamping."""
        ss = self.penalty_argument(w)
        clamped = any(penalty_clamped(s, self.reg.epsilon) for s in ss)
        coef = tuple(self.reg.delta * penalty_k(s, self.reg.epsilon) for s in ss)
        return coef, clamped

    def _frozen_face_shift(self, w: ScalarField) -> tuple:
        """Per-face s minus the face's own squared difference, from state w.

        shift = (transverse part of |grad w|^2) - G^2, so during the inner
        iteration s(v) = d(v)^2 + shift depends only on the face's own
        difference quotient d(v).  Freezing the transverse and constraint
        parts at the base state makes the implicit step the gradient of a
        strictly convex energy (the cross-coupling is what breaks descent
        otherwise); the frozen parts lag by one step, like the coefficient
        itself in a plain semi-implicit scheme.
        """
        gs = self.constraint_faces(w)
        if self.grid.dim == 1:
            return (-(gs[0] * gs[0]),)
        mags = face_gradient_magnitude(w)
        grad = gradient(w).components
        return tuple(np.maximum(m * m - d * d, 0.0) - g * g
                     for m, d, g in zip(mags, grad, gs))

    def tangent_coefficient(self, v: ScalarField, shift: tuple) -> tuple:
        """delta * (k + 2 k' d^2) per face: slope of the flux in d.

        The exponential penalty makes the flux vastly stiffer than k alone
        suggests; the inner linear passes must see this slope or they only
        converge for explicit-size steps.
        """
        eps = self.reg.epsilon
        coef = []
        clamped = False
        for d, sh in zip(gradient(v).components, shift):
            s = d * d + sh
            clamped = clamped or penalty_clamped(s, eps)
            k = penalty_k(s, eps)
            kp = penalty_k_prime(s, eps)
            coef.append(self.reg.delta * (k + 2.0 * kp * d * d))
        return tuple(coef), clamped

    def _implicit_residual(self, v: ScalarField, rhs: np.ndarray, dt: float,
                           shift: tuple):
        """R(v) = v/dt - div(delta k grad v) - rhs on the interior, 0 on the rim."""
        eps = self.reg.epsilon
        fluxes = []
        clamped = False
        for d, sh in zip(gradient(v).components, shift):
            s = d * d + sh
            clamped = clamped or penalty_clamped(s, eps)
            fluxes.append(self.reg.delta * penalty_k(s, eps) * d)
        flux = FaceVectorField(self.grid, tuple(fluxes))
        res = v.values / dt - divergence(flux).values - rhs
        res[self.grid.boundary_mask()] = 0.0
        return res, clamped

    # explicit terms ------------------------------------------------------

    def _node_env(self, w_values, t: float) -> dict:
        env = {"x": self.node_xy[0], "t": t, "u": w_values}
        if self.grid.dim == 2:
            env["y"] = self.node_xy[1]
        return env

    def convection(self, w_values, t: float) -> np.ndarray:
        """div Phi(w) via local Lax-Friedrichs fluxes; zero on the boundary."""
        g = self.grid
        out = np.zeros(g.shape)
        if not self.active_axes:
            return out
        env = self._node_env(w_values, t)
        inner = g.interior()
        acc = np.zeros_like(out[inner])
        for k in self.active_axes:
            phi = np.broadcast_to(
                np.asarray(evaluate(self.spec.phi[k], **env), dtype=float),
                g.shape)
            speed = np.abs(np.broadcast_to(np.asarray(
                partial_u(self.spec.phi[k], **env, h=_FD_U), dtype=float),
                g.shape))
            lo = tuple(slice(0, -1) if ax == k else slice(None) for ax in range(g.dim))
            hi = tuple(slice(1, None) if ax == k else slice(None) for ax in range(g.dim))
            a_face = np.maximum(speed[lo], speed[hi])
            flux = 0.5 * (phi[lo] + phi[hi]) + 0.5 * a_face * (w_values[hi] - w_values[lo])
            d = np.diff(flux, axis=k) / g.h[k]
            take = tuple(slice(None) if ax == k else slice(1, -1) for ax in range(g.dim))
            acc += d[take]
        out[inner] = acc
        return out

    def reaction(self, w_values, t: float) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        if self.f_zero:
            return out
        env = self._node_env(w_values, t)
        vals = np.broadcast_to(
            np.asarray(evaluate(self.spec.f, **env), dtype=float), self.grid.shape)
        inner = self.grid.interior()
        out[inner] = vals[inner]
        return out

    # implicit solve ------------------------------------------------------

    def _solve_1d(self, coef, rhs, dt: float) -> np.ndarray:
        c = coef[0]
        n = self.grid.n[0]
        h2 = self.grid.h[0] ** 2
        ab = np.zeros((3, n))
        ab[1, 0] = ab[1, -1] = 1.0
        ab[1, 1:-1] = 1.0 / dt + (c[:-1] + c[1:]) / h2
        ab[0, 2:] = -c[1:] / h2
        ab[2, :-2] = -c[:-1] / h2
        b = rhs.copy()
        b[0] = b[-1] = 0.0
        try:
            out = solve_banded((1, 1), ab, b)
        except np.linalg.LinAlgError:
            raise _Reject("singular linear system") from None
        # partial pivoting can smear roundoff into the Dirichlet rows
        out[0] = out[-1] = 0.0
        return out

    def _solve_2d(self, coef, rhs, dt: float, x0: np.ndarray) -> np.ndarray:
        """Jacobi-preconditioned conjugate gradients on the interior block."""
        cx, cy = coef
        sx = cx / self.grid.h[0] ** 2  # face weights, pre-divided
        sy = cy / self.grid.h[1] ** 2
        inv_dt = 1.0 / dt
        shape = self.grid.shape
        fx = np.empty((shape[0] - 1, shape[1]))
        fy = np.empty((shape[0], shape[1] - 1))
        q = np.empty(shape)

        def apply_op(v, out):
            np.multiply(v, inv_dt, out=out)
            np.subtract(v[1:, :], v[:-1, :], out=fx)
            np.multiply(fx, sx, out=fx)
            out[1:-1, :] -= fx[1:, :]
            out[1:-1, :] += fx[:-1, :]
            np.subtract(v[:, 1:], v[:, :-1], out=fy)
            np.multiply(fy, sy, out=fy)
            out[:, 1:-1] -= fy[:, 1:]
            out[:, 1:-1] += fy[:, :-1]
            out[0, :] = 0.0
            out[-1, :] = 0.0
            out[:, 0] = 0.0
            out[:, -1] = 0.0

        def dot(a, b):
            return float(np.dot(a.ravel(), b.ravel()))

        diag = np.full(shape, inv_dt)
        diag[1:-1, :] += sx[:-1, :] + sx[1:, :]
        diag[:, 1:-1] += sy[:, :-1] + sy[:, 1:]

        b = rhs.copy()
        b[0, :] = b[-1, :] = 0.0
        b[:, 0] = b[:, -1] = 0.0
        x = x0.copy()
        x[0, :] = x[-1, :] = 0.0
        x[:, 0] = x[:, -1] = 0.0

        tol = 1e-10 * np.sqrt(dot(b, b))
        apply_op(x, q)
        r = b - q
        if np.sqrt(dot(r, r)) <= tol:
            return x
        z = r / diag
        p = z.copy()
        rz = dot(r, z)
        for _ in range(10000):
            apply_op(p, q)
            alpha = rz / dot(p, q)
            x += alpha * p
            r -= alpha * q
            if np.sqrt(dot(r, r)) <= tol:
                return x
            np.divide(r, diag, out=z)
            rz_new = dot(r, z)
            p *= rz_new / rz
            p += z
            rz = rz_new
        raise _Reject("iterative solve stalled")

    def implicit_solve(self, coef, rhs, dt: float, x0: np.ndarray) -> np.ndarray:
        if self.grid.dim == 1:
            return self._solve_1d(coef, rhs, dt)
        return self._solve_2d(coef, rhs, dt, x0)

    # stepping ------------------------------------------------------------

    def cfl_dt(self, w: ScalarField, t: float) -> float:
        """min(dt_max, cfl * h / max speed, 0.5 / L_f), floored at dt_min."""
        dt = self.ctl.dt_max
        env = self._node_env(w.values, t)
        for k in self.active_axes:
            speed = float(np.max(np.abs(np.asarray(
                partial_u(self.spec.phi[k], **env, h=_FD_U)))))
            if speed > 0.0:
                dt = min(dt, self.ctl.cfl * self.grid.h[k] / speed)
        if not self.f_zero:
            lf = float(np.max(np.abs(np.asarray(
                partial_u(self.spec.f, **env, h=_FD_U)))))
            if lf > 0.0:
                dt = min(dt, 0.5 / lf)
        return max(dt, self.ctl.dt_min)

    def _try_step(self, w: ScalarField, t: float, dt: float, expl: np.ndarray,
                  seed_values: np.ndarray | None):
        rhs = w.values / dt + expl
        shift = self._frozen_face_shift(w)
        guess = ScalarField(self.grid, w.values)
        res, clamped = self._implicit_residual(guess, rhs, dt, shift)
        if clamped:
            raise _Reject("penalty clamp", clamped=True)
        res_norm = float(np.sqrt(np.sum(res * res)))
        if seed_values is not None:
            # carried-over iterate competes against the current state; a seed
            # from a different regularization stage can be far worse, so it is
            # adopted only when its residual is actually smaller
            cand = ScalarField(self.grid, seed_values.copy())
            with np.errstate(over="ignore", invalid="ignore"):
                cres, cclamped = self._implicit_residual(cand, rhs, dt, shift)
                cnorm = float(np.sqrt(np.sum(cres * cres)))
            if np.isfinite(cnorm) and not cclamped and cnorm < res_norm:
                guess, res, res_norm = cand, cres, cnorm
        for passes in range(1, self.ctl.picard_max + 1):
            if res_norm < self.ctl.picard_tol / dt:
                break
            coef, clamped = self.tangent_coefficient(guess, shift)
            if clamped:
                raise _Reject("penalty clamp", clamped=True)
            corr = self.implicit_solve(coef, -res, dt, np.zeros(self.grid.shape))
            if not np.all(np.isfinite(corr)):
                raise _Reject("non-finite correction")
            # backtrack until the residual actually drops
            theta = 1.0
            while True:
                trial = ScalarField(self.grid, guess.values + theta * corr)
                with np.errstate(over="ignore", invalid="ignore"):
                    trial_res, trial_clamped = self._implicit_residual(
                        trial, rhs, dt, shift)
                    trial_norm = float(np.sqrt(np.sum(trial_res * trial_res)))
                if (np.isfinite(trial_norm) and not trial_clamped
                        and trial_norm <= (1.0 - 0.25 * theta) * res_norm):
                    break
                theta *= 0.5
                if theta < 1e-4:
                    raise _Reject("inner line search failed",
                                  clamped=trial_clamped)
            change = theta * float(np.max(np.abs(corr)))
            guess, res, res_norm = trial, trial_res, trial_norm
            if float(np.max(np.abs(guess.values))) > self.blow_cap:
                raise _Reject("sup bound exceeded")
            if change < self.ctl.picard_tol:
                break
        else:
            raise _Reject("picard iteration limit")
        return guess, max(passes, 1)

    def advance(self, state: StepperState, t_end: float | None = None,
                picard_seed: np.ndarray | None = None) -> StepperState:
        """One accepted step, shrinking dt on rejection (never below dt_min)."""
        w, t = state.w, state.t
        if t_end is not None and t_end - t <= 0.0:
            raise ValueError(f"advance called at or past t_end ({t} >= {t_end})")
        expl = self.convection(w.values, t) + self.reaction(w.values, t)
        dt = min(state.dt, self.cfl_dt(w, t))
        clamp_events = state.clamp_events
        while True:
            dt_use = dt if t_end is None else min(dt, t_end - t)
            try:
                new_w, passes = self._try_step(w, t, dt_use, expl, picard_seed)
                break
            except _Reject as rej:
                if rej.clamped:
                    clamp_events += 1
                dt = 0.5 * dt_use
                if dt < self.ctl.dt_min:
                    raise StiffnessCollapse(
                        f"stiffness collapse: dt {dt:.3e} fell below dt_min "
                        f"({rej.reason} at t = {t:.6g})", state) from None
        return StepperState(
            w=new_w,
            t=t + dt_use,
            dt=min(self.ctl.dt_max, 1.25 * dt),
            picard_iters=passes,
            clamp_events=clamp_events,
            steps=state.steps + 1,
        )

    def multiplier_faces(self, w: ScalarField) -> tuple:
        ss = self.penalty_argument(w)
        return tuple(self.reg.delta * penalty_k(s, self.reg.epsilon) for s in ss)

    def multiplier_nodes(self, w: ScalarField) -> np.ndarray:
        faces = self.multiplier_faces(w)
        g = self.grid
        acc = np.zeros(g.shape)
        for k, m in enumerate(faces):
            s = np.zeros(g.shape)
            c = np.zeros(g.shape)
            lo = tuple(slice(0, -1) if ax == k else slice(None) for ax in range(g.dim))
            hi = tuple(slice(1, None) if ax == k else slice(None) for ax in range(g.dim))
            s[lo] += m
            c[lo] += 1.0
            s[hi] += m
            c[hi] += 1.0
            acc += s / c
        return acc / g.dim


def initial_state(spec: ProblemSpec, grid: Grid, ctl: StepControls) -> StepperState:
    """Sample u0 on the nodes; boundary values are forced to zero."""
    env = {"x": grid.node_coords()[0], "t": 0.0, "u": 0.0}
    if grid.dim == 2:
        env["y"] = grid.node_coords()[1]
    vals = np.broadcast_to(
        np.asarray(evaluate(spec.u0, **env), dtype=float), grid.shape).copy()
    vals[grid.boundary_mask()] = 0.0
    return StepperState(w=ScalarField(grid, vals), t=0.0, dt=ctl.dt_init)


def step(state: StepperState, spec: ProblemSpec, reg: RegularizationParams,
         ctl: StepControls, grid: Grid | None = None) -> StepperState:
    """Single-step convenience wrapper; drivers reuse a Stepper instead."""
    g = grid if grid is not None else state.w.grid
    return Stepper(spec, g, reg, ctl).advance(state)


def cfl_dt(state: StepperState, spec: ProblemSpec, ctl: StepControls) -> float:
    return Stepper(spec, state.w.grid, RegularizationParams(0.5, 0.5), ctl).cfl_dt(
        state.w, state.t)


def discrete_multiplier(w: ScalarField, spec: ProblemSpec,
                        reg: RegularizationParams) -> tuple:
    """delta * k_eps(|grad w|^2 - G^2) per face; >= delta by construction."""
    ctl = StepControls()
    return Stepper(spec, w.grid, reg, ctl).multiplier_faces(w)
