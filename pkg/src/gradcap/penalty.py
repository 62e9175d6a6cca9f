"""Exponential penalty law enforcing the gradient bound.

k_eps(s) multiplies the artificial diffusion; it is 1 where the constraint
holds (s <= 0) and grows like exp(s/eps) once the squared gradient exceeds
the squared threshold by eps or more.  On (0, eps) the exponent is blended
with a quintic smoothstep so k is C^2 at both seams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# exp() argument cap; callers treat a clamped evaluation as a step-size signal
EXP_CAP = 700.0


@dataclass(frozen=True)
class RegularizationParams:
    epsilon: float
    delta: float
    g_smoothing: int = 0          # 0 = none, otherwise odd box-kernel width >= 3
    blend: str = "quintic-smoothstep"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.g_smoothing and (self.g_smoothing < 3 or self.g_smoothing % 2 == 0):
            raise ValueError("g_smoothing must be 0 or an odd width >= 3")
        if self.blend != "quintic-smoothstep":
            raise ValueError(f"unsupported blend {self.blend!r}")


def _smoothstep(r):
    # 6r^5 - 15r^4 + 10r^3: value/slope/curvature match 0 at r=0 and 1,1,0 at r=1
    return r * r * r * (10.0 + r * (-15.0 + 6.0 * r))


def _smoothstep_prime(r):
    return 30.0 * r * r * (1.0 - r) * (1.0 - r)


def penalty_k(s, eps: float):
    """Penalty factor, >= 1, nondecreasing; exp argument clamped at EXP_CAP."""
    s_arr = np.asarray(s, dtype=float)
    expo = np.zeros_like(s_arr)
    upper = s_arr >= eps
    mid = (s_arr > 0.0) & ~upper
    np.divide(s_arr, eps, out=expo, where=upper)
    r = np.clip(s_arr / eps, 0.0, 1.0)
    blend = s_arr * _smoothstep(r) / eps
    expo = np.where(mid, blend, expo)
    out = np.exp(np.minimum(expo, EXP_CAP))
    if np.ndim(s) == 0:
        return float(out)
    return out


def penalty_clamped(s, eps: float) -> bool:
    """True when penalty_k would saturate its overflow cap somewhere."""
    return bool(np.any(np.asarray(s) >= EXP_CAP * eps))


def penalty_k_prime(s, eps: float):
    """Exact derivative of penalty_k (piecewise, matching at the seams)."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    k = np.exp(np.minimum(np.where(s_arr >= eps, s_arr / eps, 0.0), EXP_CAP))
    out = np.where(s_arr >= eps, k / eps, 0.0)
    mid = (s_arr > 0.0) & (s_arr < eps)
    if np.any(mid):
        sm = s_arr[mid]
        r = sm / eps
        beta = sm * _smoothstep(r)
        beta_prime = _smoothstep(r) + r * _smoothstep_prime(r)
        out[mid] = np.exp(beta / eps) * beta_prime / eps
    if np.ndim(s) == 0:
        return float(out[0])
    return out.reshape(np.shape(s))


# Gauss-Legendre nodes reused for every antiderivative evaluation
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _quad(fn, a: float, b: float) -> float:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return half * float(np.sum(_GL_WEIGHTS * fn(mid + half * _GL_NODES)))


def penalty_K(s, eps: float):
    """Antiderivative of penalty_k with K(0) = 0.

    K(s) = s for s <= 0.  The blend region is integrated with fixed
    Gauss-Legendre nodes; beyond eps the integral is exact in closed form.
    """
    def one(si: float) -> float:
        if si <= 0.0:
            return si
        if si <= eps:
            return _quad(lambda q: penalty_k(q, eps), 0.0, si)
        head = _quad(lambda q: penalty_k(q, eps), 0.0, eps)
        tail = eps * (np.exp(min(si / eps, EXP_CAP)) - np.e)
        return head + tail

    if np.ndim(s) == 0:
        return one(float(s))
    return np.array([one(float(si)) for si in np.ravel(s)]).reshape(np.shape(s))


def smooth_constraint(g_values, params: RegularizationParams, lambda_floor: float):
    """Box-kernel average of per-face threshold values along each axis.

    Width params.g_smoothing (0 disables smoothing), edges padded by
    replication so constant arrays pass through unchanged.  The result is
    clamped below at lambda_floor.
    """
    arr = np.asarray(g_values, dtype=float)
    width = params.g_smoothing
    if not width:
        return arr.copy()
    half = width // 2
    out = arr
    for axis in range(arr.ndim):
        padded = np.concatenate(
            [np.repeat(np.take(out, [0], axis=axis), half, axis=axis), out,
             np.repeat(np.take(out, [-1], axis=axis), half, axis=axis)],
            axis=axis,
        )
        acc = np.zeros_like(out)
        for off in range(width):
            sl = tuple(
                slice(off, off + out.shape[ax]) if ax == axis else slice(None)
                for ax in range(out.ndim)
            )
            acc += padded[sl]
        out = acc / width
    return np.maximum(out, lambda_floor)
