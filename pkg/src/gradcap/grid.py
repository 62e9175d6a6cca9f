"""Staggered uniform grids on an interval or a rectangle.

Scalars live on nodes, gradients on the faces between neighbouring nodes.
The divergence is the negative adjoint of the gradient under the discrete
inner products below, which makes summation by parts exact for fields that
vanish on the boundary.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """dim 1 or 2, extents per axis, n nodes per axis (n >= 3)."""

    dim: int
    extents: tuple  # ((x0, x1),) or ((x0, x1), (y0, y1))
    n: tuple        # (nx,) or (nx, ny)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim or len(self.n) != self.dim:
            raise ValueError("extents and n must have one entry per axis")
        for (a, b), m in zip(self.extents, self.n):
            if not b > a:
                raise ValueError(f"empty extent ({a}, {b})")
            if m < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {m}")

    @property
    def h(self) -> tuple:
        return tuple((b - a) / (m - 1) for (a, b), m in zip(self.extents, self.n))

    @property
    def shape(self) -> tuple:
        return self.n

    def axis_coords(self, axis: int) -> np.ndarray:
        a, b = self.extents[axis]
        return np.linspace(a, b, self.n[axis])

    def node_coords(self) -> tuple:
        """Per-axis coordinate arrays broadcast to the node shape."""
        axes = [self.axis_coords(k) for k in range(self.dim)]
        if self.dim == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def face_coords(self, axis: int) -> tuple:
        """Coordinates of face midpoints of the given family."""
        axes = [self.axis_coords(k) for k in range(self.dim)]
        mids = 0.5 * (axes[axis][1:] + axes[axis][:-1])
        axes[axis] = mids
        if self.dim == 1:
            return (mids,)
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @property
    def face_volume(self) -> float:
        v = 1.0
        for h in self.h:
            v *= h
        return v

    @property
    def domain_volume(self) -> float:
        v = 1.0
        for a, b in self.extents:
            v *= b - a
        return v

    def node_volumes(self) -> np.ndarray:
        """Trapezoid quadrature weights (half weight on boundary nodes)."""
        ws = []
        for h, m in zip(self.h, self.n):
            w = np.full(m, h)
            w[0] = w[-1] = 0.5 * h
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])

    def interior(self) -> tuple:
        """Slice tuple selecting interior nodes."""
        return tuple(slice(1, -1) for _ in range(self.dim))

    def boundary_mask(self) -> np.ndarray:
        m = np.ones(self.n, dtype=bool)
        m[self.interior()] = False
        return m


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class FaceVectorField:
    """One array per axis; component k lives on the faces normal to axis k."""

    grid: Grid
    components: tuple

    def __post_init__(self):
        self.components = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(self.components) != self.grid.dim:
            raise ValueError("one component per axis required")
        for k, c in enumerate(self.components):
            want = list(self.grid.n)
            want[k] -= 1
            if c.shape != tuple(want):
                raise ValueError(f"component {k} has shape {c.shape}, want {tuple(want)}")


def field_from_callable(grid: Grid, fn) -> ScalarField:
    return ScalarField(grid, np.asarray(fn(*grid.node_coords()), dtype=float))


def gradient(u: ScalarField) -> FaceVectorField:
    """Two-point difference along each axis; component k sits on axis-k faces."""
    g = u.grid
    comps = []
    for k in range(g.dim):
        comps.append(np.diff(u.values, axis=k) / g.h[k])
    return FaceVectorField(g, tuple(comps))


def divergence(q: FaceVectorField) -> ScalarField:
    """Adjoint difference; zero on boundary nodes by convention."""
    g = q.grid
    out = np.zeros(g.shape)
    inner = g.interior()
    acc = np.zeros_like(out[inner])
    for k in range(g.dim):
        c = q.components[k]
        d = np.diff(c, axis=k) / g.h[k]  # lives on interior nodes of axis k
        take = tuple(
            slice(None) if ax == k else slice(1, -1) for ax in range(g.dim)
        )
        acc += d[take]
    out[inner] = acc
    return ScalarField(g, out)


def face_gradient_magnitude(u: ScalarField) -> tuple:
    """|grad u| per face, one array per face family.

    In 1d this is just |diff(u)|/h.  In 2d each face combines its normal
    difference with the average of the four neighbouring transverse
    differences (fewer at the domain edge), so the magnitude sees both
    components of the gradient.
    """
    g = u.grid
    grad = gradient(u)
    if g.dim == 1:
        return (np.abs(grad.components[0]),)

    gx, gy = grad.components  # shapes (nx-1, ny), (nx, ny-1)
    out = []
    for k, (normal, trans) in enumerate(((gx, gy), (gy, gx))):
        # sum/count of transverse differences adjacent to each axis-k face
        sums = np.zeros_like(normal)
        counts = np.zeros_like(normal)
        if k == 0:
            # x-face (i+1/2, j): y-faces (i, j-1/2), (i, j+1/2) and same at i+1
            for ii in (slice(0, -1), slice(1, None)):
                sums[:, 1:] += trans[ii, :]
                counts[:, 1:] += 1.0
                sums[:, :-1] += trans[ii, :]
                counts[:, :-1] += 1.0
        else:
            for jj in (slice(0, -1), slice(1, None)):
                sums[1:, :] += trans[:, jj]
                counts[1:, :] += 1.0
                sums[:-1, :] += trans[:, jj]
                counts[:-1, :] += 1.0
        avg = sums / counts
        out.append(np.sqrt(normal * normal + avg * avg))
    return tuple(out)


def node_gradient_magnitude(u: ScalarField) -> np.ndarray:
    """Average the adjacent face magnitudes back onto nodes (per axis, then mean)."""
    g = u.grid
    mags = face_gradient_magnitude(u)
    acc = np.zeros(g.shape)
    for k, m in enumerate(mags):
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


def inner_product(u: ScalarField, v: ScalarField) -> float:
    w = u.grid.node_volumes()
    return float(np.sum(w * u.values * v.values))


def face_inner_product(p: FaceVectorField, q: FaceVectorField) -> float:
    vol = p.grid.face_volume
    total = 0.0
    for a, b in zip(p.components, q.components):
        total += float(np.sum(a * b))
    return vol * total


def face_total(grid: Grid, face_arrays) -> float:
    """Volume-weighted sum of per-face values over every face family."""
    return grid.face_volume * float(sum(np.sum(a) for a in face_arrays))


def distance_to_boundary(grid: Grid) -> ScalarField:
    coords = grid.node_coords()
    dist = None
    for k in range(grid.dim):
        a, b = grid.extents[k]
        d = np.minimum(coords[k] - a, b - coords[k])
        dist = d if dist is None else np.minimum(dist, d)
    return ScalarField(grid, dist)


def average_to_faces(values: np.ndarray, axis: int) -> np.ndarray:
    """Midpoint average of a node array onto the faces of one family."""
    lo = tuple(slice(0, -1) if ax == axis else slice(None) for ax in range(values.ndim))
    hi = tuple(slice(1, None) if ax == axis else slice(None) for ax in range(values.ndim))
    return 0.5 * (values[lo] + values[hi])


def _atomic_write(path, text: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_snapshot(path, u: ScalarField, g_node: np.ndarray,
                   multiplier_node: np.ndarray) -> None:
    """CSV, one row per node: coordinates, u, |grad u|, G, slack, multiplier.

    Rows are emitted lexicographically in (y, x).  Floats use repr, which
    round-trips float64 exactly.
    """
    g = u.grid
    mag = node_gradient_magnitude(u)
    slack = g_node - mag
    coords = g.node_coords()
    buf = io.StringIO()
    if g.dim == 1:
        buf.write("x,u,grad_mag,g,slack,multiplier\n")
        for i in range(g.n[0]):
            buf.write(",".join(repr(float(a)) for a in (
                coords[0][i], u.values[i], mag[i], g_node[i],
                slack[i], multiplier_node[i])) + "\n")
    else:
        buf.write("x,y,u,grad_mag,g,slack,multiplier\n")
        for j in range(g.n[1]):
            for i in range(g.n[0]):
                buf.write(",".join(repr(float(a)) for a in (
                    coords[0][i, j], coords[1][i, j], u.values[i, j],
                    mag[i, j], g_node[i, j], slack[i, j],
                    multiplier_node[i, j])) + "\n")
    _atomic_write(path, buf.getvalue())


def read_snapshot(path, grid: Grid) -> dict:
    """Inverse of write_snapshot; returns column name -> node array."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    out = {}
    for col, name in enumerate(header):
        vals = data[:, col]
        if grid.dim == 2:
            # rows ran y-outer, x-inner
            vals = vals.reshape(grid.n[1], grid.n[0]).T
        out[name] = vals
    return out
