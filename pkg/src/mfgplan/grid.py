"""Staggered space-time grid on the flat torus.

Lattices
--------
``node``  m,            shape ``(Nt + 1, *cells)``, times ``k dt``
``mid``   u, alpha,     shape ``(Nt, *cells)``,     times ``(k + 1/2) dt``
``face``  w,            shape ``(Nt, d, *cells)``,  ``w[k, a, i]`` is the flux through
          the upper face of cell ``i`` along axis ``a``

All lattices carry the same quadrature weight ``dt * h**d`` (the node lattice
uses the trapezoid rule in time), so the plain Euclidean transpose of every
operator below is its adjoint in the weighted inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

__all__ = [
    "ContinuityProjector",
    "DualField",
    "GridSpec",
    "StaggeredField",
    "average",
    "average_adjoint",
    "cell_gradient",
    "continuity_adjoint",
    "continuity_apply",
    "divergence",
    "face_gradient",
    "integrate",
    "m_on_midpoints",
    "op_norm",
    "poisson_flux",
    "time_slope",
]


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    Nt: int
    T: float = 1.0

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 4 or self.Nt < 4:
            raise ValueError(f"need N >= 4 and Nt >= 4, got N={self.N}, Nt={self.Nt}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def cells(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def weight(self) -> float:
        return self.dt * self.h**self.d

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.Nt + 1, *self.cells)

    @property
    def mid_shape(self) -> tuple[int, ...]:
        return (self.Nt, *self.cells)

    @property
    def face_shape(self) -> tuple[int, ...]:
        return (self.Nt, self.d, *self.cells)

    def cell_centers(self) -> np.ndarray:
        """Cell centers, shape ``(*cells, d)``."""
        x = (np.arange(self.N) + 0.5) * self.h
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"), axis=-1)

    def node_times(self) -> np.ndarray:
        return np.arange(self.Nt + 1) * self.dt

    def mid_times(self) -> np.ndarray:
        return (np.arange(self.Nt) + 0.5) * self.dt


@dataclass(frozen=True)
class StaggeredField:
    """Primal pair: ``m`` on the node lattice, ``w`` on the face lattice."""

    m: np.ndarray
    w: np.ndarray

    def check(self, grid: GridSpec) -> None:
        if self.m.shape != grid.node_shape or self.w.shape != grid.face_shape:
            raise ValueError(
                f"field shapes {self.m.shape}, {self.w.shape} do not match grid "
                f"{grid.node_shape}, {grid.face_shape}"
            )


@dataclass(frozen=True)
class DualField:
    """Dual pair on the midpoint lattice.

    ``dtu`` and ``gradu`` are the time and space slopes of ``u`` produced by the
    solver (the exact discrete multipliers); when absent they are rebuilt from
    ``u`` by finite differences.
    """

    u: np.ndarray
    alpha: np.ndarray
    dtu: np.ndarray | None = None
    gradu: np.ndarray | None = None

    def shifted(self, const: float) -> "DualField":
        return DualField(self.u + const, self.alpha, self.dtu, self.gradu)


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------


def _space_axes(arr: np.ndarray, d: int) -> range:
    return range(arr.ndim - d, arr.ndim)


def divergence(grid: GridSpec, w: np.ndarray) -> np.ndarray:
    """Face-to-cell divergence ``sum_a (w_a[i] - w_a[i - e_a]) / h``; ``w`` is ``(..., d, *cells)``."""
    out = 0.0
    for a in range(grid.d):
        wa = np.take(w, a, axis=w.ndim - grid.d - 1)
        ax = wa.ndim - grid.d + a
        out = out + (wa - np.roll(wa, 1, axis=ax))
    return out / grid.h


def face_gradient(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    """Cell-to-face gradient ``(u[i + e_a] - u[i]) / h``; the negative transpose of :func:`divergence`."""
    axes = list(_space_axes(u, grid.d))
    comps = [(np.roll(u, -1, axis=ax) - u) / grid.h for ax in axes]
    return np.stack(comps, axis=u.ndim - grid.d)


def cell_gradient(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    """Centered cell gradient ``(u[i + e_a] - u[i - e_a]) / (2h)``, components before the cell axes."""
    axes = list(_space_axes(u, grid.d))
    comps = [(np.roll(u, -1, axis=ax) - np.roll(u, 1, axis=ax)) / (2 * grid.h) for ax in axes]
    return np.stack(comps, axis=u.ndim - grid.d)


def time_slope(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    """Time derivative of a midpoint field at the midpoints.

    Centered differences in the interior, one-sided at the two extreme midpoints.
    """
    return np.gradient(u, grid.dt, axis=0, edge_order=1)


def continuity_apply(grid: GridSpec, field: StaggeredField) -> np.ndarray:
    """Discrete continuity residual ``(m[k+1] - m[k]) / dt + div_h w[k]`` on the midpoint lattice."""
    return (field.m[1:] - field.m[:-1]) / grid.dt + divergence(grid, field.w)


def continuity_adjoint(grid: GridSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of :func:`continuity_apply`.

    Returns the node part ``(u[k-1] - u[k]) / dt`` (zero padding beyond the ends)
    and the face part ``-grad_h u``.
    """
    node = np.zeros((u.shape[0] + 1, *u.shape[1:]))
    node[:-1] -= u
    node[1:] += u
    node /= grid.dt
    return node, -face_gradient(grid, u)


def m_on_midpoints(grid: GridSpec, m: np.ndarray) -> np.ndarray:
    return 0.5 * (m[1:] + m[:-1])


def average(grid: GridSpec, m: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate a primal pair onto the midpoint cells.

    ``m`` is averaged in time; each flux component is averaged over the two
    faces bounding the cell.
    """
    wbar = np.empty_like(w)
    for a in range(grid.d):
        ax = w.ndim - grid.d + a - 1
        wa = w[:, a]
        wbar[:, a] = 0.5 * (wa + np.roll(wa, 1, axis=ax))
    return m_on_midpoints(grid, m), wbar


def average_adjoint(grid: GridSpec, pm: np.ndarray, pw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of :func:`average`."""
    node = np.zeros((pm.shape[0] + 1, *pm.shape[1:]))
    node[:-1] += 0.5 * pm
    node[1:] += 0.5 * pm
    face = np.empty_like(pw)
    for a in range(grid.d):
        ax = pw.ndim - grid.d + a - 1
        pa = pw[:, a]
        face[:, a] = 0.5 * (pa + np.roll(pa, -1, axis=ax))
    return node, face


def integrate(grid: GridSpec, values: np.ndarray, lattice: str) -> float:
    """Space-time quadrature on one of the lattices ``node``, ``mid`` or ``face``."""
    values = np.asarray(values, dtype=float)
    if lattice == "node":
        if values.shape[0] != grid.Nt + 1:
            raise ValueError("node lattice needs Nt + 1 time slices")
        inner = values[1:-1].sum()
        ends = 0.5 * (values[0].sum() + values[-1].sum())
        return float((inner + ends) * grid.weight)
    if lattice in ("mid", "face"):
        if values.shape[0] != grid.Nt:
            raise ValueError(f"{lattice} lattice needs Nt time slices")
        return float(values.sum() * grid.weight)
    raise ValueError(f"unknown lattice {lattice!r}")


def op_norm(grid: GridSpec, rtol: float = 1e-6, max_iter: int = 10_000, part: str = "full") -> float:
    """Operator norm of :func:`continuity_apply` by power iteration on ``A^T A``.

    ``part="time"`` or ``"space"`` restricts the operator to its time-difference
    or divergence block. The start vector is drawn from a fixed seed, so the
    estimate is deterministic.
    """
    if part not in ("full", "time", "space"):
        raise ValueError(f"unknown operator part {part!r}")
    rng = np.random.default_rng(12345)
    m = rng.standard_normal(grid.node_shape) * (part != "space")
    w = rng.standard_normal(grid.face_shape) * (part != "time")
    nrm = np.sqrt(np.sum(m * m) + np.sum(w * w))
    m, w = m / nrm, w / nrm
    for _ in range(max_iter):
        r = continuity_apply(grid, StaggeredField(m, w))
        am, aw = continuity_adjoint(grid, r)
        if part == "time":
            aw = np.zeros_like(aw)
        elif part == "space":
            am = np.zeros_like(am)
        # Rayleigh quotient of A^T A; the eigen-residual bounds its error
        lam = float(np.sum(m * am) + np.sum(w * aw))
        res = np.sqrt(np.sum((am - lam * m) ** 2) + np.sum((aw - lam * w) ** 2))
        nrm = np.sqrt(np.sum(am * am) + np.sum(aw * aw))
        m, w = am / nrm, aw / nrm
        if res <= rtol * lam:
            return float(np.sqrt(lam))
    raise RuntimeError(f"power iteration did not reach rtol={rtol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# projection onto the continuity constraint
# ---------------------------------------------------------------------------


class ContinuityProjector:
    """Orthogonal projection onto ``{(m, w): continuity_apply = 0}`` with the end slices of ``m`` fixed.

    With the end slices eliminated, ``A A^T`` is the sum of a Neumann second
    difference in time (diagonalized by a DCT-II) and the periodic Laplacian in
    space (diagonalized by a real FFT). Its single null mode, the constant, is
    dropped, so solves return the zero-mean solution.
    """

    def __init__(self, grid: GridSpec, workers: int = 1):
        self.grid = grid
        self.workers = workers
        k = np.arange(grid.Nt)
        lt = (2.0 - 2.0 * np.cos(np.pi * k / grid.Nt)) / grid.dt**2
        lam = lt.reshape((-1,) + (1,) * grid.d)
        for a in range(grid.d):
            n = grid.N // 2 + 1 if a == grid.d - 1 else grid.N
            j = np.arange(n)
            lx = (2.0 - 2.0 * np.cos(2 * np.pi * j / grid.N)) / grid.h**2
            shape = [1] * (grid.d + 1)
            shape[a + 1] = n
            lam = lam + lx.reshape(shape)
        with np.errstate(divide="ignore"):
            self._inv = np.where(lam > 0, 1.0 / lam, 0.0)
        self._inv.flat[0] = 0.0
        self._axes = tuple(range(1, grid.d + 1))

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Minimum-norm solution of ``A A^T y = r`` for a midpoint array ``r``."""
        wk = self.workers
        rh = scipy.fft.dct(r, type=2, axis=0, norm="ortho", workers=wk)
        rh = scipy.fft.rfftn(rh, axes=self._axes, workers=wk)
        rh *= self._inv
        y = scipy.fft.irfftn(rh, s=self.grid.cells, axes=self._axes, workers=wk)
        return scipy.fft.idct(y, type=2, axis=0, norm="ortho", workers=wk)

    def free_adjoint(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        node, face = continuity_adjoint(self.grid, u)
        node[0] = 0.0
        node[-1] = 0.0
        return node, face

    def project(self, m: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project ``(m, w)``, leaving ``m[0]`` and ``m[-1]`` untouched."""
        r = continuity_apply(self.grid, StaggeredField(m, w))
        y = self.solve(r)
        gm, gw = self.free_adjoint(y)
        return m - gm, w - gw

    def multiplier(self, node: np.ndarray, face: np.ndarray) -> np.ndarray:
        """Least-squares ``u`` with ``A_free^T u`` closest to ``(node, face)``."""
        node = node.copy()
        node[0] = 0.0
        node[-1] = 0.0
        r = continuity_apply(self.grid, StaggeredField(node, face))
        return self.solve(r)


def poisson_flux(grid: GridSpec, rhs: np.ndarray) -> np.ndarray:
    """Flux ``w = grad_h phi`` with ``div_h w = rhs`` for zero-mean ``rhs`` on each leading slice."""
    axes = tuple(range(rhs.ndim - grid.d, rhs.ndim))
    lam = 0.0
    for a in range(grid.d):
        n = grid.N // 2 + 1 if a == grid.d - 1 else grid.N
        j = np.arange(n)
        lx = (2.0 - 2.0 * np.cos(2 * np.pi * j / grid.N)) / grid.h**2
        shape = [1] * grid.d
        shape[a] = n
        lam = lam + lx.reshape(shape)
    with np.errstate(divide="ignore"):
        inv = np.where(lam > 0, -1.0 / lam, 0.0)
    ph = scipy.fft.rfftn(rhs, axes=axes) * inv
    phi = scipy.fft.irfftn(ph, s=grid.cells, axes=axes)
    return face_gradient(grid, phi)
