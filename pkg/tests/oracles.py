"""Independent reference computations used by the tests.

Nothing here imports the package: each oracle re-derives its quantity from
scratch (dense matrices, brute-force search, pure bisection, exact rationals).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.optimize

# values produced by the oracles below and frozen here; the tests recompute
# them as well, so a drift in either side is caught
TINY_REFERENCE_B = 0.7268775697294128
HSTAR_EXAMPLE = 8.0 / (1.5 * np.sqrt(2.0)) + 1.0


def gaussian_cells(N: int, center: float, width: float) -> np.ndarray:
    x = (np.arange(N) + 0.5) / N
    d = (x - center + 0.5) % 1.0 - 0.5
    g = np.exp(-d * d / (2 * width * width))
    return g / (g.sum() / N)


def dense_continuity_1d(N: int, Nt: int, T: float) -> np.ndarray:
    """Matrix of the 1-D continuity stencil acting on ``[m (all nodes), w (all faces)]``."""
    h, dt = 1.0 / N, T / Nt
    nm, nw = (Nt + 1) * N, Nt * N
    A = np.zeros((Nt * N, nm + nw))
    for k in range(Nt):
        for i in range(N):
            r = k * N + i
            A[r, (k + 1) * N + i] += 1 / dt
            A[r, k * N + i] -= 1 / dt
            A[r, nm + k * N + i] += 1 / h
            A[r, nm + k * N + (i - 1) % N] -= 1 / h
    return A


def dense_continuity_2d(N: int, Nt: int, T: float) -> np.ndarray:
    """Same for ``d = 2``; faces ordered ``(k, axis, i, j)``."""
    h, dt = 1.0 / N, T / Nt
    nc = N * N
    nm, nw = (Nt + 1) * nc, Nt * 2 * nc
    A = np.zeros((Nt * nc, nm + nw))
    for k in range(Nt):
        for i in range(N):
            for j in range(N):
                r = k * nc + i * N + j
                A[r, (k + 1) * nc + i * N + j] += 1 / dt
                A[r, k * nc + i * N + j] -= 1 / dt
                base = nm + k * 2 * nc
                A[r, base + i * N + j] += 1 / h
                A[r, base + ((i - 1) % N) * N + j] -= 1 / h
                A[r, base + nc + i * N + j] += 1 / h
                A[r, base + nc + i * N + (j - 1) % N] -= 1 / h
    return A


def tiny_reference(N=8, Nt=8, T=1.0, c0=0.3, c1=0.7, width=0.1, floor=1e-9) -> float:
    """Minimum of the discrete quadratic problem with the floor ``m >= floor`` on free nodes.

    The continuity constraint is eliminated through an explicit null-space
    basis and the floor is handled by SLSQP.
    """
    h, dt = 1.0 / N, T / Nt
    m0, mT = gaussian_cells(N, c0, width), gaussian_cells(N, c1, width)
    nm, nw = (Nt - 1) * N, Nt * N

    def mi(k, i):
        return (k - 1) * N + i

    def wi(k, i):
        return nm + k * N + (i % N)

    A = np.zeros((Nt * N, nm + nw))
    b = np.zeros(Nt * N)
    M = np.zeros((Nt * N, nm + nw))
    mc = np.zeros(Nt * N)
    W = np.zeros((Nt * N, nm + nw))
    for k in range(Nt):
        for i in range(N):
            r = k * N + i
            if k + 1 <= Nt - 1:
                A[r, mi(k + 1, i)] += 1 / dt
            else:
                b[r] -= mT[i] / dt
            if k >= 1:
                A[r, mi(k, i)] -= 1 / dt
            else:
                b[r] += m0[i] / dt
            A[r, wi(k, i)] += 1 / h
            A[r, wi(k, i - 1)] -= 1 / h
            for kk in (k, k + 1):
                if kk == 0:
                    mc[r] += 0.5 * m0[i]
                elif kk == Nt:
                    mc[r] += 0.5 * mT[i]
                else:
                    M[r, mi(kk, i)] += 0.5
            W[r, wi(k, i)] += 0.5
            W[r, wi(k, i - 1)] += 0.5
    zp = np.linalg.lstsq(A, b, rcond=None)[0]
    Z = scipy.linalg.null_space(A)
    wgt = dt * h
    MZ, WZ = M @ Z, W @ Z
    mp, wp = M @ zp + mc, W @ zp

    def f(y):
        mb = mp + MZ @ y
        wb = wp + WZ @ y
        val = wgt * np.sum(wb**2 / (2 * mb) + mb**2 / 2)
        gm = wgt * (-(wb**2) / (2 * mb**2) + mb)
        gw = wgt * (wb / mb)
        return val, MZ.T @ gm + WZ.T @ gw

    SZ, sp = Z[:nm], zp[:nm]
    cons = {"type": "ineq", "fun": lambda y: sp + SZ @ y - floor, "jac": lambda y: SZ}
    lin = np.concatenate([(1 - k / Nt) * m0 + k / Nt * mT for k in range(1, Nt)] + [np.zeros(nw)])
    y0 = Z.T @ (lin - zp)
    res = scipy.optimize.minimize(
        f, y0, jac=True, method="SLSQP", constraints=[cons], options={"ftol": 1e-16, "maxiter": 5000}
    )
    return float(res.fun)


def prox_objective(m, w, mt, wt, gamma, r, q, a=1.0, b=1.0, c=0.0):
    """Brute-force objective ``Phi(m, w) + |(m, w) - (mt, wt)|^2 / (2 gamma)`` for scalar flux."""
    rc = r / (r - 1)
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        kin = b ** (1 - rc) * np.abs(w) ** rc * m ** (1 - rc) / rc + c * m
    kin = np.where(m > 0, kin, np.where(w == 0, 0.0, np.inf))
    F = a * np.maximum(m, 0) ** q / q
    val = kin + F + ((m - mt) ** 2 + (w - wt) ** 2) / (2 * gamma)
    return np.where(m < 0, np.inf, val)


def _golden_min_w(m, lo, hi, args, iters=60):
    """Vectorized golden-section search over ``w`` for every density in ``m`` (convex in ``w``)."""
    g = (np.sqrt(5.0) - 1) / 2
    lo, hi = lo + 0 * m, hi + 0 * m
    for _ in range(iters):
        x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
        left = prox_objective(m, x1, *args) <= prox_objective(m, x2, *args)
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
    return prox_objective(m, 0.5 * (lo + hi), *args)


def prox_grid_search(mt, wt, gamma, r, q, a=1.0, b=1.0, c=0.0, n=41, rounds=9):
    """Brute-force prox value: grid over ``m`` of the profile ``min_w`` objective, zooming on the bracket.

    The profile is convex in ``m`` (partial minimization of a jointly convex
    function), so the minimizer always lies between the neighbours of the best
    grid point. The search box comes from comparing with the candidate ``(0, 0)``:
    ``|(m, w) - (mt, wt)| <= |(mt, wt)|`` at the minimizer. Array inputs are
    treated as a batch of independent queries.
    """
    mt, wt, gamma, a, b, c = (np.atleast_1d(np.asarray(v, dtype=float))[:, None]
                              for v in np.broadcast_arrays(mt, wt, gamma, a, b, c))
    args = (mt, wt, gamma, r, q, a, b, c)
    rad = np.hypot(mt, wt) + 1e-12
    mlo, mhi = np.maximum(0.0, mt - rad), np.maximum(mt + rad, 1e-300)
    wlo, whi = wt - rad, wt + rad
    best = prox_objective(0.0 * mt, 0.0 * wt, *args)[:, 0]
    rows = np.arange(mt.shape[0])
    s = np.linspace(0.0, 1.0, n)[None, :]
    for _ in range(rounds):
        ms = mlo + (mhi - mlo) * s
        prof = _golden_min_w(ms, wlo, whi, args)
        k = np.argmin(prof, axis=1)
        best = np.minimum(best, prof[rows, k])
        mlo = ms[rows, np.maximum(k - 1, 0)][:, None]
        mhi = ms[rows, np.minimum(k + 1, n - 1)][:, None]
    return float(best[0]) if best.size == 1 else best


def bisection_root(g, lo, hi, tol=1e-14, max_iter=400):
    """Pure bisection, no derivative information."""
    glo = g(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def exact_exponents(r: Fraction, q: Fraction, d: int) -> tuple[Fraction, Fraction, Fraction, Fraction]:
    rc = r / (r - 1)
    qc = q / (q - 1)
    ell = rc * q / (rc + q - 1)
    nu = (r - d * (q - 1)) / (d * (q - 1) * (r - 1) + r * q)
    return rc, qc, ell, nu


def conjugate_by_grid(b: float, c: float, r: float, zeta_norm: float) -> float:
    """``sup_s zeta s - (b s^r / r - c)`` over a fine 1-D grid of speeds, then golden refinement."""
    s = np.linspace(0.0, 10.0 * (1 + zeta_norm), 200_001)
    vals = zeta_norm * s - (b * s**r / r - c)
    k = int(np.argmax(vals))
    lo, hi = s[max(k - 1, 0)], s[min(k + 1, s.size - 1)]
    res = scipy.optimize.minimize_scalar(lambda t: -(zeta_norm * t - (b * t**r / r - c)), bounds=(lo, hi),
                                         method="bounded", options={"xatol": 1e-14})
    return float(max(vals[k], -res.fun))
