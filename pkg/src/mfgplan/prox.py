"""Proximal map of the per-cell cost ``Phi(m, w) = m H*(x, -w/m) + F(x, m)``.

For the power presets the joint minimization of ``Phi + |. - query|^2 / (2 gamma)``
reduces to one monotone scalar equation in ``m``:

* for fixed ``m > 0`` the optimal flux is ``w = wt * p m / |wt|``, where the speed
  ``p`` solves ``beta p^(r'-1) + (p m - |wt|) / gamma = 0`` with ``beta = b^(1-r')``
  (closed form ``p = |wt| / (m + gamma beta)`` when ``r' = 2``);
* the envelope derivative in ``m`` is
  ``g(m) = c - beta (r'-1)/r' p^r' + a m^(q-1) + (m - mt) / gamma``,
  which is increasing, so the minimizer is ``(0, 0)`` when ``g(0+) >= 0`` and the
  root of ``g`` otherwise.

Everything is vectorized over cells; the solver calls :func:`prox_cost` once per
iteration on the whole grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.optimize

from .model import ProblemSpec, conj

__all__ = [
    "ProxError",
    "ProxQuery",
    "newton_bisect",
    "prox_cost",
    "prox_query",
    "solve_scalar_monotone",
]


class ProxError(RuntimeError):
    """Root finder failure; ``query`` holds the offending inputs."""

    def __init__(self, msg: str, query: dict):
        super().__init__(msg)
        self.query = query


@dataclass(frozen=True)
class ProxQuery:
    gamma: float
    x: tuple[float, ...]
    m_tilde: float
    w_tilde: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def newton_bisect(
    fun: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    lo: np.ndarray,
    hi: np.ndarray,
    x0: np.ndarray | None = None,
    rtol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Vectorized safeguarded Newton for increasing ``g`` with ``g(lo) <= 0 <= g(hi)``.

    ``fun(x, idx)`` returns ``(g, g')`` at the points ``x`` for the flat
    element indices ``idx``. Newton steps that leave the current bracket are
    replaced by bisection. Converged elements are dropped from the active set.
    """
    lo = np.array(lo, dtype=float).ravel()
    hi = np.array(hi, dtype=float).ravel()
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float).ravel(), lo, hi)
    idx = np.arange(x.size)
    for _ in range(max_iter):
        if idx.size == 0:
            return x
        xa, la, ha = x[idx], lo[idx], hi[idx]
        g, dg = fun(xa, idx)
        neg = g < 0
        la = np.where(neg, xa, la)
        ha = np.where(neg, ha, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = g / dg
        xn = xa - step
        scale = np.maximum(1.0, np.abs(xa))
        # a converged Newton step may round onto the bracket end; accept it as is
        tiny = np.abs(step) <= rtol * scale
        bad = ~tiny & (~np.isfinite(xn) | (xn <= la) | (xn >= ha))
        xn = np.where(bad, 0.5 * (la + ha), xn)
        xn = np.where(tiny | (g == 0), np.clip(xn, la, ha), xn)
        done = tiny | (ha - la <= rtol * scale) | (g == 0)
        x[idx], lo[idx], hi[idx] = xn, la, ha
        idx = idx[~done]
    if idx.size:
        raise ProxError(
            f"safeguarded Newton did not converge in {max_iter} iterations",
            {"x": x[idx[:5]].tolist(), "lo": lo[idx[:5]].tolist(), "hi": hi[idx[:5]].tolist()},
        )
    return x


def solve_scalar_monotone(
    g: Callable[[float], float],
    bracket: tuple[float, float],
    tol: float = 1e-12,
    dg: Callable[[float], float] | None = None,
) -> float:
    """Root of a continuous scalar map on a sign-changing bracket.

    With a derivative ``dg`` the root is found by safeguarded Newton; without
    one, Brent's method is used.
    """
    lo, hi = map(float, bracket)
    glo, ghi = g(lo), g(hi)
    if not lo <= hi or glo * ghi > 0:
        raise ValueError(f"invalid bracket [{lo}, {hi}] with g values ({glo}, {ghi})")
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    sign = 1.0 if glo < 0 else -1.0
    if dg is None:
        return float(scipy.optimize.brentq(g, lo, hi, xtol=tol, rtol=max(tol, 4 * np.finfo(float).eps)))

    def fun(x, _idx):
        return sign * np.array([g(float(x[0]))]), sign * np.array([dg(float(x[0]))])

    return float(newton_bisect(fun, np.array([lo]), np.array([hi]), rtol=tol)[0])


def _speed(beta, gamma, rc, m, W, p0, rtol, max_iter):
    """Optimal speed ``p(m)`` for every element; closed form when ``r' = 2``."""
    if rc == 2.0:
        return W / (m + gamma * beta)
    p = np.zeros_like(m)
    pos = (W > 0) & (m > 0)
    small = (W > 0) & (m <= 0)
    p[small] = p0[small]
    if np.any(pos):
        bb, WW, mm = beta[pos], W[pos], m[pos]

        def fun(pp, idx):
            val = bb[idx] * pp ** (rc - 1.0) + (pp * mm[idx] - WW[idx]) / gamma
            with np.errstate(divide="ignore"):
                der = bb[idx] * (rc - 1.0) * pp ** (rc - 2.0) + mm[idx] / gamma
            return val, der

        hi = np.minimum(p0[pos], WW / mm)
        p[pos] = newton_bisect(fun, np.zeros_like(hi), hi, x0=hi, rtol=rtol, max_iter=max_iter)
    return p


def prox_cost(
    gamma: float,
    mt: np.ndarray,
    wt: np.ndarray,
    *,
    r: float,
    q: float,
    a: np.ndarray | float = 1.0,
    b: np.ndarray | float = 1.0,
    c: np.ndarray | float = 0.0,
    m_init: np.ndarray | None = None,
    rtol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint proximal map of ``Phi`` with step ``gamma`` on arrays of queries.

    Parameters
    ----------
    gamma : float
        Step, positive.
    mt : ndarray
        Density components of the queries, any shape ``S``.
    wt : ndarray
        Flux components, shape ``S + (d,)``.
    r, q : float
        Hamiltonian and coupling exponents.
    a, b, c : ndarray or float
        Coefficient values, broadcastable to ``S``.
    m_init : ndarray, optional
        Warm start for the density root (the previous output, typically).

    Returns
    -------
    m, w : ndarray
        Minimizer, ``m >= 0`` and ``w = 0`` wherever ``m = 0``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    mt = np.asarray(mt, dtype=float)
    wt = np.asarray(wt, dtype=float)
    shape = mt.shape
    rc = conj(r)
    a = np.broadcast_to(np.asarray(a, dtype=float), shape).ravel()
    b = np.broadcast_to(np.asarray(b, dtype=float), shape).ravel()
    c = np.broadcast_to(np.asarray(c, dtype=float), shape).ravel()
    beta = b ** (1.0 - rc)
    mf = mt.ravel()
    W = np.sqrt(np.sum(wt * wt, axis=-1)).ravel()

    p0 = (W / (gamma * beta)) ** (1.0 / (rc - 1.0))
    kin0 = beta * (rc - 1.0) / rc * p0**rc
    g0 = c - kin0 - mf / gamma
    interior = np.flatnonzero(g0 < 0)

    m = np.zeros_like(mf)
    if interior.size:
        ai, bi, ci, Wi, mti, p0i = a[interior], beta[interior], c[interior], W[interior], mf[interior], p0[interior]
        hi = np.maximum(mti, 0.0) + gamma * kin0[interior] + 1.0
        lo = np.zeros_like(hi)
        x0 = None
        if m_init is not None:
            x0 = np.asarray(m_init, dtype=float).ravel()[interior]

        def fun(mm, idx):
            bb, WW = bi[idx], Wi[idx]
            p = _speed(bb, gamma, rc, mm, WW, p0i[idx], rtol, max_iter)
            with np.errstate(divide="ignore", invalid="ignore"):
                ppow = p**rc
                val = ci[idx] - bb * (rc - 1.0) / rc * ppow + ai[idx] * mm ** (q - 1.0) + (mm - mti[idx]) / gamma
                # the coupling derivative blows up at m = 0 when q < 2; keep it finite
                dF = ai[idx] * (q - 1.0) * np.where(mm > 0, mm ** (q - 2.0), 0.0)
                dkin = np.where(
                    p > 0, bb * (rc - 1.0) * ppow / (gamma * bb * (rc - 1.0) * p ** (rc - 2.0) + mm), 0.0
                )
            return val, dkin + dF + 1.0 / gamma

        try:
            m[interior] = newton_bisect(fun, lo, hi, x0=x0, rtol=rtol, max_iter=max_iter)
        except ProxError as err:
            err.query.update(gamma=gamma, r=r, q=q)
            raise

    pfin = np.zeros_like(m)
    if interior.size:
        pfin[interior] = _speed(beta[interior], gamma, rc, m[interior], W[interior], p0[interior], rtol, max_iter)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where((W > 0) & (m > 0), pfin * m / W, 0.0)
    w = wt * shrink.reshape(shape)[..., None]
    return m.reshape(shape), w


def prox_query(query: ProxQuery, problem: ProblemSpec) -> tuple[float, np.ndarray]:
    """Scalar front end to :func:`prox_cost` for a single cell."""
    x = np.asarray(query.x, dtype=float).reshape(1, -1)
    h, cpl = problem.hamiltonian, problem.coupling
    m, w = prox_cost(
        query.gamma,
        np.array([query.m_tilde]),
        np.asarray(query.w_tilde, dtype=float).reshape(1, -1),
        r=h.r,
        q=cpl.q,
        a=cpl.a(x),
        b=h.b(x),
        c=h.c(x),
    )
    return float(m[0]), w[0]
