"""Primal-dual solver for the discrete planning problem.

The discrete primal problem is

    minimize   sum_cells dt h^d Phi(I x)      over x = (m, w)
    subject to continuity_apply(x) = 0,  m[0] = m0,  m[Nt] = mT,

where ``I`` interpolates ``(m, w)`` onto the midpoint cells and ``Phi`` is the
per-cell kinetic plus coupling cost. It is solved by the Chambolle-Pock
iteration with the interpolation ``I`` as coupling operator: the primal step is
the exact projection onto the continuity constraint (see
:class:`mfgplan.grid.ContinuityProjector`) and the dual step uses
:func:`mfgplan.prox.prox_cost` through the Moreau identity.

At a saddle point the dual variable ``psi`` equals ``grad Phi(I x)``, and the
potential ``u`` is the multiplier of the continuity constraint:
``I^T psi = A^T u``. Its time and space slopes are ``-psi_m`` and ``-psi_w``,
so ``alpha = max(0, -dt u + H(grad u))`` needs no finite differences.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .grid import (
    ContinuityProjector,
    DualField,
    GridSpec,
    StaggeredField,
    average,
    average_adjoint,
    cell_gradient,
    continuity_apply,
    poisson_flux,
    time_slope,
)
from .model import AssumptionError, ProblemSpec, check_assumptions
from .prox import prox_cost

__all__ = [
    "HISTORY_FIELDS",
    "SolutionBundle",
    "SolverConfig",
    "StepSizeError",
    "coefficients",
    "eval_A",
    "eval_B",
    "recover_alpha",
    "solve",
    "terminal_values",
]

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("iteration", "B", "A", "gap", "feas", "dres")


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Iteration parameters.

    ``tau`` and ``sigma`` default to ``0.95 / ||I||`` with ``||I|| <= 1`` the norm
    of the interpolation operator; ``tau * sigma * ||I||**2 <= 1`` is enforced.
    """

    tau: float | None = None
    sigma: float | None = None
    theta: float = 1.0
    max_iter: int = 20_000
    tol_gap: float = 1e-6
    tol_feas: float = 1e-6
    check_every: int = 25
    deterministic: bool = True
    normalization: str = "mean"
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.normalization not in ("mean", "min_terminal"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("max_iter and check_every must be positive")

    def steps(self, norm: float = 1.0) -> tuple[float, float]:
        tau = 0.95 / norm if self.tau is None else self.tau
        sigma = 0.95 / norm if self.sigma is None else self.sigma
        if tau <= 0 or sigma <= 0:
            raise StepSizeError("step sizes must be positive")
        if tau * sigma * norm**2 > 1.0 + 1e-12:
            raise StepSizeError(f"tau * sigma * ||I||^2 = {tau * sigma * norm**2:.4g} exceeds 1")
        return tau, sigma


@dataclass(frozen=True)
class SolutionBundle:
    primal: StaggeredField
    dual: DualField
    history: np.ndarray
    iterations: int
    status: str
    runtime: float = 0.0
    polish_theta: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def B(self) -> float:
        return float(self.history["B"][-1])

    @property
    def A(self) -> float:
        return float(self.history["A"][-1])

    @property
    def gap(self) -> float:
        return float(self.history["gap"][-1])

    @property
    def feas(self) -> float:
        return float(self.history["feas"][-1])

    @property
    def best_gap(self) -> np.ndarray:
        """Running minimum of the absolute gap over checkpoints."""
        return np.minimum.accumulate(np.abs(self.history["gap"]))


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def coefficients(problem: ProblemSpec, grid: GridSpec) -> Coefficients:
    x = grid.cell_centers()
    h = problem.hamiltonian
    return Coefficients(problem.coupling.a(x), h.b(x), h.c(x))


def _last(v: np.ndarray, d: int) -> np.ndarray:
    """Move the component axis of a ``(Nt, d, *cells)`` array to the end."""
    return np.moveaxis(v, 1, -1)


def cell_cost(problem: ProblemSpec, coef: Coefficients, m: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``Phi`` on the midpoint cells; ``w`` has its components on axis 1."""
    kin = model.kinetic_power(coef.b, coef.c, problem.r, m, _last(w, w.shape[1]))
    return kin + model.F_power(coef.a, problem.q, m)


def eval_B(problem: ProblemSpec, grid: GridSpec, field: StaggeredField) -> float:
    """Discrete primal functional; ``+inf`` outside the domain of the kinetic term."""
    mbar, wbar = average(grid, field.m, field.w)
    with np.errstate(invalid="ignore", over="ignore"):
        vals = cell_cost(problem, coefficients(problem, grid), mbar, wbar)
    if not np.all(np.isfinite(vals)):
        return float("inf")
    return float(vals.sum() * grid.weight)


def slopes(grid: GridSpec, dual: DualField) -> tuple[np.ndarray, np.ndarray]:
    """Time and space slopes of ``u``: the stored ones, or finite differences."""
    dtu = dual.dtu if dual.dtu is not None else time_slope(grid, dual.u)
    gradu = dual.gradu if dual.gradu is not None else cell_gradient(grid, dual.u)
    return dtu, gradu


def terminal_values(grid: GridSpec, dual: DualField) -> tuple[np.ndarray, np.ndarray]:
    """``u(0)`` and ``u(T)`` by linear extrapolation from the extreme midpoints."""
    dtu, _ = slopes(grid, dual)
    u0 = dual.u[0] - 0.5 * grid.dt * dtu[0]
    uT = dual.u[-1] + 0.5 * grid.dt * dtu[-1]
    return u0, uT


def hj_residual(problem: ProblemSpec, grid: GridSpec, dtu: np.ndarray, gradu: np.ndarray) -> np.ndarray:
    """``-dt u + H(x, grad u)`` on the midpoint lattice (no clamping)."""
    coef = coefficients(problem, grid)
    H = model.H_power(coef.b, coef.c, problem.r, _last(gradu, grid.d))
    return -dtu + H


def recover_alpha(
    problem: ProblemSpec,
    grid: GridSpec,
    u: np.ndarray,
    dtu: np.ndarray | None = None,
    gradu: np.ndarray | None = None,
) -> np.ndarray:
    """Smallest feasible ``alpha = max(0, -D_t u + H(x, grad u))``.

    Without explicit slopes, ``D_t`` is the centered time difference (one-sided
    at the extreme midpoints) and ``grad`` the centered cell gradient.
    """
    dtu, gradu = slopes(grid, DualField(u, np.zeros_like(u), dtu, gradu))
    return np.maximum(hj_residual(problem, grid, dtu, gradu), 0.0)


def eval_A(problem: ProblemSpec, grid: GridSpec, dual: DualField, m0: np.ndarray, mT: np.ndarray) -> float:
    """Discrete dual functional ``sum F*(alpha) + int mT u(T) - int m0 u(0)``."""
    coef = coefficients(problem, grid)
    fstar = model.F_star_power(coef.a, problem.q, dual.alpha).sum() * grid.weight
    u0, uT = terminal_values(grid, dual)
    pairing = (np.sum(mT * uT) - np.sum(m0 * u0)) * grid.cell_volume
    return float(fstar + pairing)


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------


def positive_feasible_point(grid: GridSpec, m0: np.ndarray, mT: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A feasible pair whose interior densities are strictly positive.

    The linear interpolation is blended with the uniform density by
    ``4 s (1 - s)``; the flux solves the continuity equation slice by slice.
    """
    s = (np.arange(grid.Nt + 1) / grid.Nt).reshape((-1,) + (1,) * grid.d)
    lam = 4 * s * (1 - s)
    m = (1 - lam) * ((1 - s) * m0 + s * mT) + lam * 1.0
    rhs = -(m[1:] - m[:-1]) / grid.dt
    axes = tuple(range(1, grid.d + 1))
    rhs = rhs - rhs.mean(axis=axes, keepdims=True)
    return m, poisson_flux(grid, rhs)


def _polish(problem, grid, m, w, mpos, wpos):
    """Feasible point with ``m >= 0`` close to ``(m, w)``.

    Interior slices are clipped at zero and rescaled to the data mass; a
    Poisson flux restores the continuity equation. If a vacuum cell still
    carries flux, the pair is blended with the positive point, keeping the
    best weight from a short logarithmic list.
    """
    if np.all(m >= 0):
        mp, wp = m, w
    else:
        axes = tuple(range(1, grid.d + 1))
        mass = m[0].sum()
        mp = m.copy()
        inner = np.maximum(m[1:-1], 0.0)
        mp[1:-1] = inner * (mass / inner.sum(axis=axes, keepdims=True))
        dm = mp - m
        rhs = -(dm[1:] - dm[:-1]) / grid.dt
        rhs = rhs - rhs.mean(axis=axes, keepdims=True)
        wp = w + poisson_flux(grid, rhs)
    B = eval_B(problem, grid, StaggeredField(mp, wp))
    theta = 0.0
    base = (mp, wp)
    for t in 10.0 ** np.arange(-12, 1):
        if np.isfinite(B):
            break
        theta = float(t)
        mp = (1 - theta) * base[0] + theta * mpos
        wp = (1 - theta) * base[1] + theta * wpos
        B = eval_B(problem, grid, StaggeredField(mp, wp))
    return mp, wp, theta, B


class _State:
    """Mutable iterate; kept private so the returned bundle is immutable."""

    def __init__(self, m, w, pm, pw):
        self.m, self.w, self.pm, self.pw = m, w, pm, pw
        self.V = None


def _dual_field(problem, grid, proj, pm, pw, normalization):
    node, face = average_adjoint(grid, pm, pw)
    node[0] = 0.0
    node[-1] = 0.0
    u = proj.multiplier(node, face)
    an, af = proj.free_adjoint(u)
    num = np.sqrt(np.sum((an - node) ** 2) + np.sum((af - face) ** 2))
    den = np.sqrt(np.sum(node**2) + np.sum(face**2))
    dres = float(num / den) if den > 0 else float(num)
    dtu, gradu = -pm, -pw
    alpha = np.maximum(hj_residual(problem, grid, dtu, gradu), 0.0)
    dual = DualField(u, alpha, dtu, gradu)
    if normalization == "min_terminal":
        _, uT = terminal_values(grid, dual)
        dual = dual.shifted(-float(uT.min()))
    else:
        dual = dual.shifted(-float(u.mean()))
    return dual, dres


def _feas(grid, m, w):
    r = continuity_apply(grid, StaggeredField(m, w))
    return float(np.sqrt(np.sum(r * r) * grid.weight))


def solve(
    problem: ProblemSpec,
    grid: GridSpec,
    cfg: SolverConfig = SolverConfig(),
    m0: np.ndarray | None = None,
    mT: np.ndarray | None = None,
) -> SolutionBundle:
    """Run the primal-dual iteration until the certificates meet the tolerances.

    Parameters
    ----------
    problem, grid, cfg
        Continuous problem, discretization and iteration parameters.
    m0, mT : ndarray, optional
        Discretized endpoint densities; built from the problem presets if omitted.

    Returns
    -------
    SolutionBundle
        Feasible primal pair (``m >= 0``), dual pair with slopes, and the
        checkpoint history.
    """
    if grid.d != problem.d or grid.T != problem.T:
        raise ValueError("grid dimension/horizon do not match the problem")
    if m0 is None or mT is None:
        from .io import make_density

        m0 = make_density(problem.m0, grid) if m0 is None else m0
        mT = make_density(problem.mT, grid) if mT is None else mT
    report = check_assumptions(problem, m0, mT, grid.cell_volume)
    if not report.ok:
        raise AssumptionError(report.failures())
    tau, sigma = cfg.steps(1.0)
    gamma = 1.0 / sigma
    coef = coefficients(problem, grid)
    proj = ContinuityProjector(grid, workers=cfg.workers)
    t0 = time.perf_counter()

    s = (np.arange(grid.Nt + 1) / grid.Nt).reshape((-1,) + (1,) * grid.d)
    m = (1 - s) * m0 + s * mT
    w = np.zeros(grid.face_shape)
    m, w = proj.project(m, w)
    m[0], m[-1] = m0, mT
    mpos, wpos = positive_feasible_point(grid, m0, mT)
    pm = np.zeros(grid.mid_shape)
    pw = np.zeros(grid.face_shape)
    mbar_x, wbar_x = m, w
    Vm = None
    records = []
    status = "max_iter"
    it = 0
    fields = None
    for it in range(1, cfg.max_iter + 1):
        # dual step: psi <- prox_{sigma Phi*}(psi + sigma I xbar)
        Im, Iw = average(grid, mbar_x, wbar_x)
        qm = pm / sigma + Im
        qw = pw / sigma + Iw
        Vm, Vw = prox_cost(
            gamma, qm, _last(qw, grid.d), r=problem.r, q=problem.q,
            a=coef.a, b=coef.b, c=coef.c, m_init=Vm,
        )
        Vw = np.moveaxis(Vw, -1, 1)
        pm = sigma * (qm - Vm)
        pw = sigma * (qw - Vw)
        # primal step: projected descent along -I^T psi
        gm, gw = average_adjoint(grid, pm, pw)
        gm[0] = 0.0
        gm[-1] = 0.0
        mn, wn = proj.project(m - tau * gm, w - tau * gw)
        mn[0], mn[-1] = m0, mT
        mbar_x = mn + cfg.theta * (mn - m)
        wbar_x = wn + cfg.theta * (wn - w)
        m, w = mn, wn

        if it % cfg.check_every == 0 or it == cfg.max_iter:
            mp, wp, th, B = _polish(problem, grid, m, w, mpos, wpos)
            dual, dres = _dual_field(problem, grid, proj, pm, pw, cfg.normalization)
            A = eval_A(problem, grid, dual, m0, mT)
            gap = B + A
            feas = _feas(grid, mp, wp)
            records.append((it, B, A, gap, feas, dres))
            fields = (mp, wp, th, dual)
            log.debug("it=%d B=%.12g A=%.12g gap=%.3e feas=%.2e dres=%.2e", it, B, A, gap, feas, dres)
            if abs(gap) <= cfg.tol_gap * (1 + abs(B)) and feas <= cfg.tol_feas and dres <= cfg.tol_feas:
                status = "converged"
                break

    mp, wp, th, dual = fields
    history = np.array(records, dtype=[(k, "i8" if k == "iteration" else "f8") for k in HISTORY_FIELDS])
    return SolutionBundle(
        primal=StaggeredField(mp, wp),
        dual=dual,
        history=history,
        iterations=it,
        status=status,
        runtime=time.perf_counter() - t0,
        polish_theta=th,
        extras={"tau": tau, "sigma": sigma},
    )
