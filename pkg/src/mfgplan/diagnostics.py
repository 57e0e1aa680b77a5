"""Certificates, regularity seminorms, refinement and stability studies.

Every routine reads a :class:`~mfgplan.solver.SolutionBundle` (or its primal
and dual fields) and never mutates it. The dual slopes stored in the bundle
are used for ``D_t u`` and ``grad u`` whenever present; fields read back
from disk carry them too.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import model
from .grid import (
    GridSpec,
    average,
    cell_gradient,
    continuity_apply,
    face_gradient,
    integrate,
    m_on_midpoints,
)
from .model import Exponents, ProblemSpec, exponents
from .solver import (
    SolutionBundle,
    SolverConfig,
    coefficients,
    eval_A,
    eval_B,
    hj_residual,
    slopes,
    solve,
    terminal_values,
)

__all__ = [
    "DiagnosticsReport",
    "RefinementTable",
    "StabilityTable",
    "diagnose",
    "energy_identity_residual",
    "hj_violation",
    "holder_estimate",
    "optimality_relations",
    "refinement_study",
    "space_seminorms",
    "stability_experiment",
    "probe_fields",
    "time_seminorms",
    "total_variation",
]


@dataclass(frozen=True)
class DiagnosticsReport:
    B: float
    A: float
    gap: float
    feas: float
    energy_identity: float
    hj_violation: float
    opt_rel_w: float
    opt_rel_alpha: float
    seminorm_space_m: float
    seminorm_space_u: float
    seminorm_time_m: float
    seminorm_time_u: float
    holder: float
    total_variation_u: float
    eps_mask: float
    tau_interior: float
    mask_fraction: float

    def as_dict(self) -> dict:
        return asdict(self)


def _bundle_parts(bundle):
    if isinstance(bundle, SolutionBundle):
        return bundle.primal, bundle.dual
    return bundle


def _wlast(v: np.ndarray) -> np.ndarray:
    return np.moveaxis(v, 1, -1)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


def energy_identity_residual(problem: ProblemSpec, grid: GridSpec, bundle) -> float:
    """Relative defect of the weak-solution energy equality.

    ``|int int m [f(m) + H*(D_xi H(grad u))] + int (mT u(T) - m0 u(0))| / (1 + |B|)``
    with ``m`` interpolated to the midpoints.
    """
    primal, dual = _bundle_parts(bundle)
    coef = coefficients(problem, grid)
    mbar = m_on_midpoints(grid, primal.m)
    _, gradu = slopes(grid, dual)
    g = _wlast(gradu)
    p = model.grad_H_power(coef.b, problem.r, g)
    hstar = model.H_star_power(coef.b, coef.c, problem.r, p)
    f = model.f_power(coef.a, problem.q, np.maximum(mbar, 0.0))
    bulk = float(np.sum(mbar * (f + hstar)) * grid.weight)
    u0, uT = terminal_values(grid, dual)
    ends = float((np.sum(primal.m[-1] * uT) - np.sum(primal.m[0] * u0)) * grid.cell_volume)
    B = eval_B(problem, grid, primal)
    return abs(bulk + ends) / (1.0 + abs(B))


def hj_violation(problem: ProblemSpec, grid: GridSpec, bundle, against: str = "f") -> float:
    """``L^1`` norm of ``max(0, -D_t u + H(grad u) - f(m))`` over the midpoint lattice, divided by ``T``.

    With ``against="alpha"`` the stored ``alpha`` replaces ``f(m)``.
    """
    primal, dual = _bundle_parts(bundle)
    dtu, gradu = slopes(grid, dual)
    res = hj_residual(problem, grid, dtu, gradu)
    if against == "alpha":
        ref = dual.alpha
    else:
        coef = coefficients(problem, grid)
        ref = model.f_power(coef.a, problem.q, np.maximum(m_on_midpoints(grid, primal.m), 0.0))
    return integrate(grid, np.maximum(res - ref, 0.0), "mid") / grid.T


def _rel_l1(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    num = float(np.sum(np.abs(x - y)[mask]))
    den = max(float(np.sum(np.abs(x)[mask])), float(np.sum(np.abs(y)[mask])))
    return num / den if den > 0 else num


def support_mask(grid: GridSpec, m: np.ndarray, eps_mask: float = 1e-6) -> np.ndarray:
    """Midpoint cells where the interpolated density exceeds ``eps_mask * max m``."""
    mbar = m_on_midpoints(grid, m)
    return mbar > eps_mask * float(np.max(m))


def optimality_relations(problem: ProblemSpec, grid: GridSpec, bundle, eps_mask: float = 1e-6) -> tuple[float, float]:
    """Relative ``L^1`` residuals of ``w = -m D_xi H(grad u)`` and ``alpha = f(m)`` on the support.

    The flux is averaged to cell centers; the support is
    ``{m > eps_mask * max m}`` on the midpoint lattice. Each residual is
    normalized by the larger of the two compared norms.
    """
    primal, dual = _bundle_parts(bundle)
    coef = coefficients(problem, grid)
    mbar, wbar = average(grid, primal.m, primal.w)
    mask = mbar > eps_mask * float(np.max(primal.m))
    _, gradu = slopes(grid, dual)
    flux = -mbar[..., None] * model.grad_H_power(coef.b, problem.r, _wlast(gradu))
    mask_w = np.broadcast_to(mask[..., None], flux.shape)
    res_w = _rel_l1(_wlast(wbar), flux, mask_w)
    f = model.f_power(coef.a, problem.q, np.maximum(mbar, 0.0))
    res_a = _rel_l1(dual.alpha, f, mask)
    return res_w, res_a


# ---------------------------------------------------------------------------
# regularity
# ---------------------------------------------------------------------------


def _j1_gradient(problem, grid, dual):
    _, gradu = slopes(grid, dual)
    j = model.j1(problem.hamiltonian, _wlast(gradu))  # (Nt, *cells, d)
    return np.moveaxis(j, -1, 1)  # (Nt, d, *cells)


def space_seminorms(problem: ProblemSpec, grid: GridSpec, bundle) -> tuple[float, float]:
    """``s_m = (2/q) ||grad(m^(q/2))||`` and ``s_u = ||sqrt(m) grad j1(grad u)||`` in ``L^2``."""
    primal, dual = _bundle_parts(bundle)
    q = problem.q
    mp = np.maximum(primal.m, 0.0) ** (q / 2)
    gm = face_gradient(grid, mp)
    s_m = (2.0 / q) * np.sqrt(integrate(grid, np.sum(gm * gm, axis=1), "node"))
    j = _j1_gradient(problem, grid, dual)
    mbar = np.maximum(m_on_midpoints(grid, primal.m), 0.0)
    # Jacobian of j1(grad u): centered differences of every component
    jac = cell_gradient(grid, j)  # (Nt, d, d, *cells)
    sq = np.sum(jac * jac, axis=(1, 2))
    s_u = np.sqrt(integrate(grid, mbar * sq, "mid"))
    return float(s_m), float(s_u)


def time_seminorms(problem: ProblemSpec, grid: GridSpec, bundle, tau_interior: float | None = None) -> tuple[float, float]:
    """``L^2`` norms of ``D_t(m^(q/2))`` and ``sqrt(m) D_t j1(grad u)`` on ``[tau, T - tau]``."""
    if tau_interior is None:
        tau_interior = grid.T / 8
    if not 0 < tau_interior < grid.T / 2:
        raise ValueError("tau_interior must lie in (0, T/2)")
    primal, dual = _bundle_parts(bundle)
    q = problem.q
    lo, hi = tau_interior - 1e-12 * grid.T, grid.T - tau_interior + 1e-12 * grid.T
    mp = np.maximum(primal.m, 0.0) ** (q / 2)
    dm = (mp[1:] - mp[:-1]) / grid.dt
    tm = grid.mid_times()
    keep = (tm >= lo) & (tm <= hi)
    t_m = np.sqrt(np.sum(dm[keep] ** 2) * grid.weight)
    j = _j1_gradient(problem, grid, dual)
    dj = (j[1:] - j[:-1]) / grid.dt  # at interior nodes k = 1..Nt-1
    tn = grid.node_times()[1:-1]
    mnode = np.maximum(primal.m[1:-1], 0.0)
    keep = (tn >= lo) & (tn <= hi)
    t_u = np.sqrt(np.sum((mnode[:, None] * dj * dj)[keep]) * grid.weight)
    return float(t_m), float(t_u)


def holder_estimate(grid: GridSpec, u: np.ndarray, exps: Exponents, samples: int = 20_000, seed: int = 0) -> float:
    """Empirical sup of the Hölder-type ratio over random pairs ``t1 < t2 <= T - dt``.

    The ratio is ``[u(t1,x) - u(t2,y)] / [|x-y|^r' (t2-t1)^(1-r') + (t2-t1)^nu + 1]``
    with the torus distance ``|x - y|``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    tm = grid.mid_times()
    valid = np.flatnonzero(tm <= grid.T - grid.dt + 1e-12)
    if valid.size < 2:
        return 0.0
    k1 = rng.choice(valid, size=samples)
    k2 = rng.choice(valid, size=samples)
    lo, hi = np.minimum(k1, k2), np.maximum(k1, k2)
    ok = lo < hi
    lo, hi = lo[ok], hi[ok]
    n = lo.size
    if n == 0:
        return 0.0
    cells = np.stack([rng.integers(0, grid.N, size=(n, grid.d)) for _ in range(2)])
    x = (cells[0] + 0.5) * grid.h
    y = (cells[1] + 0.5) * grid.h
    diff = np.abs(x - y)
    diff = np.minimum(diff, 1.0 - diff)
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    s = tm[hi] - tm[lo]
    rc = exps.r_conj
    den = dist**rc * s ** (1.0 - rc) + s**exps.nu + 1.0
    u1 = u[(lo, *cells[0].T)]
    u2 = u[(hi, *cells[1].T)]
    return float(np.max((u1 - u2) / den))


def total_variation(grid: GridSpec, u: np.ndarray) -> float:
    """Discrete space-time total variation of ``u`` on the midpoint lattice."""
    tv_t = np.sum(np.abs(np.diff(u, axis=0))) * grid.cell_volume
    g = face_gradient(grid, u)
    tv_x = np.sum(np.sqrt(np.sum(g * g, axis=1))) * grid.weight
    return float(tv_t + tv_x)


def diagnose(
    problem: ProblemSpec,
    grid: GridSpec,
    bundle,
    eps_mask: float = 1e-6,
    tau_interior: float | None = None,
    holder_samples: int = 20_000,
) -> DiagnosticsReport:
    """Full certificate and regularity report for a primal-dual pair."""
    primal, dual = _bundle_parts(bundle)
    if tau_interior is None:
        tau_interior = grid.T / 8
    B = eval_B(problem, grid, primal)
    A = eval_A(problem, grid, dual, primal.m[0], primal.m[-1])
    r = continuity_apply(grid, primal)
    feas = float(np.sqrt(np.sum(r * r) * grid.weight))
    s_m, s_u = space_seminorms(problem, grid, (primal, dual))
    t_m, t_u = time_seminorms(problem, grid, (primal, dual), tau_interior)
    w_res, a_res = optimality_relations(problem, grid, (primal, dual), eps_mask)
    mask = support_mask(grid, primal.m, eps_mask)
    return DiagnosticsReport(
        B=B,
        A=A,
        gap=B + A,
        feas=feas,
        energy_identity=energy_identity_residual(problem, grid, (primal, dual)),
        hj_violation=hj_violation(problem, grid, (primal, dual)),
        opt_rel_w=w_res,
        opt_rel_alpha=a_res,
        seminorm_space_m=s_m,
        seminorm_space_u=s_u,
        seminorm_time_m=t_m,
        seminorm_time_u=t_u,
        holder=holder_estimate(grid, dual.u, exponents(problem), holder_samples),
        total_variation_u=total_variation(grid, dual.u),
        eps_mask=eps_mask,
        tau_interior=tau_interior,
        mask_fraction=float(mask.mean()),
    )


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _discretize(problem: ProblemSpec, grid: GridSpec):
    from .io import make_density

    return make_density(problem.m0, grid), make_density(problem.mT, grid)


@dataclass
class RefinementTable:
    rows: list[dict] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)

    def spread(self, key: str) -> float:
        """Ratio of the largest to the smallest value of a column."""
        v = np.abs(self.column(key))
        return float(v.max() / v.min()) if v.min() > 0 else float("inf") if v.max() > 0 else 1.0

    def B_cauchy(self) -> bool:
        """Successive relative differences of ``B`` are decreasing."""
        b = self.column("B")
        if b.size < 3:
            return True
        diffs = np.abs(np.diff(b)) / np.abs(b[1:])
        return bool(np.all(np.diff(diffs) <= 0))


def refinement_study(
    problem: ProblemSpec,
    cfg: SolverConfig,
    N_list,
    Nt_list,
    eps_mask: float = 1e-6,
    tau_interior: float | None = None,
) -> RefinementTable:
    """Solve and diagnose at each resolution ``(N, Nt)``; lists must be ascending."""
    N_list, Nt_list = list(N_list), list(Nt_list)
    if len(N_list) != len(Nt_list):
        raise ValueError("N and Nt lists must have equal length")
    if N_list != sorted(N_list) or Nt_list != sorted(Nt_list):
        raise ValueError("resolution lists must be ascending")
    table = RefinementTable()
    for N, Nt in zip(N_list, Nt_list):
        grid = GridSpec(problem.d, N, Nt, problem.T)
        bundle = solve(problem, grid, cfg)
        rep = diagnose(problem, grid, bundle, eps_mask, tau_interior)
        row = {"N": N, "Nt": Nt, "status": bundle.status, "iterations": bundle.iterations,
               "runtime": bundle.runtime}
        row.update(rep.as_dict())
        table.rows.append(row)
    return table


def probe_fields(grid: GridSpec) -> list[tuple[str, np.ndarray]]:
    """Low-frequency trigonometric test fields on the node lattice."""
    t = grid.node_times().reshape((-1,) + (1,) * grid.d) / grid.T
    x = grid.cell_centers()
    out = []
    for a in range(grid.d):
        xa = x[..., a][None]
        name = "xy"[a]
        out += [
            (f"cos(2pi {name})", np.cos(2 * np.pi * xa) + 0 * t),
            (f"sin(2pi {name})", np.sin(2 * np.pi * xa) + 0 * t),
            (f"cos(4pi {name})", np.cos(4 * np.pi * xa) + 0 * t),
            (f"sin(pi t) cos(2pi {name})", np.sin(np.pi * t) * np.cos(2 * np.pi * xa)),
            (f"cos(pi t) sin(2pi {name})", np.cos(np.pi * t) * np.sin(2 * np.pi * xa)),
        ]
    return out


@dataclass
class StabilityTable:
    eps: list[float]
    B: list[float]
    lq_norm: list[float]
    pairings: dict[str, list[float]]
    status: list[str]
    atol: float = 0.0

    def distances(self, name: str) -> np.ndarray:
        """``|pairing(eps) - pairing(0)|`` for each nonzero ``eps`` in schedule order."""
        p = np.asarray(self.pairings[name])
        return np.abs(p[1:] - p[0])

    def monotone(self) -> dict[str, bool]:
        """Distances to the base pairing are non-increasing along the schedule, up to ``atol``."""
        return {k: bool(np.all(np.diff(self.distances(k)) <= self.atol)) for k in self.pairings}

    def B_rel_change(self) -> np.ndarray:
        b = np.asarray(self.B)
        return np.abs(b[1:] - b[0]) / abs(b[0])

    def rows(self) -> list[dict]:
        out = []
        for i, e in enumerate(self.eps):
            row = {"eps": e, "B": self.B[i], "lq_norm": self.lq_norm[i], "status": self.status[i]}
            row.update({k: v[i] for k, v in self.pairings.items()})
            out.append(row)
        return out


def stability_experiment(
    problem: ProblemSpec,
    grid: GridSpec,
    cfg: SolverConfig,
    eps_list=(0.2, 0.1, 0.05),
    base: SolutionBundle | None = None,
) -> StabilityTable:
    """Solve with endpoints mixed toward the uniform density, ``m^eps = (1 - eps) m + eps``.

    The ``eps = 0`` row is the unperturbed problem (``base`` when supplied). The
    monotonicity tolerance ``atol`` is ``10 tol_gap (1 + |B_0|)``, the solver's
    own accuracy, so pairings that vanish by symmetry do not flip the verdict.
    """
    eps_list = [float(e) for e in eps_list]
    if any(not 0.0 < e <= 1.0 for e in eps_list):
        raise ValueError("perturbation sizes must lie in (0, 1]")
    from dataclasses import replace

    fields = probe_fields(grid)
    table = StabilityTable([0.0] + eps_list, [], [], {name: [] for name, _ in fields}, [])
    for e in table.eps:
        prob = problem if e == 0.0 else replace(problem, m0=problem.m0.mixed(e), mT=problem.mT.mixed(e))
        bundle = base if (e == 0.0 and base is not None) else solve(prob, grid, cfg)
        m = bundle.primal.m
        table.B.append(eval_B(prob, grid, bundle.primal))
        table.lq_norm.append(integrate(grid, np.maximum(m, 0.0) ** problem.q, "node") ** (1.0 / problem.q))
        table.status.append(bundle.status)
        for name, phi in fields:
            table.pairings[name].append(integrate(grid, phi * m, "node"))
    table.atol = 10 * cfg.tol_gap * (1 + abs(table.B[0]))
    return table
