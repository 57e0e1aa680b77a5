"""Hamiltonian and coupling families, their conjugates, and the standing assumptions.

Only the separable power family is provided::

    H(x, xi)  = b(x) |xi|^r / r - c(x)
    f(x, m)   = a(x) m^(q-1)

so that every conjugate, gradient and perspective quantity has a closed form.
Vector-valued arguments carry their components on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "AssumptionError",
    "AssumptionReport",
    "CouplingSpec",
    "DensityPreset",
    "Exponents",
    "HamiltonianSpec",
    "HypothesisCheck",
    "ProblemSpec",
    "SpatialField",
    "check_assumptions",
    "conj",
    "eval_F",
    "eval_F_star",
    "eval_H",
    "eval_H_star",
    "eval_f",
    "exponents",
    "grad_xi_H",
    "j1",
    "j2",
    "kinetic",
]


def conj(s: float) -> float:
    """Conjugate exponent s' = s / (s - 1)."""
    return s / (s - 1.0)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(v), axis=-1))


def _safe_pow(x: np.ndarray, p: float) -> np.ndarray:
    # x >= 0; 0**p is taken as 0 for p > 0 and the value is never used for p <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(x, p)
    return np.where(x > 0, out, 0.0)


# ---------------------------------------------------------------------------
# spatial coefficient fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialField:
    """A smooth periodic coefficient field on the unit torus.

    ``kind="constant"`` uses ``value``; ``kind="cosine"`` evaluates
    ``mean + amplitude * cos(2 pi frequency x_1)``.
    """

    kind: str = "constant"
    value: float = 1.0
    mean: float = 1.0
    amplitude: float = 0.0
    frequency: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown coefficient preset {self.kind!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(self.value))
        return self.mean + self.amplitude * np.cos(2 * np.pi * self.frequency * x[..., 0])

    def minimum(self) -> float:
        if self.kind == "constant":
            return float(self.value)
        return self.mean - abs(self.amplitude)

    def maximum(self) -> float:
        if self.kind == "constant":
            return float(self.value)
        return self.mean + abs(self.amplitude)

    @classmethod
    def constant(cls, value: float) -> "SpatialField":
        return cls(kind="constant", value=float(value))


@dataclass(frozen=True)
class DensityPreset:
    """Endpoint density description; discretized by :func:`mfgplan.io.make_density`."""

    kind: str = "uniform"
    center: tuple[float, ...] = (0.5,)
    center2: tuple[float, ...] = (0.5,)
    width: float = 0.1
    path: str | None = None
    # mixing weight with the uniform density, used by the stability experiment
    mix: float = 0.0

    def mixed(self, eps: float) -> "DensityPreset":
        from dataclasses import replace

        return replace(self, mix=1.0 - (1.0 - self.mix) * (1.0 - eps))


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HamiltonianSpec:
    r: float = 2.0
    b: SpatialField = field(default_factory=lambda: SpatialField.constant(1.0))
    c: SpatialField = field(default_factory=lambda: SpatialField.constant(0.0))
    # coercivity constant of (H6); metadata, certified only for the quadratic preset
    c_H: float | None = None

    @property
    def r_conj(self) -> float:
        return conj(self.r)

    def is_quadratic(self) -> bool:
        return (
            self.r == 2.0
            and self.b.kind == "constant"
            and self.b.value == 1.0
            and self.c.kind == "constant"
            and self.c.value == 0.0
        )


@dataclass(frozen=True)
class CouplingSpec:
    q: float = 2.0
    a: SpatialField = field(default_factory=lambda: SpatialField.constant(1.0))

    @property
    def q_conj(self) -> float:
        return conj(self.q)


@dataclass(frozen=True)
class ProblemSpec:
    d: int = 1
    T: float = 1.0
    hamiltonian: HamiltonianSpec = field(default_factory=HamiltonianSpec)
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    m0: DensityPreset = field(default_factory=DensityPreset)
    mT: DensityPreset = field(default_factory=DensityPreset)

    @property
    def r(self) -> float:
        return self.hamiltonian.r

    @property
    def q(self) -> float:
        return self.coupling.q

    def swapped(self) -> "ProblemSpec":
        """Same problem with initial and final densities exchanged."""
        from dataclasses import replace

        return replace(self, m0=self.mT, mT=self.m0)


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------


def H_power(b, c, r: float, xi: np.ndarray) -> np.ndarray:
    return b * _safe_pow(_norm(xi), r) / r - c


def H_star_power(b, c, r: float, zeta: np.ndarray) -> np.ndarray:
    rc = conj(r)
    return np.power(b, 1.0 - rc) * _safe_pow(_norm(zeta), rc) / rc + c


def grad_H_power(b, r: float, xi: np.ndarray) -> np.ndarray:
    n = _norm(xi)
    scale = np.asarray(b) * _safe_pow(n, r - 2.0)
    return scale[..., None] * xi


def eval_H(spec: HamiltonianSpec, x, xi) -> np.ndarray:
    """H(x, xi) = b(x)|xi|^r/r - c(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.asarray(xi, dtype=float)
    return H_power(spec.b(x), spec.c(x), spec.r, xi)


def eval_H_star(spec: HamiltonianSpec, x, zeta) -> np.ndarray:
    """Fenchel conjugate in the gradient variable: b^(1-r')|zeta|^r'/r' + c."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    zeta = np.asarray(zeta, dtype=float)
    return H_star_power(spec.b(x), spec.c(x), spec.r, zeta)


def grad_xi_H(spec: HamiltonianSpec, x, xi) -> np.ndarray:
    """D_xi H = b|xi|^(r-2) xi, continuously extended by 0 at the origin."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.asarray(xi, dtype=float)
    return grad_H_power(spec.b(x), spec.r, xi)


def kinetic_power(b, c, r: float, m, w) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    rc = conj(r)
    wn = _norm(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.power(b, 1.0 - rc) * np.power(wn, rc) * np.power(m, 1.0 - rc) / rc + c * m
    out = np.where(m > 0, val, np.inf)
    out = np.where((m == 0) & (wn == 0), 0.0, out)
    return out


def kinetic(spec: HamiltonianSpec, x, m, w) -> np.ndarray:
    """Perspective m H*(x, -w/m) with the (0, 0) -> 0 and (0, w != 0) -> inf conventions."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return kinetic_power(spec.b(x), spec.c(x), spec.r, m, w)


def j1(spec: HamiltonianSpec, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return _safe_pow(_norm(xi), spec.r / 2.0 - 1.0)[..., None] * xi


def j2(spec: HamiltonianSpec, zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    return _safe_pow(_norm(zeta), spec.r_conj / 2.0 - 1.0)[..., None] * zeta


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------


def f_power(a, q: float, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return a * _safe_pow(np.maximum(m, 0.0), q - 1.0)


def F_power(a, q: float, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.where(m < 0, np.inf, a * _safe_pow(np.maximum(m, 0.0), q) / q)


def F_star_power(a, q: float, alpha) -> np.ndarray:
    qc = conj(q)
    alpha = np.asarray(alpha, dtype=float)
    return np.power(a, 1.0 - qc) * _safe_pow(np.maximum(alpha, 0.0), qc) / qc


def eval_f(spec: CouplingSpec, x, m) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("coupling f(x, m) is defined for m >= 0 only")
    return f_power(spec.a(x), spec.q, m)


def eval_F(spec: CouplingSpec, x, m) -> np.ndarray:
    """Antiderivative a m^q / q; +inf for m < 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return F_power(spec.a(x), spec.q, m)


def eval_F_star(spec: CouplingSpec, x, alpha) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return F_star_power(spec.a(x), spec.q, alpha)


# ---------------------------------------------------------------------------
# exponents and assumptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exponents:
    r_conj: float
    q_conj: float
    ell: float
    nu: float


def exponent_values(r, q, d):
    """Exponent formulas, valid for floats and for exact Fractions alike."""
    rc = r / (r - 1)
    qc = q / (q - 1)
    ell = rc * q / (rc + q - 1)
    nu = (r - d * (q - 1)) / (d * (q - 1) * (r - 1) + r * q)
    return rc, qc, ell, nu


def exponents(problem: ProblemSpec) -> Exponents:
    return Exponents(*map(float, exponent_values(problem.r, problem.q, problem.d)))


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    message: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[HypothesisCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self) -> None:
        bad = self.failures()
        if bad:
            raise AssumptionError(bad)

    def __str__(self) -> str:
        return "\n".join(
            f"{c.name}: {'pass' if c.passed else 'FAIL'}" + (f" ({c.message})" if c.message else "")
            for c in self.checks
        )


class AssumptionError(ValueError):
    """Raised when a problem violates one of the standing hypotheses (H1)-(H4)."""

    def __init__(self, failures: Sequence[HypothesisCheck]):
        self.failures = list(failures)
        msg = "; ".join(f"{c.name}: {c.message}" for c in self.failures)
        super().__init__(msg)


def _growth_constant(h: HamiltonianSpec) -> float:
    bmin, bmax = h.b.minimum(), h.b.maximum()
    cmax = max(h.c.maximum(), 0.0)
    return max(1.0, 1.0 / bmin, bmax, cmax)


def _check_h1(h: HamiltonianSpec, d: int) -> HypothesisCheck:
    if not h.r > 1:
        return HypothesisCheck("H1", False, f"requires r > 1, got r={h.r}")
    if not h.b.minimum() > 0:
        return HypothesisCheck("H1", False, f"b must be positive, inf b = {h.b.minimum()}")
    C = _growth_constant(h)
    # two-sided growth bound on a sampled (x, xi) set
    rng = np.random.default_rng(0)
    x = rng.random((256, d))
    xi = rng.normal(size=(256, d)) * np.exp(rng.uniform(-4, 4, size=(256, 1)))
    Hv = eval_H(h, x, xi)
    n = _norm(xi)
    lo = n**h.r / (h.r * C) - C
    hi = C / h.r * n**h.r + C
    if np.all(lo <= Hv + 1e-12 * np.abs(Hv)) and np.all(Hv <= hi + 1e-12 * np.abs(hi)):
        return HypothesisCheck("H1", True, f"growth bound holds with C={C:g}")
    return HypothesisCheck("H1", False, "sampled growth bound violated")


def _check_h2(h: HamiltonianSpec) -> HypothesisCheck:
    if h.c.minimum() < 0:
        return HypothesisCheck("H2", False, f"c must be nonnegative, inf c = {h.c.minimum()}")
    return HypothesisCheck("H2", True)


def _check_h3(problem: ProblemSpec) -> HypothesisCheck:
    q, r, d = problem.q, problem.r, problem.d
    a = problem.coupling.a
    if not q > 1:
        return HypothesisCheck("H3", False, f"requires q>1, got q={q}")
    if not a.minimum() > 0:
        return HypothesisCheck("H3", False, f"a must be positive, inf a = {a.minimum()}")
    bound = max(d * (q - 1), 1.0)
    if not r > bound:
        return HypothesisCheck(
            "H3", False, f"requires r>max{{d(q-1),1}}: r={r} <= max(d(q-1), 1)={bound:g}"
        )
    return HypothesisCheck("H3", True)


def _check_h4(problem: ProblemSpec, m0=None, mT=None, cell_volume=None) -> HypothesisCheck:
    for name, preset in (("m0", problem.m0), ("mT", problem.mT)):
        if preset.kind not in ("uniform", "gaussian", "double_bump", "from_csv"):
            return HypothesisCheck("H4", False, f"{name}: unknown density preset {preset.kind!r}")
        if preset.kind in ("gaussian", "double_bump") and not preset.width > 0:
            return HypothesisCheck("H4", False, f"{name}: width must be positive")
        if not 0.0 <= preset.mix <= 1.0:
            return HypothesisCheck("H4", False, f"{name}: mix must lie in [0, 1]")
    if m0 is not None and mT is not None:
        for name, arr in (("m0", m0), ("mT", mT)):
            if np.any(arr < 0):
                return HypothesisCheck("H4", False, f"{name} has negative values")
            mass = float(np.sum(arr) * cell_volume)
            if abs(mass - 1.0) > 1e-10:
                return HypothesisCheck("H4", False, f"{name} has mass {mass}, expected 1")
    return HypothesisCheck("H4", True)


def check_assumptions(problem: ProblemSpec, m0=None, mT=None, cell_volume=None) -> AssumptionReport:
    """Check (H1)-(H4) for a problem, optionally including discretized densities."""
    checks = []
    if problem.d not in (1, 2):
        checks.append(HypothesisCheck("setup", False, f"dimension must be 1 or 2, got {problem.d}"))
    if not problem.T > 0:
        checks.append(HypothesisCheck("setup", False, f"horizon T must be positive, got {problem.T}"))
    checks.append(_check_h1(problem.hamiltonian, max(problem.d, 1)))
    checks.append(_check_h2(problem.hamiltonian))
    checks.append(_check_h3(problem))
    checks.append(_check_h4(problem, m0, mT, cell_volume))
    return AssumptionReport(tuple(checks))


def exact_exponents(r: Fraction, q: Fraction, d: int) -> tuple[Fraction, ...]:
    return exponent_values(Fraction(r), Fraction(q), d)
