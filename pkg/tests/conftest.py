"""Shared problem instances and cached solves."""

from __future__ import annotations

import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mfgplan import DensityPreset, GridSpec, ProblemSpec, SolverConfig, solve  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def uniform_problem(T: float = 1.0) -> ProblemSpec:
    return ProblemSpec(d=1, T=T)


def gaussian_problem(c0: float = 0.3, c1: float = 0.7, width: float = 0.1) -> ProblemSpec:
    return ProblemSpec(
        d=1,
        T=1.0,
        m0=DensityPreset("gaussian", center=(c0,), width=width),
        mT=DensityPreset("gaussian", center=(c1,), width=width),
    )


@lru_cache(maxsize=None)
def cached_solve(problem: ProblemSpec, N: int, Nt: int, tol: float):
    grid = GridSpec(problem.d, N, Nt, problem.T)
    return grid, solve(problem, grid, SolverConfig(tol_gap=tol, tol_feas=tol))


@pytest.fixture(scope="session")
def uniform_run():
    return cached_solve(uniform_problem(), 64, 64, 1e-8)


@pytest.fixture(scope="session")
def gaussian_run():
    return cached_solve(gaussian_problem(), 64, 64, 1e-4)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
