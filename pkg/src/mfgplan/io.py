"""Configuration, density presets and serialization.

Configuration files are YAML with five blocks, ``problem``, ``grid``,
``solver``, ``diagnostics`` and ``output``; only ``problem`` is required.
Unknown keys anywhere are errors. A minimal file::

    problem:
      d: 1
      m0: {preset: gaussian, center: [0.3], width: 0.1}
      mT: {preset: gaussian, center: [0.7], width: 0.1}

Field files are long-format CSV, one row per lattice point, written with 17
significant digits so that every double survives a round trip.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from .grid import DualField, GridSpec, StaggeredField
from .model import (
    AssumptionError,
    CouplingSpec,
    DensityPreset,
    HamiltonianSpec,
    ProblemSpec,
    SpatialField,
    check_assumptions,
)
from .solver import HISTORY_FIELDS, SolutionBundle, SolverConfig

__all__ = [
    "ENV_OUTPUT_DIR",
    "ConfigError",
    "RunConfig",
    "load_config",
    "make_density",
    "output_directory",
    "read_density",
    "read_fields",
    "write_density",
    "write_fields",
    "write_report",
    "write_table",
]

ENV_OUTPUT_DIR = "MFGPLAN_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "mfgplan-output"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantField(_Strict):
    preset: Literal["constant"] = "constant"
    value: float = 1.0


class CosineField(_Strict):
    """``mean + amplitude * cos(2 pi frequency x_1)``."""

    preset: Literal["cosine"]
    mean: float = 1.0
    amplitude: float = 0.0
    frequency: int = 1


Coefficient = Annotated[Union[ConstantField, CosineField], Field(discriminator="preset")]


class UniformDensity(_Strict):
    preset: Literal["uniform"] = "uniform"


class GaussianDensity(_Strict):
    preset: Literal["gaussian"]
    center: list[float]
    width: PositiveFloat


class DoubleBumpDensity(_Strict):
    preset: Literal["double_bump"]
    c1: list[float]
    c2: list[float]
    width: PositiveFloat


class CsvDensity(_Strict):
    """Density table with header ``x[,y],value``; relative paths are taken from the config's folder."""

    preset: Literal["from_csv"]
    path: str


Density = Annotated[
    Union[UniformDensity, GaussianDensity, DoubleBumpDensity, CsvDensity], Field(discriminator="preset")
]


class ProblemBlock(_Strict):
    d: Literal[1, 2] = 1
    T: PositiveFloat = 1.0
    r: float = 2.0
    q: float = 2.0
    b: Coefficient = ConstantField(value=1.0)
    c: Coefficient = ConstantField(value=0.0)
    a: Coefficient = ConstantField(value=1.0)
    m0: Density = UniformDensity()
    mT: Density = UniformDensity()


class GridBlock(_Strict):
    N: int = Field(64, ge=4)
    Nt: int = Field(64, ge=4)


class SolverBlock(_Strict):
    tau: Optional[PositiveFloat] = None
    sigma: Optional[PositiveFloat] = None
    theta: float = Field(1.0, ge=0.0, le=1.0)
    max_iter: PositiveInt = 20_000
    tol_gap: PositiveFloat = 1e-6
    tol_feas: PositiveFloat = 1e-6
    check_every: PositiveInt = 25
    deterministic: bool = True
    normalization: Literal["mean", "min_terminal"] = "mean"


class DiagnosticsBlock(_Strict):
    eps_mask: PositiveFloat = Field(1e-6, description="support threshold relative to max m")
    tau_interior: Optional[PositiveFloat] = Field(None, description="defaults to T/8")
    eps_list: list[PositiveFloat] = [0.2, 0.1, 0.05]
    holder_samples: PositiveInt = 20_000
    refine_N: list[int] = [32, 64, 128]
    refine_Nt: list[int] = [32, 64, 128]


class OutputBlock(_Strict):
    directory: Optional[str] = None
    formats: list[Literal["csv", "json"]] = ["csv", "json"]


class RunConfig(_Strict):
    problem: ProblemBlock
    grid: GridBlock = GridBlock()
    solver: SolverBlock = SolverBlock()
    diagnostics: DiagnosticsBlock = DiagnosticsBlock()
    output: OutputBlock = OutputBlock()
    base_dir: str = Field(".", exclude=True)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(
            d=p.d,
            T=p.T,
            hamiltonian=HamiltonianSpec(r=p.r, b=_field(p.b), c=_field(p.c)),
            coupling=CouplingSpec(q=p.q, a=_field(p.a)),
            m0=self._density(p.m0),
            mT=self._density(p.mT),
        )

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.problem.d, self.grid.N, self.grid.Nt, self.problem.T)

    def solver_config(self, workers: int = 1) -> SolverConfig:
        return SolverConfig(**self.solver.model_dump(), workers=workers)

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    def _density(self, d) -> DensityPreset:
        if isinstance(d, UniformDensity):
            return DensityPreset("uniform")
        if isinstance(d, GaussianDensity):
            return DensityPreset("gaussian", center=tuple(d.center), width=d.width)
        if isinstance(d, DoubleBumpDensity):
            return DensityPreset("double_bump", center=tuple(d.c1), center2=tuple(d.c2), width=d.width)
        path = Path(d.path)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        return DensityPreset("from_csv", path=str(path))


def _field(f) -> SpatialField:
    if isinstance(f, ConstantField):
        return SpatialField.constant(f.value)
    return SpatialField("cosine", mean=f.mean, amplitude=f.amplitude, frequency=f.frequency)


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    """Validate a config mapping, including the standing assumptions of the problem."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with a 'problem' block")
    try:
        cfg = RunConfig.model_validate({**data, "base_dir": base_dir})
    except ValidationError as err:
        raise ConfigError(_format_validation(err)) from None
    for name, dens in (("m0", cfg.problem.m0), ("mT", cfg.problem.mT)):
        for key in ("center", "c1", "c2"):
            c = getattr(dens, key, None)
            if c is not None and len(c) not in (1, cfg.problem.d):
                raise ConfigError(f"problem.{name}.{key}: expected 1 or {cfg.problem.d} coordinates")
    report = check_assumptions(cfg.problem_spec())
    if not report.ok:
        raise AssumptionError(report.failures())
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read and validate a YAML config file.

    Raises
    ------
    FileNotFoundError
        Missing file.
    ConfigError
        YAML syntax error (with line information) or schema violation.
    AssumptionError
        The problem violates one of (H1)-(H4).
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(err, 'problem', err)}") from None
    return parse_config(data or {}, str(path.parent))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.echo(), sort_keys=False)


def output_directory(cli_value: str | None = None, cfg: RunConfig | None = None) -> Path:
    """Resolve the output folder: command line, then config, then environment, then a default."""
    for cand in (cli_value, cfg.output.directory if cfg else None, os.environ.get(ENV_OUTPUT_DIR)):
        if cand:
            return Path(cand)
    return Path(DEFAULT_OUTPUT_DIR)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _gauss(grid: GridSpec, center, width: float) -> np.ndarray:
    x = grid.cell_centers()
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    diff = (x - c + 0.5) % 1.0 - 0.5
    return np.exp(-np.sum(diff * diff, axis=-1) / (2 * width * width))


def _coords_header(d: int) -> list[str]:
    return ["x", "y"][:d]


def write_density(m: np.ndarray, grid: GridSpec, path: str | os.PathLike) -> None:
    x = grid.cell_centers().reshape(-1, grid.d)
    data = np.column_stack([x, np.asarray(m).reshape(-1)])
    header = ",".join(_coords_header(grid.d) + ["value"])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def read_density(path: str | os.PathLike, grid: GridSpec) -> np.ndarray:
    """Read a cell table with header ``x[,y],value`` onto the grid's cells."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != _coords_header(grid.d) + ["value"]:
        raise ValueError(f"{path}: expected header {','.join(_coords_header(grid.d) + ['value'])}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.N**grid.d:
        raise ValueError(f"{path}: {data.shape[0]} rows, grid has {grid.N ** grid.d} cells")
    idx = np.rint(data[:, : grid.d] / grid.h - 0.5).astype(int) % grid.N
    m = np.full(grid.cells, np.nan)
    m[tuple(idx.T)] = data[:, grid.d]
    if np.isnan(m).any():
        raise ValueError(f"{path}: cells missing from the table")
    return m


def make_density(preset: DensityPreset, grid: GridSpec) -> np.ndarray:
    """Discretize a density preset on the cell centers.

    The result is nonnegative with unit discrete mass; tables whose mass is
    already one to round-off are kept bit for bit.
    """
    if preset.kind == "uniform":
        m = np.ones(grid.cells)
    elif preset.kind == "gaussian":
        m = _gauss(grid, preset.center, preset.width)
    elif preset.kind == "double_bump":
        m = _gauss(grid, preset.center, preset.width) + _gauss(grid, preset.center2, preset.width)
    elif preset.kind == "from_csv":
        if preset.path is None:
            raise ValueError("from_csv preset needs a path")
        m = read_density(preset.path, grid)
    else:
        raise ValueError(f"unknown density preset {preset.kind!r}")
    if np.any(m < 0):
        raise ValueError(f"{preset.kind} density has negative values")
    mass = m.sum() * grid.cell_volume
    if not mass > 0:
        raise ValueError(f"{preset.kind} density has zero total mass")
    if abs(mass - 1.0) > 1e-14:
        m = m / mass
    if preset.mix:
        m = (1.0 - preset.mix) * m + preset.mix
    return m


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

FIELD_FILES = ("m", "w", "u", "alpha", "dtu", "gradu")


def _field_table(grid: GridSpec, times: np.ndarray, values: np.ndarray, vector: bool) -> tuple[np.ndarray, str]:
    """Rows ``t, x[, y], value[, value_y]`` in C order over (time, cells)."""
    x = grid.cell_centers().reshape(-1, grid.d)
    nt, nc = times.size, x.shape[0]
    t = np.repeat(times, nc)
    xs = np.tile(x, (nt, 1))
    if vector:
        vals = np.moveaxis(values, 1, -1).reshape(nt * nc, grid.d)
        names = ["value", "value_y"][: grid.d]
    else:
        vals = values.reshape(nt * nc, 1)
        names = ["value"]
    header = ",".join(["t"] + _coords_header(grid.d) + names)
    return np.column_stack([t, xs, vals]), header


def _write_csv(path: Path, data: np.ndarray, header: str) -> None:
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def write_fields(bundle: SolutionBundle, grid: GridSpec, directory: str | os.PathLike) -> list[Path]:
    """Write ``m, w, u, alpha, dtu, gradu`` and ``history`` CSV files.

    The flux ``w`` and the gradient ``gradu`` are labeled by cell center;
    component ``a`` of ``w`` sits on the upper face of that cell along axis ``a``.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    dual = bundle.dual
    items = {
        "m": (grid.node_times(), bundle.primal.m, False),
        "w": (grid.mid_times(), bundle.primal.w, True),
        "u": (grid.mid_times(), dual.u, False),
        "alpha": (grid.mid_times(), dual.alpha, False),
    }
    if dual.dtu is not None:
        items["dtu"] = (grid.mid_times(), dual.dtu, False)
    if dual.gradu is not None:
        items["gradu"] = (grid.mid_times(), dual.gradu, True)
    paths = []
    for name, (times, values, vector) in items.items():
        data, header = _field_table(grid, times, values, vector)
        path = out / f"{name}.csv"
        _write_csv(path, data, header)
        paths.append(path)
    path = out / "history.csv"
    hist = np.column_stack([bundle.history[k] for k in HISTORY_FIELDS]) if bundle.history.size else np.empty((0, 6))
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for row in hist:
            fh.write(f"{int(row[0])}," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
    paths.append(path)
    return paths


def _read_field(path: Path, grid: GridSpec, nt: int, vector: bool) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ncomp = grid.d if vector else 1
    expected = nt * grid.N**grid.d
    if data.shape != (expected, 1 + grid.d + ncomp):
        raise ValueError(f"{path}: shape {data.shape} does not match the grid")
    vals = data[:, 1 + grid.d :]
    if vector:
        return np.moveaxis(vals.reshape((nt, *grid.cells, grid.d)), -1, 1)
    return vals.reshape((nt, *grid.cells))


def read_fields(grid: GridSpec, directory: str | os.PathLike) -> tuple[StaggeredField, DualField]:
    """Inverse of :func:`write_fields`; ``dtu`` and ``gradu`` are optional."""
    d = Path(directory)
    m = _read_field(d / "m.csv", grid, grid.Nt + 1, False)
    w = _read_field(d / "w.csv", grid, grid.Nt, True)
    u = _read_field(d / "u.csv", grid, grid.Nt, False)
    alpha = _read_field(d / "alpha.csv", grid, grid.Nt, False)
    dtu = _read_field(d / "dtu.csv", grid, grid.Nt, False) if (d / "dtu.csv").exists() else None
    gradu = _read_field(d / "gradu.csv", grid, grid.Nt, True) if (d / "gradu.csv").exists() else None
    return StaggeredField(m, w), DualField(u, alpha, dtu, gradu)


def read_history(path: str | os.PathLike) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dtype = [(k, "i8" if k == "iteration" else "f8") for k in HISTORY_FIELDS]
    return np.array([tuple(r) for r in data], dtype=dtype)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_report(
    report,
    directory: str | os.PathLike,
    config: RunConfig | None = None,
    bundle: SolutionBundle | None = None,
    extra: dict | None = None,
    name: str = "summary.json",
) -> Path:
    """Write the summary document: report entries, config echo and history table."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    doc: dict = {}
    if report is not None:
        doc["report"] = report.as_dict() if hasattr(report, "as_dict") else dict(report)
    if bundle is not None:
        doc["status"] = bundle.status
        doc["iterations"] = bundle.iterations
        doc["runtime_s"] = bundle.runtime
        doc["polish_theta"] = bundle.polish_theta
        doc["history"] = {k: bundle.history[k].tolist() for k in HISTORY_FIELDS}
    if config is not None:
        doc["config"] = config.echo()
    if extra:
        doc.update(extra)
    path = out / name
    path.write_text(json.dumps(_jsonable(doc), indent=2))
    return path


def write_table(rows: list[dict], path: str | os.PathLike) -> Path:
    """Write a list of flat records as CSV (refinement and stability tables)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(f"{r[k]:.17g}" if isinstance(r[k], float) else str(r[k]) for k in keys) + "\n")
    return path
