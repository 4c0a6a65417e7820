import hashlib
import logging
import math
from dataclasses import dataclass, field
from importlib import metadata
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy
from pydantic import BaseModel, Field

from .config import ScenarioConfig
from .constants import SNAPSHOT_FRAMES, STUDY_AXES
from .errors import AnisoACError, ConfigError
from .fem import build_mesh, h1_norm, l2_norm
from .metrics import MetricsLogger
from .optimizer import TrustRegionReport, minimize
from .sensitivity import ReducedFunctional
from .shapes import make_field
from .state import ProblemSpec, StateSolver, TimeGrid
from .utils import (
    init_wandb,
    save_report_to_wandb,
    write_csv,
    write_field,
    write_json,
    write_vtk,
)

logger = logging.getLogger(__name__)

metrics_logger = MetricsLogger()


class RunManifest(BaseModel):
    config: dict[str, Any]
    files: list[str] = Field(default_factory=list)
    hashes: dict[str, str] = Field(default_factory=dict)
    versions: dict[str, str] = Field(default_factory=dict)
    wall_times: dict[str, float] = Field(default_factory=dict)
    status: str = "ok"


@dataclass(eq=False)
class RunBundle:
    config: ScenarioConfig
    control: np.ndarray
    report: TrustRegionReport
    output_dir: Path
    files: list[Path] = field(default_factory=list)


@dataclass(eq=False)
class DeltaStudyResult:
    frame: pd.DataFrame
    slope_l2: float
    slope_h1: float


def _versions() -> dict[str, str]:
    versions = {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}
    try:
        versions["aniso-ac"] = metadata.version("aniso-ac")
    except metadata.PackageNotFoundError:
        versions["aniso-ac"] = "unknown"
    return versions


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def variant(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Re-validated copy of `cfg` with some fields replaced."""
    data = {**cfg.model_dump(), "paper_scale": False, **changes}
    try:
        return ScenarioConfig(**data)
    except ValueError as err:
        raise ConfigError(f"invalid variant {changes}: {err}") from err


def build_problem(cfg: ScenarioConfig) -> ProblemSpec:
    mesh = build_mesh(cfg.n_div)
    n_steps, _ = cfg.resolved_steps()
    grid = TimeGrid.uniform(cfg.final_time, n_steps=n_steps)
    return ProblemSpec(
        mesh=mesh,
        grid=grid,
        aniso=cfg.anisotropy.build(cfg.delta),
        y0=make_field(cfg.initial, mesh, cfg.eps),
        y_target=make_field(cfg.target, mesh, cfg.eps),
        eps=cfg.eps,
        lam=cfg.lam,
    )


def build_solver(cfg: ScenarioConfig) -> StateSolver:
    return StateSolver(build_problem(cfg), cfg.solver)


def snapshot_indices(grid: TimeGrid, frames: int = SNAPSHOT_FRAMES) -> list[int]:
    """Time levels closest to k T / (frames - 1); level 0 is the initial state."""
    times = grid.times
    targets = np.linspace(0.0, grid.final_time, frames)
    return [int(np.argmin(np.abs(times - t))) for t in targets]


def u_norm_frame(solver: StateSolver, control: np.ndarray) -> pd.DataFrame:
    grid, mesh = solver.problem.grid, solver.mesh
    return pd.DataFrame(
        {
            "step": np.arange(1, grid.n_steps + 1),
            "t": grid.times[1:],
            "u_norm": [l2_norm(mesh, u_j) for u_j in control],
        }
    )


def _write_outputs(
    cfg: ScenarioConfig,
    solver: StateSolver,
    functional: ReducedFunctional,
    control: np.ndarray,
    report: TrustRegionReport,
    out: Path,
) -> list[Path]:
    grid, mesh = solver.problem.grid, solver.mesh
    forward = functional.forward(control)
    cost = functional.value(control)
    files = [
        write_csv(out / "report.csv", report.to_frame()),
        write_json(out / "summary.json", report.summary()),
        write_csv(out / "cost.csv", pd.DataFrame([vars(cost)], columns=["j", "j1", "j2"])),
        write_csv(out / "u_norm.csv", u_norm_frame(solver, control)),
        write_csv(out / "forward.csv", forward.to_frame()),
    ]
    states = np.vstack([solver.problem.y0[None], forward.states.values])
    for k, level in enumerate(snapshot_indices(grid)):
        ctrl_level = min(max(level, 1), grid.n_steps)
        files.append(write_field(out / f"state_{k:02d}.txt", states[level], mesh.n_div, grid.times[level]))
        files.append(
            write_field(
                out / f"control_{k:02d}.txt", control[ctrl_level - 1], mesh.n_div, grid.times[ctrl_level]
            )
        )
        if cfg.write_vtk:
            files.append(write_vtk(out / f"state_{k:02d}.vtk", states[level], mesh.n_div, "y"))
            files.append(write_vtk(out / f"control_{k:02d}.vtk", control[ctrl_level - 1], mesh.n_div, "u"))
    return files


def _write_manifest(cfg, out: Path, files: list[Path], wall_times: dict, status: str) -> Path:
    manifest = RunManifest(
        config=cfg.model_dump(mode="json"),
        files=[p.name for p in files],
        hashes={p.name: _sha256(p) for p in files},
        versions=_versions(),
        wall_times=wall_times,
        status=status,
    )
    return write_json(out / "manifest.json", manifest.model_dump())


def run_scenario(cfg: ScenarioConfig, output_dir: str | Path | None = None) -> RunBundle:
    out = Path(output_dir) if output_dir is not None else Path(cfg.output_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    metrics_logger.reset()
    run = init_wandb(cfg)
    logger.info("scenario %s -> %s", cfg.name, out)

    solver = build_solver(cfg)
    functional = ReducedFunctional(solver)
    u0 = solver.problem.zero_control().values
    try:
        (control, report), perf = metrics_logger.run_with_metrics(
            lambda: minimize(functional, u0, cfg.optimizer, on_iteration=metrics_logger.log_iteration)
        )
    except AnisoACError as err:
        # flush what the optimizer produced before failing
        partial = getattr(err, "report", None) or TrustRegionReport(status="failed")
        files = [
            write_csv(out / "report.csv", partial.to_frame()),
            write_json(out / "summary.json", partial.summary()),
        ]
        _write_manifest(cfg, out, files, {"solve_s": partial.wall_time}, partial.status)
        run.finish()
        raise

    files = _write_outputs(cfg, solver, functional, control, report, out)
    metrics_logger.log_forward(functional.forward(control).diagnostics)
    save_report_to_wandb(report.to_frame())
    metrics_logger.log_final_summary({**report.summary(), **perf})
    wall_times = {"solve_s": report.wall_time, "total_s": perf["runtime_sec"]}
    files.append(_write_manifest(cfg, out, files, wall_times, report.status))
    run.finish()
    logger.info(
        "scenario %s: %s, j=%.6g (j1=%.6g, j2=%.6g), %d TR steps",
        cfg.name, report.status, report.final_j, report.final_j1, report.final_j2, report.tr_steps,
    )
    return RunBundle(cfg, control, report, out, files)


def _delta_cell(cfg: ScenarioConfig, delta: float) -> np.ndarray:
    """Terminal state of the uncontrolled flow with shift delta."""
    solver = build_solver(variant(cfg, delta=delta))
    return solver.forward_solve(solver.problem.zero_control()).final


def _granularity_cell(cfg: ScenarioConfig, axis: STUDY_AXES, value: float) -> dict:
    changes = {"n_div": int(value)} if axis == "mesh" else {"tau": float(value), "n_steps": None}
    try:
        cell_cfg = variant(cfg, **changes)
        solver = build_solver(cell_cfg)
        _, report = minimize(
            ReducedFunctional(solver), solver.problem.zero_control().values, cell_cfg.optimizer
        )
        return {"value": value, **report.summary()}
    except AnisoACError as err:
        logger.warning("granularity cell %s=%s failed: %s", axis, value, err)
        return {
            "value": value, "status": f"failed: {err}", "tr_steps": math.nan,
            "max_cg": math.nan, "mean_cg": math.nan, "time_s": math.nan,
        }


class StudyWorker:
    @staticmethod
    def _worker(args):
        idx, kind, cfg_data, value = args
        cfg = ScenarioConfig(**cfg_data)
        if kind == "delta":
            return idx, _delta_cell(cfg, value)
        return idx, _granularity_cell(cfg, kind, value)


def _run_cells(cfg: ScenarioConfig, kind: str, values: Sequence[float]) -> list:
    """Evaluate study cells in order, through a process pool unless deterministic."""
    cfg_data = {**cfg.model_dump(), "paper_scale": False}
    args = [(idx, kind, cfg_data, value) for idx, value in enumerate(values)]
    results = [None] * len(values)
    if cfg.deterministic or cfg.threads == 1 or len(values) == 1:
        for a in args:
            idx, res = StudyWorker._worker(a)
            results[idx] = res
        return results
    with Pool(processes=min(cfg.threads, len(values))) as pool:
        for idx, res in pool.imap(StudyWorker._worker, args):
            results[idx] = res
            logger.info("study cell %d/%d done", idx + 1, len(values))
    return results


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x over the positive pairs."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def delta_study(
    cfg: ScenarioConfig,
    deltas: Sequence[float],
    reference_delta: float = 0.0,
    output_dir: str | Path | None = None,
) -> DeltaStudyResult:
    """Terminal errors ||y^delta(T) - y^ref(T)|| of uncontrolled runs in L^2 and H^1."""
    values = [reference_delta, *deltas]
    finals = _run_cells(cfg, "delta", values)
    reference = finals[0]
    mesh = build_mesh(cfg.n_div)
    rows = []
    for delta, y_final in zip(deltas, finals[1:]):
        diff = y_final - reference
        rows.append({"delta": delta, "l2_error": l2_norm(mesh, diff), "h1_error": h1_norm(mesh, diff)})
    frame = pd.DataFrame(rows, columns=["delta", "l2_error", "h1_error"])
    result = DeltaStudyResult(
        frame=frame,
        slope_l2=loglog_slope(frame["delta"], frame["l2_error"]),
        slope_h1=loglog_slope(frame["delta"], frame["h1_error"]),
    )
    logger.info("delta study slopes: L2 %.3f, H1 %.3f", result.slope_l2, result.slope_h1)
    if output_dir is not None:
        out = Path(output_dir)
        files = [
            write_csv(out / "delta_study.csv", frame),
            write_json(
                out / "delta_slope.json",
                {"reference_delta": reference_delta, "slope_l2": result.slope_l2, "slope_h1": result.slope_h1},
            ),
        ]
        _write_manifest(cfg, out, files, {}, "ok")
    return result


def granularity_study(
    cfg: ScenarioConfig,
    axis: STUDY_AXES,
    values: Sequence[float],
    output_dir: str | Path | None = None,
) -> pd.DataFrame:
    """
    Table with rows max CG, mean CG, TR steps, time (s) and one column per value.

    Failed cells show NaN entries; the status row says why.
    """
    if axis not in ("mesh", "tau"):
        raise ConfigError(f"unknown study axis {axis!r}")
    cells = _run_cells(cfg, axis, values)
    table = pd.DataFrame(
        {
            str(v): [c["max_cg"], c["mean_cg"], c["tr_steps"], c["time_s"], c["status"]]
            for v, c in zip(values, cells)
        },
        index=["max CG", "mean CG", "TR steps", "time (s)", "status"],
    )
    table.index.name = "N" if axis == "mesh" else "tau"
    if output_dir is not None:
        out = Path(output_dir)
        files = [write_csv(out / f"granularity_{axis}.csv", table.reset_index())]
        _write_manifest(cfg, out, files, {}, "ok")
    return table


def compare_costs(bundles: Sequence[RunBundle]) -> pd.DataFrame:
    """One row per run with the cost split j = j1 + j2."""
    return pd.DataFrame(
        [
            {
                "scenario": b.config.name,
                "anisotropy": b.config.anisotropy.name,
                "j": b.report.final_j,
                "j1": b.report.final_j1,
                "j2": b.report.final_j2,
                "tr_steps": b.report.tr_steps,
            }
            for b in bundles
        ],
        columns=["scenario", "anisotropy", "j", "j1", "j2", "tr_steps"],
    )
