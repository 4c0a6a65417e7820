import json

import numpy as np
import pytest

from aniso_ac.config import ScenarioConfig, load_config
from aniso_ac.errors import ConfigError, NewtonError
from aniso_ac.runner import (
    RunManifest,
    compare_costs,
    delta_study,
    granularity_study,
    loglog_slope,
    metrics_logger,
    run_scenario,
    snapshot_indices,
    variant,
)
from aniso_ac.state import TimeGrid
from aniso_ac.utils import read_csv, read_field

from .conftest import CONFIG_DIR


@pytest.fixture
def trivial_cfg(tmp_path):
    return load_config(CONFIG_DIR / "trivial.toml", output_dir=tmp_path)


def _small_circle(**changes):
    data = dict(
        name="small",
        n_div=16,
        final_time=5e-4,
        tau=1e-4,
        anisotropy={"name": "l1"},
        deterministic=True,
    )
    return ScenarioConfig(**{**data, **changes})


def test_snapshot_indices():
    assert snapshot_indices(TimeGrid.uniform(7e-4, n_steps=7)) == list(range(8))
    assert snapshot_indices(TimeGrid.uniform(5e-4, n_steps=5)) == [0, 1, 1, 2, 3, 4, 4, 5]


def test_loglog_slope():
    x = np.array([1e-2, 1e-4, 1e-6])
    assert loglog_slope(x, 3.0 * np.sqrt(x)) == pytest.approx(0.5)
    assert np.isnan(loglog_slope([1.0], [1.0]))


def test_variant_revalidates(trivial_cfg):
    assert variant(trivial_cfg, n_div=8).n_div == 8
    with pytest.raises(ConfigError):
        variant(trivial_cfg, final_time=2e-3, tau=1e-3)


def test_trivial_run_writes_every_artifact(trivial_cfg, tmp_path):
    bundle = run_scenario(trivial_cfg, output_dir=tmp_path / "trivial")
    out = bundle.output_dir
    assert bundle.report.status == "converged"
    assert bundle.report.tr_steps == 0
    np.testing.assert_array_equal(bundle.control, 0.0)

    for name in ["report.csv", "summary.json", "cost.csv", "u_norm.csv", "forward.csv", "manifest.json"]:
        assert (out / name).is_file()
    for k in range(8):
        values, n_div, _ = read_field(out / f"state_{k:02d}.txt")
        assert n_div == 16
        np.testing.assert_array_equal(values, 1.0)
        assert (out / f"control_{k:02d}.txt").is_file()

    summary = json.loads((out / "summary.json").read_text())
    assert summary["tr_steps"] == 0
    cost = read_csv(out / "cost.csv")
    assert cost.loc[0, "j"] == 0.0

    manifest = RunManifest.model_validate_json((out / "manifest.json").read_text())
    assert manifest.status == "converged"
    assert "summary.json" in manifest.hashes
    assert manifest.config["name"] == "trivial"


def test_vtk_output_is_optional(trivial_cfg, tmp_path):
    cfg = variant(trivial_cfg, write_vtk=True)
    bundle = run_scenario(cfg, output_dir=tmp_path / "vtk")
    assert (bundle.output_dir / "state_00.vtk").is_file()
    assert (bundle.output_dir / "control_07.vtk").is_file()


def test_runs_are_reproducible(trivial_cfg, tmp_path):
    first = run_scenario(trivial_cfg, output_dir=tmp_path / "a")
    second = run_scenario(trivial_cfg, output_dir=tmp_path / "b")
    for name in ["state_07.txt", "cost.csv", "u_norm.csv"]:
        assert (first.output_dir / name).read_bytes() == (second.output_dir / name).read_bytes()


def test_compare_costs(trivial_cfg, tmp_path):
    bundle = run_scenario(trivial_cfg, output_dir=tmp_path / "cmp")
    frame = compare_costs([bundle, bundle])
    assert list(frame.columns) == ["scenario", "anisotropy", "j", "j1", "j2", "tr_steps"]
    assert frame["j"].tolist() == [0.0, 0.0]


def test_delta_study_errors_shrink_with_delta(tmp_path):
    result = delta_study(_small_circle(), [1e-2, 1e-3], reference_delta=1e-4, output_dir=tmp_path)
    errors = result.frame["l2_error"].to_numpy()
    assert np.all(errors > 0.0)
    assert errors[1] < errors[0]
    assert np.all(result.frame["h1_error"] >= result.frame["l2_error"])
    assert (tmp_path / "delta_study.csv").is_file()
    assert json.loads((tmp_path / "delta_slope.json").read_text())["reference_delta"] == 1e-4


def test_granularity_study_table(trivial_cfg, tmp_path):
    table = granularity_study(trivial_cfg, "tau", [1e-4, 2.5e-4], output_dir=tmp_path)
    assert list(table.index) == ["max CG", "mean CG", "TR steps", "time (s)", "status"]
    assert list(table.columns) == ["0.0001", "0.00025"]
    assert table.loc["TR steps"].tolist() == [0, 0]
    assert table.loc["status"].tolist() == ["converged", "converged"]
    assert (tmp_path / "granularity_tau.csv").is_file()


def test_granularity_study_in_worker_processes(trivial_cfg):
    cfg = variant(trivial_cfg, threads=2)
    table = granularity_study(cfg, "mesh", [8, 12])
    assert table.loc["status"].tolist() == ["converged", "converged"]


def test_granularity_cells_record_failures(trivial_cfg):
    cfg = variant(trivial_cfg, final_time=2e-3)
    table = granularity_study(cfg, "tau", [2.5e-4, 1e-3])
    assert table.loc["status", "0.00025"] == "converged"
    assert table.loc["status", "0.001"].startswith("failed")
    assert np.isnan(table.loc["TR steps", "0.001"])


def test_unknown_axis(trivial_cfg):
    with pytest.raises(ConfigError):
        granularity_study(trivial_cfg, "space", [1])


def test_metrics_are_reset_for_every_run(trivial_cfg, tmp_path):
    run_scenario(trivial_cfg, output_dir=tmp_path / "first")
    run_scenario(trivial_cfg, output_dir=tmp_path / "second")
    assert len(metrics_logger.forward_steps) == 5
    assert metrics_logger.runs == 1


def test_solver_failure_still_writes_report_and_manifest(tmp_path):
    cfg = _small_circle(solver={"newton_tol": 1e-14, "newton_max_iter": 1})
    with pytest.raises(NewtonError):
        run_scenario(cfg, output_dir=tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "failed"
    assert summary["tr_steps"] == 0
    assert read_csv(tmp_path / "report.csv").empty
    manifest = RunManifest.model_validate_json((tmp_path / "manifest.json").read_text())
    assert manifest.status == "failed"
    assert manifest.files == ["report.csv", "summary.json"]
