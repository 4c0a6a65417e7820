import wandb

from aniso_ac.metrics import MetricsLogger
from aniso_ac.optimizer import IterationRecord
from aniso_ac.state import StepDiagnostics


def test_run_with_metrics_times_the_call():
    logger = MetricsLogger()
    result, metrics = logger.run_with_metrics(lambda x: x * 2, 21)
    assert result == 42
    assert set(metrics) == {"runtime_sec", "memory_usage_mb"}
    assert metrics["runtime_sec"] >= 0.0
    assert logger.runs == 1


def test_rows_are_collected_without_an_active_run(monkeypatch):
    monkeypatch.setattr(wandb, "run", None)
    logger = MetricsLogger()
    logger.log_iteration(IterationRecord(1, 2.0, 1.5, 0.5, 1e-3, 1.0, 7, "interior", 0.2, 0.9, True))
    logger.log_forward([StepDiagnostics(1, 1e-4, 3, 1e-12, 0.7)])
    assert logger.iterations[0]["cg_iters"] == 7
    assert logger.iterations[0]["accepted"] == 1
    assert logger.forward_steps == [{"newton_iters": 3, "residual": 1e-12, "energy": 0.7}]
    final = logger.log_final_summary({"status": "converged"})
    assert final["timed_runs"] == 0
    assert final["status"] == "converged"
