import gc
import time
from typing import Any, Dict

import psutil
import wandb


class MetricsLogger:
    def __init__(self):
        self.reset()

    def reset(self) -> None:
        # Performance metrics
        self.total_runtime = 0.0
        self.total_memory_mb = 0.0
        self.runs = 0

        # Trust-region progress
        self.iterations = []
        self.forward_steps = []

    def run_with_metrics(self, fn, *args, **kwargs) -> tuple[Any, Dict[str, Any]]:
        """Measure runtime and memory usage of a function."""
        gc.collect()
        start_time = time.perf_counter()
        process = psutil.Process()
        start_mem = process.memory_info().rss

        result = fn(*args, **kwargs)

        runtime = time.perf_counter() - start_time
        mem_used = (process.memory_info().rss - start_mem) / 1024 / 1024  # in MB

        self.total_memory_mb += mem_used
        self.total_runtime += runtime
        self.runs += 1

        metrics = {
            'runtime_sec': runtime,
            'memory_usage_mb': mem_used
        }
        return result, metrics

    def log_iteration(self, record) -> None:
        """Log one trust-region iteration record."""
        row = {
            'j': record.j,
            'j1': record.j1,
            'j2': record.j2,
            'gnorm': record.gnorm,
            'tr_radius': record.delta,
            'cg_iters': record.cg_iters,
            'step_norm': record.step_norm,
            'accepted': int(record.accepted),
        }
        self.iterations.append(row)
        if wandb.run is not None:
            wandb.log(row, step=record.iter)

    def log_forward(self, diagnostics) -> None:
        """Log the per-step Newton diagnostics of a forward solve."""
        for d in diagnostics:
            row = {'newton_iters': d.newton_iters, 'residual': d.residual, 'energy': d.energy}
            self.forward_steps.append(row)
            if wandb.run is not None:
                wandb.log({f'forward/{k}': v for k, v in row.items()})

    def log_final_summary(self, summary: Dict[str, Any] | None = None) -> Dict[str, Any]:
        """Collect totals and push them to the run summary."""
        final_metrics = {
            **(summary or {}),
            'total_memory_used_mb': self.total_memory_mb,
            'total_solver_runtime_sec': self.total_runtime,
            'timed_runs': self.runs,
        }
        if wandb.run is not None:
            for key, value in final_metrics.items():
                wandb.run.summary[key] = value
        return final_metrics
