"""
Trust-region Newton method with Steihaug-CG subproblems for the reduced cost.

Every pairing uses the space-time inner product of the reduced functional, so
step norms and radii are measured in L^2(Q).
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .config import TrustRegionConfig
from .constants import TERMINATION_KINDS
from .errors import NonFiniteError, OptimizationAborted, SolverError
from .sensitivity import ReducedFunctional
from .state import as_values

logger = logging.getLogger(__name__)

InnerProduct = Callable[[np.ndarray, np.ndarray], float]


def _euclidean(v: np.ndarray, w: np.ndarray) -> float:
    return float(np.vdot(v, w))


def _to_boundary(s, d, radius: float, inner: InnerProduct) -> float:
    """Positive sigma with ||s + sigma d|| = radius."""
    a = inner(d, d)
    b = 2.0 * inner(s, d)
    c = inner(s, s) - radius**2
    root = math.sqrt(max(b * b - 4.0 * a * c, 0.0))
    if b >= 0.0:
        return -2.0 * c / (b + root) if b + root > 0.0 else 0.0
    return (-b + root) / (2.0 * a)


@dataclass
class SteihaugResult:
    step: np.ndarray
    iterations: int
    kind: TERMINATION_KINDS
    predicted_reduction: float


def steihaug_solve(
    grad: np.ndarray,
    hess_apply: Callable[[np.ndarray], np.ndarray],
    radius: float,
    inner: InnerProduct = _euclidean,
    rel_tol: float = 1e-6,
    max_iter: int = 400,
) -> SteihaugResult:
    """
    Approximately minimize g.s + 1/2 s.Hs subject to ||s|| <= radius.

    CG stops inside the region once ||Hs + g|| <= rel_tol ||g||, and otherwise
    follows the current direction to the boundary on overshoot or
    non-positive curvature.
    """
    g = np.asarray(grad, dtype=float)
    s = np.zeros_like(g)
    hs = np.zeros_like(g)
    r = g.copy()
    rr = inner(r, r)
    target = rel_tol * math.sqrt(max(rr, 0.0))
    if rr == 0.0:
        return SteihaugResult(s, 0, "interior", 0.0)

    d = -r
    kind: TERMINATION_KINDS = "max_iter"
    iterations = 0
    for iterations in range(1, max_iter + 1):
        hd = np.asarray(hess_apply(d), dtype=float)
        curv = inner(d, hd)
        if not math.isfinite(curv):
            raise NonFiniteError(f"non-finite curvature in Steihaug-CG iteration {iterations}")
        if curv <= 0.0:
            sigma = _to_boundary(s, d, radius, inner)
            s, hs = s + sigma * d, hs + sigma * hd
            kind = "neg_curvature"
            break
        alpha = rr / curv
        s_next = s + alpha * d
        if math.sqrt(inner(s_next, s_next)) >= radius:
            sigma = _to_boundary(s, d, radius, inner)
            s, hs = s + sigma * d, hs + sigma * hd
            kind = "boundary"
            break
        s, hs = s_next, hs + alpha * hd
        r = r + alpha * hd
        rr_new = inner(r, r)
        if math.sqrt(max(rr_new, 0.0)) <= target:
            kind = "interior"
            break
        d = -r + (rr_new / rr) * d
        rr = rr_new

    predicted = -(inner(g, s) + 0.5 * inner(s, hs))
    return SteihaugResult(s, iterations, kind, predicted)


@dataclass
class IterationRecord:
    iter: int
    j: float
    j1: float
    j2: float
    gnorm: float
    delta: float
    cg_iters: int
    cg_kind: str
    step_norm: float
    rho: float
    accepted: bool


@dataclass
class TrustRegionReport:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    initial_gnorm: float = math.nan
    final_j: float = math.nan
    final_j1: float = math.nan
    final_j2: float = math.nan
    final_gnorm: float = math.nan
    wall_time: float = 0.0
    n_forward: int = 0

    @property
    def tr_steps(self) -> int:
        return len(self.records)

    @property
    def max_cg(self) -> int:
        return max((r.cg_iters for r in self.records), default=0)

    @property
    def mean_cg(self) -> float:
        """Mean CG count over subproblems that met the residual criterion."""
        counts = [r.cg_iters for r in self.records if r.cg_kind == "interior"]
        return float(np.mean(counts)) if counts else math.nan

    def to_frame(self) -> pd.DataFrame:
        columns = ["iter", "j", "j1", "j2", "gnorm", "delta", "cg_iters", "accepted"]
        return pd.DataFrame([asdict(r) for r in self.records], columns=columns)

    def summary(self) -> dict:
        return {
            "status": self.status,
            "tr_steps": self.tr_steps,
            "max_cg": self.max_cg,
            "mean_cg": self.mean_cg,
            "time_s": self.wall_time,
            "j": self.final_j,
            "j1": self.final_j1,
            "j2": self.final_j2,
            "gnorm": self.final_gnorm,
            "n_forward": self.n_forward,
        }


def minimize(
    functional: ReducedFunctional,
    u0,
    config: TrustRegionConfig | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> tuple[np.ndarray, TrustRegionReport]:
    cfg = config or TrustRegionConfig()
    start = time.perf_counter()
    report = TrustRegionReport()
    try:
        return _trust_region(functional, as_values(u0), cfg, on_iteration, report, start)
    except SolverError as err:
        # hand the iterations recorded so far to the caller
        if report.status == "running":
            report.status = "failed"
            report.wall_time = time.perf_counter() - start
            report.n_forward = functional.n_forward
        err.report = report
        raise


def _trust_region(functional, u0, cfg, on_iteration, report, start):
    u = np.array(u0, dtype=float)
    cost = functional.value(u)
    g = functional.reduced_gradient(u).values
    gnorm = functional.norm(g)
    report.initial_gnorm = gnorm
    gtol = max(cfg.gtol_abs, cfg.gtol_rel * gnorm)
    radius = cfg.initial_radius
    failures = 0
    logger.info("TR start j=%.6e gnorm=%.3e gtol=%.3e", cost.j, gnorm, gtol)

    def finish(status: str):
        report.status = status
        report.final_j, report.final_j1, report.final_j2 = cost.j, cost.j1, cost.j2
        report.final_gnorm = gnorm
        report.wall_time = time.perf_counter() - start
        report.n_forward = functional.n_forward

    for it in range(1, cfg.max_iter + 1):
        if gnorm <= gtol:
            break
        if radius < cfg.min_radius:
            finish("stagnated")
            logger.warning("TR radius %.3e below %.3e, stopping", radius, cfg.min_radius)
            return u, report

        sub = steihaug_solve(
            g,
            lambda d: functional.hessian_apply(u, d).values,
            radius,
            inner=functional.inner,
            rel_tol=cfg.cg_rel_tol,
            max_iter=cfg.cg_max_iter,
        )
        step_norm = functional.norm(sub.step)
        trial = u + sub.step
        try:
            trial_cost = functional.value(trial)
        except SolverError as err:
            failures += 1
            record = IterationRecord(
                it, cost.j, cost.j1, cost.j2, gnorm, radius, sub.iterations, sub.kind,
                step_norm, math.nan, False,
            )
            report.records.append(record)
            if on_iteration:
                on_iteration(record)
            logger.warning("TR it=%d trial solve failed (%s), shrinking radius", it, err)
            if failures > cfg.max_retries:
                finish("aborted")
                raise OptimizationAborted(
                    f"trial solves failed {failures} times in a row", report
                ) from err
            radius *= cfg.shrink
            continue
        failures = 0

        actual = cost.j - trial_cost.j
        pred = sub.predicted_reduction
        rho = actual / pred if pred > 0.0 else -math.inf
        accepted = rho >= cfg.eta_accept
        record = IterationRecord(
            it, cost.j, cost.j1, cost.j2, gnorm, radius, sub.iterations, sub.kind,
            step_norm, rho, accepted,
        )
        report.records.append(record)
        if on_iteration:
            on_iteration(record)
        logger.info(
            "TR it=%d j=%.6e gnorm=%.3e delta=%.3e cg=%d/%s rho=%.3f %s",
            it, cost.j, gnorm, radius, sub.iterations, sub.kind, rho,
            "accepted" if accepted else "rejected",
        )

        if rho < cfg.eta_accept:
            radius *= cfg.shrink
        elif rho > cfg.eta_expand and sub.kind != "interior":
            radius = min(cfg.expand * radius, cfg.max_radius)
        if accepted:
            u, cost = trial, trial_cost
            g = functional.reduced_gradient(u).values
            gnorm = functional.norm(g)

    finish("converged" if gnorm <= gtol else "max_iter")
    logger.info(
        "TR %s after %d steps: j=%.6e (j1=%.6e, j2=%.6e) gnorm=%.3e",
        report.status, report.tr_steps, cost.j, cost.j1, cost.j2, gnorm,
    )
    return u, report
