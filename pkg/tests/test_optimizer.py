from types import SimpleNamespace

import numpy as np
import pytest

from aniso_ac.config import TrustRegionConfig
from aniso_ac.errors import NewtonError, OptimizationAborted
from aniso_ac.optimizer import minimize, steihaug_solve
from aniso_ac.state import CostBreakdown


def _spd(rng, n=10, cond=5.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q @ np.diag(np.linspace(1.0, cond, n)) @ q.T


class QuadraticFunctional:
    """j(u) = 1/2 u.Au - b.u in the Euclidean pairing, shaped like a reduced functional."""

    def __init__(self, a, b, fail_trials=False):
        self.a, self.b = a, b
        self.fail_trials = fail_trials
        self.n_forward = 0

    def inner(self, v, w):
        return float(np.vdot(v, w))

    def norm(self, v):
        return float(np.sqrt(self.inner(v, v)))

    def value(self, u):
        if self.fail_trials and np.any(u != 0.0):
            raise NewtonError("forced failure", 1.0, 1)
        self.n_forward += 1
        j = 0.5 * u @ self.a @ u - self.b @ u
        return CostBreakdown(j=j, j1=j, j2=0.0)

    def reduced_gradient(self, u):
        return SimpleNamespace(values=self.a @ u - self.b)

    def hessian_apply(self, u, du):
        return SimpleNamespace(values=self.a @ du)


def test_steihaug_interior_step_solves_the_newton_system(rng):
    a = _spd(rng)
    g = rng.standard_normal(10)
    result = steihaug_solve(g, lambda d: a @ d, radius=1e6, rel_tol=1e-10)
    assert result.kind == "interior"
    np.testing.assert_allclose(result.step, np.linalg.solve(a, -g), rtol=1e-8)
    assert result.predicted_reduction == pytest.approx(0.5 * g @ np.linalg.solve(a, g), rel=1e-8)


def test_steihaug_stops_on_the_boundary(rng):
    a = _spd(rng)
    g = rng.standard_normal(10)
    result = steihaug_solve(g, lambda d: a @ d, radius=1e-2)
    assert result.kind == "boundary"
    assert np.linalg.norm(result.step) == pytest.approx(1e-2, rel=1e-12)
    assert result.predicted_reduction > 0.0


def test_steihaug_follows_negative_curvature(rng):
    g = rng.standard_normal(10)
    result = steihaug_solve(g, lambda d: -d, radius=0.5)
    assert result.kind == "neg_curvature"
    assert result.iterations == 1
    assert np.linalg.norm(result.step) == pytest.approx(0.5, rel=1e-12)
    # first direction is steepest descent
    np.testing.assert_allclose(result.step, -0.5 * g / np.linalg.norm(g), rtol=1e-12)


def test_steihaug_respects_a_weighted_norm(rng):
    weights = rng.uniform(0.5, 2.0, 10)
    inner = lambda v, w: float(np.sum(weights * v * w))  # noqa: E731
    g = rng.standard_normal(10)
    result = steihaug_solve(g, lambda d: d, radius=0.1, inner=inner)
    assert np.sqrt(inner(result.step, result.step)) <= 0.1 * (1.0 + 1e-12)


def test_steihaug_zero_gradient():
    result = steihaug_solve(np.zeros(4), lambda d: d, radius=1.0)
    assert result.iterations == 0
    assert result.kind == "interior"
    np.testing.assert_array_equal(result.step, 0.0)


def test_steihaug_iteration_cap(rng):
    a = _spd(rng, cond=1e4)
    result = steihaug_solve(rng.standard_normal(10), lambda d: a @ d, radius=1e6, max_iter=2)
    assert result.kind == "max_iter"
    assert result.iterations == 2


def test_minimize_converges_on_a_quadratic(rng):
    a = _spd(rng)
    b = 3.0 * rng.standard_normal(10)
    functional = QuadraticFunctional(a, b)
    u, report = minimize(functional, np.zeros(10), TrustRegionConfig(initial_radius=0.5))
    assert report.status == "converged"
    np.testing.assert_allclose(u, np.linalg.solve(a, b), rtol=1e-6)
    accepted = [r.j for r in report.records if r.accepted]
    assert all(np.diff(accepted) <= 0.0)
    assert all(r.rho >= 0.1 for r in report.records if r.accepted)
    assert report.final_j <= report.records[0].j
    assert report.tr_steps == len(report.records) > 1


def test_report_tables(rng):
    functional = QuadraticFunctional(_spd(rng), rng.standard_normal(10))
    _, report = minimize(functional, np.zeros(10), TrustRegionConfig(initial_radius=0.1))
    frame = report.to_frame()
    assert list(frame.columns) == ["iter", "j", "j1", "j2", "gnorm", "delta", "cg_iters", "accepted"]
    assert frame["iter"].tolist() == list(range(1, report.tr_steps + 1))
    summary = report.summary()
    assert summary["tr_steps"] == report.tr_steps
    assert summary["max_cg"] == frame["cg_iters"].max()
    interior = [r.cg_iters for r in report.records if r.cg_kind == "interior"]
    assert summary["mean_cg"] == pytest.approx(np.mean(interior))


def test_zero_gradient_needs_no_steps():
    functional = QuadraticFunctional(np.eye(3), np.zeros(3))
    calls = []
    u, report = minimize(functional, np.zeros(3), on_iteration=calls.append)
    assert report.status == "converged"
    assert report.tr_steps == 0
    assert calls == []
    np.testing.assert_array_equal(u, 0.0)


def test_max_iter_status(rng):
    functional = QuadraticFunctional(_spd(rng), rng.standard_normal(10))
    _, report = minimize(functional, np.zeros(10), TrustRegionConfig(initial_radius=1e-3, max_iter=2))
    assert report.status == "max_iter"
    assert report.tr_steps == 2


def test_failed_trials_shrink_then_abort(rng):
    functional = QuadraticFunctional(np.eye(4), np.ones(4), fail_trials=True)
    cfg = TrustRegionConfig(max_retries=2)
    with pytest.raises(OptimizationAborted) as info:
        minimize(functional, np.zeros(4), cfg)
    report = info.value.report
    assert report.status == "aborted"
    assert report.tr_steps == 3
    radii = [r.delta for r in report.records]
    np.testing.assert_allclose(radii, [1.0, 0.25, 0.0625])
    assert not any(r.accepted for r in report.records)


class _GradientFailsAfterFirstStep(QuadraticFunctional):
    def reduced_gradient(self, u):
        if np.any(u != 0.0):
            raise NewtonError("forced failure", 1.0, 1)
        return super().reduced_gradient(u)


def test_solver_errors_carry_the_partial_report():
    functional = _GradientFailsAfterFirstStep(np.eye(4), np.ones(4))
    with pytest.raises(NewtonError) as info:
        minimize(functional, np.zeros(4))
    report = info.value.report
    assert report.status == "failed"
    assert report.tr_steps == 1
    assert report.records[0].accepted
    assert report.summary()["status"] == "failed"
