import numpy as np
import pytest

from aniso_ac.anisotropy import hexagon, regularized_l1
from aniso_ac.errors import DomainError
from aniso_ac.fem import l2_norm
from aniso_ac.sensitivity import (
    ReducedFunctional,
    additional_adjoint_solve,
    adjoint_solve,
    linearized_solve,
    step_operators,
)
from aniso_ac.shapes import Circle, make_field
from aniso_ac.state import ProblemSpec, StateSolver, TimeGrid

from .conftest import TIGHT_SOLVER, make_problem

# perturbations of this size move the terminal state by O(1) per unit step
AMPLITUDE = 50.0
SHARP_DELTA = 1e-7
FD_STEP = 1e-5


@pytest.fixture
def sharp_functional(mesh16):
    problem = make_problem(mesh16, hexagon(delta=SHARP_DELTA))
    return ReducedFunctional(StateSolver(problem, TIGHT_SOLVER), cache_size=4)


@pytest.fixture
def nonuniform_functional(mesh16):
    eps = 1.0 / (14.0 * np.pi)
    problem = ProblemSpec(
        mesh16,
        TimeGrid([5e-5, 1e-4, 1.5e-4, 1e-4]),
        regularized_l1(delta=SHARP_DELTA),
        make_field(Circle(radius=0.5), mesh16, eps),
        make_field(Circle(radius=0.4), mesh16, eps),
        eps=eps,
    )
    return ReducedFunctional(StateSolver(problem, TIGHT_SOLVER), cache_size=4)


def _directional_fd(functional, u, v, h):
    return (functional.value(u + h * v).j - functional.value(u - h * v).j) / (2.0 * h)


@pytest.mark.parametrize("which", ["uniform", "nonuniform"])
def test_gradient_matches_finite_differences(which, request, rng):
    functional = request.getfixturevalue(
        "sharp_functional" if which == "uniform" else "nonuniform_functional"
    )
    grid, mesh = functional.problem.grid, functional.problem.mesh
    u = 0.5 * rng.standard_normal((grid.n_steps, mesh.n_nodes))
    grad = functional.reduced_gradient(u)
    for _ in range(5):
        v = AMPLITUDE * rng.standard_normal(u.shape)
        fd = _directional_fd(functional, u, v, FD_STEP)
        assert functional.inner(grad, v) == pytest.approx(fd, rel=1e-5)


def test_adjoint_duality(sharp_functional, control, rng):
    solver = sharp_functional.solver
    states = sharp_functional.forward(control).states
    p = adjoint_solve(solver, states)
    mismatch = states[-1] - sharp_functional.problem.y_target
    eps = sharp_functional.problem.eps
    for _ in range(10):
        v = rng.standard_normal(control.shape)
        z = linearized_solve(solver, states, v)
        expected = mismatch @ (solver.mesh.mass @ z[-1])
        assert sharp_functional.inner(p.values / eps, v) == pytest.approx(expected, rel=1e-9)


def test_linearized_solve_is_linear(hex_functional, control, rng):
    v1, v2 = rng.standard_normal((2, *control.shape))
    z1 = hex_functional.linearized_solve(control, v1).values
    z2 = hex_functional.linearized_solve(control, v2).values
    z = hex_functional.linearized_solve(control, 2.0 * v1 - 3.0 * v2).values
    np.testing.assert_allclose(z, 2.0 * z1 - 3.0 * z2, rtol=1e-10, atol=1e-12)


def test_linearized_state_is_first_order_accurate(sharp_functional, control, rng):
    mesh = sharp_functional.problem.mesh
    v = AMPLITUDE * rng.standard_normal(control.shape)
    z = sharp_functional.linearized_solve(control, v).values
    base = sharp_functional.forward(control).states.values
    hs = np.array([1e-3, 1e-4, 1e-5])
    errors = []
    for h in hs:
        shifted = sharp_functional.forward(control + h * v).states.values
        diff = (shifted - base) / h - z
        errors.append(max(l2_norm(mesh, d) for d in diff))
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert slope >= 0.9


def test_hessian_is_symmetric(sharp_functional, control, rng):
    v, w = rng.standard_normal((2, *control.shape))
    hv = sharp_functional.hessian_apply(control, v)
    hw = sharp_functional.hessian_apply(control, w)
    assert sharp_functional.inner(w, hv) == pytest.approx(sharp_functional.inner(v, hw), rel=1e-8)


def test_hessian_matches_gradient_differences(sharp_functional, control, rng):
    problem = sharp_functional.problem
    du = AMPLITUDE * rng.standard_normal(control.shape)
    h = FD_STEP
    control_part = problem.lam * du / problem.eps
    g_plus = sharp_functional.reduced_gradient(control + h * du).values
    g_minus = sharp_functional.reduced_gradient(control - h * du).values
    fd = (g_plus - g_minus) / (2.0 * h) - control_part
    state_part = sharp_functional.hessian_apply(control, du).values - control_part
    err = sharp_functional.norm(fd - state_part) / sharp_functional.norm(state_part)
    assert err <= 1e-3


def test_gradient_vanishes_on_a_reached_pure_phase(mesh16):
    problem = make_problem(mesh16, hexagon(delta=1e-3))
    problem.y0 = np.ones(mesh16.n_nodes)
    problem.y_target = np.ones(mesh16.n_nodes)
    functional = ReducedFunctional(StateSolver(problem))
    u = problem.zero_control()
    np.testing.assert_array_equal(functional.reduced_gradient(u).values, 0.0)
    du = np.zeros_like(u.values)
    du[2] = 1.0
    hess = functional.hessian_apply(u, du).values
    assert functional.norm(hess) > problem.lam / problem.eps * functional.norm(du) * 0.5


def test_additional_adjoint_needs_regularization(mesh16):
    problem = make_problem(mesh16, hexagon(delta=0.0))
    problem.y0 = np.ones(mesh16.n_nodes)
    solver = StateSolver(problem)
    states = solver.forward_solve(problem.zero_control()).states
    zeros = np.zeros_like(states.values)
    with pytest.raises(DomainError):
        additional_adjoint_solve(solver, states, zeros, zeros)


def test_step_operators_are_reproducible(hex_solver, control):
    states = hex_solver.forward_solve(control).states
    first = [op.fingerprint() for op in step_operators(hex_solver, states)]
    second = [op.fingerprint() for op in step_operators(hex_solver, states)]
    assert first == second
    assert len(set(first)) == len(first)


def test_cache_keeps_the_incumbent(hex_problem, control):
    functional = ReducedFunctional(StateSolver(hex_problem, TIGHT_SOLVER), cache_size=2)
    u0, u1, u2 = control, 2.0 * control, 3.0 * control
    functional.value(u0)
    functional.reduced_gradient(u0)
    assert functional.n_forward == 1
    functional.value(u1)
    functional.value(u0)
    functional.value(u2)
    functional.value(u0)
    assert functional.n_forward == 3
