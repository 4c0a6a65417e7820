"""
Discrete sensitivities of the reduced cost j(u) = j1(S(u)) + j2(u).

All sweeps share the frozen step operators
    L_j = eps K_{A''(grad y_j)} + (1/eps) M_{psi''(y_j)} + (eps/tau_j) M,
which are symmetric, so the adjoint sweep reuses the linearized-state operator.
Gradients and Hessian actions are representatives in the pairing
<v, w> = sum_j tau_j v_j^T M w_j.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DomainError, SolverError
from .fem import assemble_potential_term, pcg_solve
from .state import CostBreakdown, ForwardResult, StateSolver, Trajectory, as_values

logger = logging.getLogger(__name__)


class LinearStepOperator:
    def __init__(self, solver: StateSolver, y_j: np.ndarray, tau: float):
        self.state = y_j
        self.tau = tau
        self.matrix = solver.step_operator(y_j, tau)
        self._settings = solver.settings
        self._lu = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        s = self._settings
        if s.linear_solver == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.matrix.tocsc())
            return self._lu.solve(rhs)
        x, _ = pcg_solve(
            self.matrix, rhs, rel_tol=s.sensitivity_linear_tol, max_iter=s.linear_max_iter
        )
        return x

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.matrix.indptr, self.matrix.indices, self.matrix.data):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


def step_operators(solver: StateSolver, states) -> list[LinearStepOperator]:
    states = as_values(states)
    return [
        LinearStepOperator(solver, states[j], float(tau))
        for j, tau in enumerate(solver.problem.grid.taus)
    ]


def _sweep(order, solve_step):
    """Run `solve_step(j)` for each j in `order`, tagging failures with the 1-based step."""
    for j in order:
        try:
            solve_step(j)
        except SolverError as err:
            err.step_index = j + 1
            raise


def linearized_solve(
    solver: StateSolver, states, v, operators: list[LinearStepOperator] | None = None
) -> Trajectory:
    """z_j with L_j z_j = M v_j + (eps/tau_j) M z_{j-1}, z_0 = 0."""
    problem = solver.problem
    ops = operators or step_operators(solver, states)
    mass, eps = solver.mesh.mass, problem.eps
    v = as_values(v)
    z = np.zeros_like(v)

    def solve_step(j):
        rhs = mass @ v[j]
        if j > 0:
            rhs = rhs + (eps / ops[j].tau) * (mass @ z[j - 1])
        z[j] = ops[j].solve(rhs)

    _sweep(range(len(ops)), solve_step)
    return Trajectory(problem.grid, z)


def adjoint_solve(
    solver: StateSolver,
    states,
    y_target: np.ndarray | None = None,
    operators: list[LinearStepOperator] | None = None,
) -> Trajectory:
    """Backward sweep L_j p_j = (eps/tau_j) M p_{j+1} from p_{N+1} = y_N - y_target."""
    problem = solver.problem
    ops = operators or step_operators(solver, states)
    states = as_values(states)
    target = problem.y_target if y_target is None else y_target
    mass, eps = solver.mesh.mass, problem.eps
    p = np.zeros_like(states)
    terminal = states[-1] - target

    def solve_step(j):
        nxt = terminal if j == len(ops) - 1 else p[j + 1]
        p[j] = ops[j].solve((eps / ops[j].tau) * (mass @ nxt))

    _sweep(reversed(range(len(ops))), solve_step)
    return Trajectory(problem.grid, p)


def third_order_source(solver: StateSolver, y_j, z_j, p_j) -> np.ndarray:
    """eps (A'''(grad y)[grad phi_i, grad z], grad p) + (1/eps)(psi'''(y) z p, phi_i)."""
    mesh, problem = solver.mesh, solver.problem
    aniso = problem.aniso
    source = assemble_potential_term(mesh, y_j, 3, weights=[z_j, p_j]) / problem.eps
    # A is quadratic for a single matrix
    if aniso.n_matrices > 1:
        tensor = aniso.a_third_apply(mesh.gradients(y_j), mesh.gradients(z_j))
        flux = np.einsum("eij,ej->ei", tensor, mesh.gradients(p_j))
        local = mesh.areas[:, None] * np.einsum("eki,ei->ek", mesh.shape_grads, flux)
        source = source + problem.eps * mesh.scatter_vector(local)
    return source


def additional_adjoint_solve(
    solver: StateSolver,
    states,
    p,
    z,
    dy_final: np.ndarray | None = None,
    operators: list[LinearStepOperator] | None = None,
) -> Trajectory:
    """
    Backward sweep L_j dp_j = (eps/tau_j) M dp_{j+1} - source_j with dp_{N+1} = dy_final.

    dy_final defaults to z_N, the terminal state perturbation.
    """
    problem = solver.problem
    if problem.aniso.delta <= 0.0:
        raise DomainError("the additional adjoint needs a regularized anisotropy (delta > 0)")
    ops = operators or step_operators(solver, states)
    states, p, z = as_values(states), as_values(p), as_values(z)
    terminal = z[-1] if dy_final is None else dy_final
    mass, eps = solver.mesh.mass, problem.eps
    dp = np.zeros_like(states)

    def solve_step(j):
        nxt = terminal if j == len(ops) - 1 else dp[j + 1]
        rhs = (eps / ops[j].tau) * (mass @ nxt) - third_order_source(solver, states[j], z[j], p[j])
        dp[j] = ops[j].solve(rhs)

    _sweep(reversed(range(len(ops))), solve_step)
    return Trajectory(problem.grid, dp)


@dataclass(eq=False)
class _Iterate:
    u: np.ndarray
    forward: ForwardResult
    cost: CostBreakdown
    operators: list[LinearStepOperator] | None = None
    adjoint: np.ndarray | None = None


class ReducedFunctional:
    """
    j(u) with cached forward, operator and adjoint data.

    The most recently used control iterates are kept (least recently used
    evicted first), so the incumbent survives a rejected trial step.
    """

    def __init__(self, solver: StateSolver, cache_size: int = 2):
        self.solver = solver
        self.problem = solver.problem
        self._cache: list[_Iterate] = []
        self._cache_size = cache_size
        self.n_forward = 0

    def inner(self, v, w) -> float:
        v, w = as_values(v), as_values(w)
        mw = (self.solver.mesh.mass @ w.T).T
        return float(np.einsum("j,jn,jn->", self.problem.grid.taus, v, mw))

    def norm(self, v) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def _iterate(self, u) -> _Iterate:
        u = as_values(u)
        for k, it in enumerate(self._cache):
            if np.array_equal(it.u, u):
                self._cache.insert(0, self._cache.pop(k))
                return it
        forward = self.solver.forward_solve(u)
        self.n_forward += 1
        it = _Iterate(u=u.copy(), forward=forward, cost=self.solver.cost(forward.states, u))
        self._cache = [it, *self._cache][: self._cache_size]
        return it

    def _operators(self, it: _Iterate) -> list[LinearStepOperator]:
        if it.operators is None:
            it.operators = step_operators(self.solver, it.forward.states)
        return it.operators

    def _adjoint(self, it: _Iterate) -> np.ndarray:
        if it.adjoint is None:
            it.adjoint = adjoint_solve(
                self.solver, it.forward.states, operators=self._operators(it)
            ).values
        return it.adjoint

    def forward(self, u) -> ForwardResult:
        return self._iterate(u).forward

    def value(self, u) -> CostBreakdown:
        return self._iterate(u).cost

    def linearized_solve(self, u, v) -> Trajectory:
        it = self._iterate(u)
        return linearized_solve(self.solver, it.forward.states, v, self._operators(it))

    def adjoint_solve(self, u) -> Trajectory:
        return Trajectory(self.problem.grid, self._adjoint(self._iterate(u)))

    def reduced_gradient(self, u) -> Trajectory:
        it = self._iterate(u)
        grad = (self.problem.lam * it.u + self._adjoint(it)) / self.problem.eps
        return Trajectory(self.problem.grid, grad)

    def additional_adjoint_solve(self, u, z, dy_final=None) -> Trajectory:
        it = self._iterate(u)
        return additional_adjoint_solve(
            self.solver,
            it.forward.states,
            self._adjoint(it),
            z,
            dy_final=dy_final,
            operators=self._operators(it),
        )

    def hessian_apply(self, u, du) -> Trajectory:
        du = as_values(du)
        z = self.linearized_solve(u, du)
        dp = self.additional_adjoint_solve(u, z)
        return Trajectory(self.problem.grid, (self.problem.lam * du + dp.values) / self.problem.eps)
