"""
Implicit time stepping of the anisotropic Allen-Cahn state equation.

Every step j solves F(y) = 0 with
    F(y) = (eps/tau_j) M (y - y_{j-1}) + eps Q(y) + (1/eps) P(y) - M u_j,
where Q is the quasilinear anisotropy term and P the double-well load. F is
the gradient of the strongly convex step functional, so the damped Newton
iteration below is a minimizing movement.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .anisotropy import AnisotropySpec
from .config import SolverConfig
from .constants import C_PSI, DEFAULT_EPS, DEFAULT_LAMBDA
from .errors import NewtonError, NonFiniteError, SolverError
from .fem import (
    StructuredTriMesh,
    anisotropic_energy,
    apply_quasilinear_term,
    assemble_potential_term,
    assemble_weighted_stiffness,
    integrate_potential,
    l2_norm,
    pcg_solve,
    trajectory_l2_norm,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    taus: np.ndarray

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.taus, dtype=float))
        if taus.ndim != 1 or taus.size < 1:
            raise ValueError("a time grid needs at least one step")
        if np.any(taus <= 0.0):
            raise ValueError("time steps must be positive")
        taus.setflags(write=False)
        object.__setattr__(self, "taus", taus)

    @classmethod
    def uniform(
        cls, final_time: float, tau: float | None = None, n_steps: int | None = None
    ) -> "TimeGrid":
        """N = round(T / tau) equal steps; tau is re-derived as T / N."""
        if final_time <= 0.0:
            raise ValueError(f"final time must be positive, got {final_time}")
        if n_steps is None:
            if tau is None:
                raise ValueError("either tau or n_steps is required")
            n_steps = max(1, round(final_time / tau))
        return cls(np.full(n_steps, final_time / n_steps))

    @property
    def n_steps(self) -> int:
        return self.taus.size

    @property
    def final_time(self) -> float:
        return float(self.taus.sum())

    @property
    def times(self) -> np.ndarray:
        """t_0 = 0, t_1, ..., t_N."""
        return np.concatenate([[0.0], np.cumsum(self.taus)])


@dataclass(eq=False)
class Trajectory:
    """One nodal field per time interval, stored as an (N, n_nodes) array."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.n_steps:
            raise ValueError(
                f"trajectory needs {self.grid.n_steps} fields, got array of shape {self.values.shape}"
            )

    @classmethod
    def zeros(cls, grid: TimeGrid, n_nodes: int) -> "Trajectory":
        return cls(grid, np.zeros((grid.n_steps, n_nodes)))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, j: int) -> np.ndarray:
        return self.values[j]

    def norm(self, mesh: StructuredTriMesh) -> float:
        return trajectory_l2_norm(mesh, self.values, self.grid.taus)


def as_values(u) -> np.ndarray:
    return u.values if isinstance(u, Trajectory) else np.asarray(u, dtype=float)


@dataclass(eq=False)
class ProblemSpec:
    mesh: StructuredTriMesh
    grid: TimeGrid
    aniso: AnisotropySpec
    y0: np.ndarray
    y_target: np.ndarray
    eps: float = DEFAULT_EPS
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.lam <= 0.0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        tau_max = float(self.grid.taus.max())
        if tau_max >= self.eps**2 / C_PSI:
            raise ValueError(
                f"time step {tau_max:.4g} violates tau < eps^2/C_psi = {self.eps**2 / C_PSI:.4g}"
            )
        self.y0 = np.asarray(self.y0, dtype=float)
        self.y_target = np.asarray(self.y_target, dtype=float)
        for name, f in (("y0", self.y0), ("y_target", self.y_target)):
            if f.shape != (self.mesh.n_nodes,):
                raise ValueError(f"{name} has shape {f.shape}, mesh has {self.mesh.n_nodes} nodes")

    def zero_control(self) -> Trajectory:
        return Trajectory.zeros(self.grid, self.mesh.n_nodes)


@dataclass
class StepDiagnostics:
    step: int
    t: float
    newton_iters: int
    residual: float
    energy: float


@dataclass(eq=False)
class ForwardResult:
    states: Trajectory
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states.values[-1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(d) for d in self.diagnostics],
            columns=["step", "t", "newton_iters", "residual", "energy"],
        )


@dataclass(frozen=True)
class CostBreakdown:
    j: float
    j1: float
    j2: float


class StateSolver:
    def __init__(self, problem: ProblemSpec, settings: SolverConfig | None = None):
        self.problem = problem
        self.settings = settings or SolverConfig()
        aniso = problem.aniso
        # exact residual at delta = 0, regularized Jacobian
        self.jacobian_aniso = (
            aniso if aniso.delta > 0.0 else aniso.with_delta(self.settings.jacobian_delta)
        )

    @property
    def mesh(self) -> StructuredTriMesh:
        return self.problem.mesh

    def residual(self, y, y_prev, u_j, tau: float) -> np.ndarray:
        p, mass = self.problem, self.mesh.mass
        return (
            (p.eps / tau) * (mass @ (y - y_prev))
            + p.eps * apply_quasilinear_term(self.mesh, p.aniso, y)
            + assemble_potential_term(self.mesh, y, 1) / p.eps
            - mass @ u_j
        )

    def step_operator(self, y, tau: float) -> sp.csr_matrix:
        """eps K_{A''(grad y)} + (1/eps) M_{psi''(y)} + (eps/tau) M, the Jacobian of `residual`."""
        p, mesh = self.problem, self.mesh
        coeff = self.jacobian_aniso.a_hess(mesh.gradients(y))
        op = (
            p.eps * assemble_weighted_stiffness(mesh, coeff)
            + assemble_potential_term(mesh, y, 2) / p.eps
            + (p.eps / tau) * mesh.mass
        )
        return op.tocsr()

    jacobian = step_operator

    def solve_linear(self, op: sp.csr_matrix, rhs: np.ndarray, rel_tol: float) -> np.ndarray:
        if self.settings.linear_solver == "direct":
            return spla.spsolve(op.tocsc(), rhs)
        x, iters = pcg_solve(op, rhs, rel_tol=rel_tol, max_iter=self.settings.linear_max_iter)
        logger.debug("pcg converged in %d iterations", iters)
        return x

    def _newton(self, y_prev, u_j, tau: float, tol: float) -> tuple[np.ndarray, int, float]:
        s = self.settings
        threshold = tol * (1.0 + np.linalg.norm(self.mesh.mass @ u_j))
        y = np.array(y_prev, dtype=float)
        res_vec = self.residual(y, y_prev, u_j, tau)
        res = float(np.linalg.norm(res_vec))
        for it in range(s.newton_max_iter + 1):
            if not math.isfinite(res):
                raise NonFiniteError(f"non-finite Newton residual after {it} iterations")
            if res <= threshold:
                return y, it, res
            if it == s.newton_max_iter:
                break
            dy = self.solve_linear(self.step_operator(y, tau), -res_vec, s.newton_linear_tol)
            step = 1.0
            for _ in range(s.max_halvings + 1):
                trial = y + step * dy
                trial_vec = self.residual(trial, y_prev, u_j, tau)
                trial_res = float(np.linalg.norm(trial_vec))
                if trial_res <= (1.0 - s.armijo * step) * res:
                    break
                step *= 0.5
            else:
                if not trial_res < res:
                    raise NewtonError("line search found no residual decrease", res, it + 1)
            logger.debug("newton it=%d step=%.3g residual=%.3e", it + 1, step, trial_res)
            y, res_vec, res = trial, trial_vec, trial_res
        raise NewtonError("Newton did not converge", res, s.newton_max_iter)

    def newton_step_solve(self, y_prev, u_j, tau: float, tol: float | None = None) -> np.ndarray:
        tol = self.settings.newton_tol if tol is None else tol
        y, _, _ = self._newton(np.asarray(y_prev, dtype=float), np.asarray(u_j, dtype=float), tau, tol)
        return y

    def forward_solve(self, u, y0=None) -> ForwardResult:
        grid = self.problem.grid
        u = as_values(u)
        y_prev = self.problem.y0 if y0 is None else np.asarray(y0, dtype=float)
        states = np.empty((grid.n_steps, self.mesh.n_nodes))
        diagnostics = []
        times = grid.times
        for j, tau in enumerate(grid.taus):
            try:
                y, iters, res = self._newton(y_prev, u[j], float(tau), self.settings.newton_tol)
            except SolverError as err:
                err.step_index = j + 1
                raise
            states[j] = y
            diagnostics.append(
                StepDiagnostics(
                    step=j + 1,
                    t=float(times[j + 1]),
                    newton_iters=iters,
                    residual=res,
                    energy=self.energy(y),
                )
            )
            y_prev = y
        return ForwardResult(Trajectory(grid, states), diagnostics)

    def energy(self, y) -> float:
        eps = self.problem.eps
        return eps * anisotropic_energy(self.mesh, self.problem.aniso, y) + integrate_potential(
            self.mesh, y
        ) / eps

    def step_functional(self, y, y_prev, u_j, tau: float) -> float:
        """Strongly convex functional whose gradient is `residual`."""
        mass = self.mesh.mass
        diff = np.asarray(y) - y_prev
        return (
            self.problem.eps / (2.0 * tau) * float(diff @ (mass @ diff))
            + self.energy(y)
            - float(np.asarray(u_j) @ (mass @ y))
        )

    def cost(self, states, u) -> CostBreakdown:
        p = self.problem
        mismatch = as_values(states)[-1] - p.y_target
        j1 = 0.5 * float(mismatch @ (self.mesh.mass @ mismatch))
        j2 = p.lam / (2.0 * p.eps) * trajectory_l2_norm(self.mesh, as_values(u), p.grid.taus) ** 2
        return CostBreakdown(j=j1 + j2, j1=j1, j2=j2)


def interface_radius(mesh: StructuredTriMesh, y) -> float:
    """Radius of the disc with the same area as the phase {y > 0}."""
    area = float(np.sum(mesh.mass @ (0.5 * (1.0 + np.asarray(y)))))
    return math.sqrt(max(area, 0.0) / math.pi)


def lipschitz_ratio(solver: StateSolver, u, u_other) -> float:
    """||y - y~||_{L^inf(L^2)} / ||u - u~||_{L^2(Q)} for the two forward solves."""
    mesh = solver.mesh
    y = solver.forward_solve(u).states.values
    y_other = solver.forward_solve(u_other).states.values
    du = as_values(u) - as_values(u_other)
    denom = trajectory_l2_norm(mesh, du, solver.problem.grid.taus)
    if denom == 0.0:
        raise ValueError("controls coincide")
    return max(l2_norm(mesh, a - b) for a, b in zip(y, y_other)) / denom
