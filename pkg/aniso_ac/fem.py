"""
P1 finite elements on the uniform right-diagonal triangulation of (-1, 1)^2.

Element gradients of a P1 field are constant, so every anisotropy term is
integrated with one evaluation per element. Potential terms use a fixed
6-point degree-4 rule.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .anisotropy import AnisotropySpec
from .errors import IndefiniteOperatorError, LinearSolverError

logger = logging.getLogger(__name__)

# barycentric points and area-normalized weights of the degree-4 rule
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_POINTS = np.array(
    [
        [_A1, _A1, 1.0 - 2.0 * _A1],
        [_A1, 1.0 - 2.0 * _A1, _A1],
        [1.0 - 2.0 * _A1, _A1, _A1],
        [_A2, _A2, 1.0 - 2.0 * _A2],
        [_A2, 1.0 - 2.0 * _A2, _A2],
        [1.0 - 2.0 * _A2, _A2, _A2],
    ]
)
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def psi(s):
    return 0.25 * (1.0 - s**2) ** 2


def dpsi(s):
    return s**3 - s


def d2psi(s):
    return 3.0 * s**2 - 1.0


def d3psi(s):
    return 6.0 * s


@dataclass(frozen=True, eq=False)
class StructuredTriMesh:
    n_div: int
    coords: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray
    # gradients of the three local shape functions, shape (E, 3, 2)
    shape_grads: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @property
    def h(self) -> float:
        return 2.0 / self.n_div

    def gradients(self, y: np.ndarray) -> np.ndarray:
        """Element-wise constant gradient of the P1 field y, shape (E, 2)."""
        return np.einsum("eki,ek->ei", self.shape_grads, np.asarray(y)[self.triangles])

    def at_quadrature(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y)[self.triangles] @ QUAD_POINTS.T

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return assemble_mass(self)

    @cached_property
    def laplace(self) -> sp.csr_matrix:
        eye = np.broadcast_to(np.eye(2), (self.n_elements, 2, 2))
        return assemble_weighted_stiffness(self, eye)

    def scatter_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum (E, 3, 3) element matrices into a global CSR matrix."""
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        mat = sp.coo_matrix(
            (local.reshape(-1), (rows, cols)), shape=(self.n_nodes, self.n_nodes)
        ).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum (E, 3) element vectors into a nodal vector."""
        return np.bincount(
            self.triangles.ravel(), weights=local.ravel(), minlength=self.n_nodes
        )


def build_mesh(n_div: int) -> StructuredTriMesh:
    if n_div < 2:
        raise ValueError(f"n_div must be >= 2, got {n_div}")
    n = n_div
    xs = -1.0 + (2.0 / n) * np.arange(n + 1)
    xx, yy = np.meshgrid(xs, xs)
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    n00 = jj * (n + 1) + ii
    n10 = n00 + 1
    n01 = n00 + (n + 1)
    n11 = n01 + 1
    lower = np.stack([n00, n10, n11], axis=-1)
    upper = np.stack([n00, n11, n01], axis=-1)
    triangles = np.stack([lower, upper], axis=2).reshape(-1, 3)

    verts = coords[triangles]
    jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=-1)
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        raise ValueError("mesh contains a negatively oriented element")
    inv = np.linalg.inv(jac)
    shape_grads = np.stack([-(inv[:, 0] + inv[:, 1]), inv[:, 0], inv[:, 1]], axis=1)

    logger.debug("built mesh n_div=%d with %d nodes", n, coords.shape[0])
    return StructuredTriMesh(
        n_div=n,
        coords=coords,
        triangles=triangles,
        areas=0.5 * det,
        shape_grads=shape_grads,
    )


def assemble_mass(mesh: StructuredTriMesh) -> sp.csr_matrix:
    local = mesh.areas[:, None, None] * _LOCAL_MASS
    return mesh.scatter_matrix(local)


def assemble_weighted_stiffness(mesh: StructuredTriMesh, coeff) -> sp.csr_matrix:
    """K[i, j] = sum_e area_e grad(phi_j)^T C_e grad(phi_i) for one matrix C_e per element."""
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape[0] != mesh.n_elements or coeff.shape[1:] != (2, 2):
        raise ValueError(
            f"expected {mesh.n_elements} coefficient matrices of shape (2, 2), got {coeff.shape}"
        )
    g = mesh.shape_grads
    local = np.einsum("e,eai,eij,ebj->eab", mesh.areas, g, coeff, g)
    local = 0.5 * (local + local.transpose(0, 2, 1))
    return mesh.scatter_matrix(local)


def apply_quasilinear_term(
    mesh: StructuredTriMesh, aniso: AnisotropySpec, y: np.ndarray
) -> np.ndarray:
    flux = aniso.a_grad(mesh.gradients(y))
    local = mesh.areas[:, None] * np.einsum("eki,ei->ek", mesh.shape_grads, flux)
    return mesh.scatter_vector(local)


def anisotropic_energy(mesh: StructuredTriMesh, aniso: AnisotropySpec, y: np.ndarray) -> float:
    return float(mesh.areas @ aniso.a_value(mesh.gradients(y)))


def integrate_potential(mesh: StructuredTriMesh, y: np.ndarray) -> float:
    values = psi(mesh.at_quadrature(y)) @ QUAD_WEIGHTS
    return float(mesh.areas @ values)


def _load_vector(mesh: StructuredTriMesh, f_quad: np.ndarray) -> np.ndarray:
    local = mesh.areas[:, None] * np.einsum("eq,q,qa->ea", f_quad, QUAD_WEIGHTS, QUAD_POINTS)
    return mesh.scatter_vector(local)


def assemble_potential_term(
    mesh: StructuredTriMesh,
    y: np.ndarray,
    order: int,
    weights: np.ndarray | Sequence[np.ndarray] | None = None,
):
    """
    Potential contributions of the double well.

    order 1 returns the load vector of psi'(y), order 2 the matrix of psi''(y),
    order 3 the load vector of psi'''(y) times `weights` (a nodal field, or a
    sequence of them multiplied pointwise at the quadrature points).
    """
    yq = mesh.at_quadrature(y)
    if order == 1:
        return _load_vector(mesh, dpsi(yq))
    if order == 2:
        local = np.einsum(
            "e,eq,q,qa,qb->eab", mesh.areas, d2psi(yq), QUAD_WEIGHTS, QUAD_POINTS, QUAD_POINTS
        )
        return mesh.scatter_matrix(local)
    if order == 3:
        if weights is None:
            raise ValueError("order 3 needs a weight field")
        if isinstance(weights, np.ndarray) and weights.ndim == 1:
            weights = [weights]
        product = np.ones_like(yq)
        for w in weights:
            product = product * mesh.at_quadrature(w)
        return _load_vector(mesh, d3psi(yq) * product)
    raise ValueError(f"unsupported derivative order {order}")


def pcg_solve(
    op: sp.spmatrix | Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    precond: np.ndarray | None = None,
    rel_tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """
    Jacobi-preconditioned conjugate gradients for a symmetric positive definite operator.

    Args:
        op: sparse matrix or callable applying the operator
        rhs: right-hand side
        precond: operator diagonal; taken from `op` when it is a matrix
        rel_tol: stop once ||rhs - op x|| <= rel_tol * ||rhs||
        max_iter: iteration cap, defaults to twice the system size

    Returns:
        (solution, iterations)
    """
    rhs = np.asarray(rhs, dtype=float)
    apply = op if callable(op) and not sp.issparse(op) else op.dot
    if precond is None:
        precond = op.diagonal() if sp.issparse(op) else np.ones_like(rhs)
    if np.any(precond <= 0.0):
        raise IndefiniteOperatorError("non-positive diagonal in preconditioner", np.nan, 0)
    max_iter = max_iter if max_iter is not None else 2 * rhs.size

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    target = rel_tol * rhs_norm
    res = np.linalg.norm(r)
    if res <= target:
        return x, 0

    z = r / precond
    d = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ad = apply(d)
        curv = d @ ad
        if not curv > 0.0:
            raise IndefiniteOperatorError("operator is not positive definite", res / rhs_norm, it)
        alpha = rz / curv
        x += alpha * d
        r -= alpha * ad
        res = np.linalg.norm(r)
        if not np.isfinite(res):
            raise LinearSolverError("non-finite residual in CG", res, it)
        if res <= target:
            return x, it
        z = r / precond
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise LinearSolverError("CG did not converge", res / rhs_norm, max_iter)


def l2_norm(mesh: StructuredTriMesh, y: np.ndarray) -> float:
    return float(np.sqrt(max(y @ (mesh.mass @ y), 0.0)))


def h1_seminorm(mesh: StructuredTriMesh, y: np.ndarray) -> float:
    return float(np.sqrt(max(y @ (mesh.laplace @ y), 0.0)))


def h1_norm(mesh: StructuredTriMesh, y: np.ndarray) -> float:
    return float(np.hypot(l2_norm(mesh, y), h1_seminorm(mesh, y)))


def trajectory_l2_norm(mesh: StructuredTriMesh, fields, taus) -> float:
    """sqrt(sum_j tau_j ||field_j||^2), the L^2 norm over space-time."""
    total = sum(tau * l2_norm(mesh, f) ** 2 for f, tau in zip(fields, taus))
    return float(np.sqrt(total))
