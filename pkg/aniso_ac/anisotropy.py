"""
BGN anisotropies A(p) = 1/2 gamma(p)^2 with gamma(p) = sum_l sqrt(p^T G_l p + delta).

Every evaluation broadcasts over leading axes of `p` (shape (..., d)), so the
FEM layer passes the whole array of element gradients in one call.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AnisotropySpec:
    """
    Matrices G_l (already divided by their count L) and the shift delta.

    Args:
        matrices: array of shape (L, d, d), symmetric positive definite
        delta: regularization shift, delta >= 0
    """

    matrices: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[0] < 1 or mats.shape[1] != mats.shape[2]:
            raise ValueError(f"expected an (L, d, d) stack of matrices, got {mats.shape}")
        if np.max(np.abs(mats - mats.transpose(0, 2, 1))) > _SYMMETRY_TOL:
            raise ValueError("anisotropy matrices must be symmetric")
        mats = 0.5 * (mats + mats.transpose(0, 2, 1))
        if np.any(np.linalg.eigvalsh(mats) <= 0.0):
            raise ValueError("anisotropy matrices must be positive definite")
        if not self.delta >= 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_matrices(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def with_delta(self, delta: float) -> "AnisotropySpec":
        return AnisotropySpec(self.matrices, delta)

    def _parts(self, p):
        p = np.asarray(p, dtype=float)
        gp = np.einsum("lij,...j->...li", self.matrices, p)
        quad = np.einsum("...li,...i->...l", gp, p)
        gam = np.sqrt(np.maximum(quad, 0.0) + self.delta)
        return p, gp, gam

    def _inverse(self, gam: np.ndarray, what: str) -> np.ndarray:
        if np.any(gam == 0.0):
            raise DomainError(
                f"{what} is undefined at p = 0 for delta = 0 (A'' is 0-homogeneous)"
            )
        return 1.0 / gam

    def gamma_l(self, p, l: int):
        """sqrt(p^T G_l p + delta) for the zero-based matrix index l."""
        _, _, gam = self._parts(p)
        return gam[..., l]

    def gamma(self, p):
        _, _, gam = self._parts(p)
        return gam.sum(axis=-1)

    def a_value(self, p):
        return 0.5 * self.gamma(p) ** 2

    def a_grad(self, p):
        # A'(0) = 0 at delta = 0 by continuity
        _, gp, gam = self._parts(p)
        inv = np.divide(1.0, gam, out=np.zeros_like(gam), where=gam > 0.0)
        dgamma = np.einsum("...l,...li->...i", inv, gp)
        return gam.sum(axis=-1)[..., None] * dgamma

    def _second_order(self, p, what: str):
        p, gp, gam = self._parts(p)
        inv = self._inverse(gam, what)
        total = gam.sum(axis=-1)
        dgamma = np.einsum("...l,...li->...i", inv, gp)
        d2gamma = np.einsum("...l,lij->...ij", inv, self.matrices) - np.einsum(
            "...l,...li,...lj->...ij", inv**3, gp, gp
        )
        return p, gp, inv, total, dgamma, d2gamma

    def a_hess(self, p):
        _, _, _, total, dgamma, d2gamma = self._second_order(p, "A''")
        return total[..., None, None] * d2gamma + dgamma[..., :, None] * dgamma[..., None, :]

    def a_third_apply(self, p, q):
        """
        Directional derivative of A'' at p along q, i.e. M[i, j] = sum_k A'''[i, j, k] q[k].

        The direction q occupies the last tensor slot; with the test-function
        gradient in the first slot this is the contraction used by the
        additional adjoint equation.
        """
        p, gp, inv, total, dgamma, d2gamma = self._second_order(p, "A'''")
        q = np.asarray(q, dtype=float)
        s = np.einsum("...li,...i->...l", gp, q)
        gq = np.einsum("lij,...j->...li", self.matrices, q)
        inv3 = inv**3
        d_gamma_q = np.einsum("...l,...l->...", inv, s)
        d2gamma_q = np.einsum("...ij,...j->...i", d2gamma, q)
        cross = np.einsum("...l,...li,...lj->...ij", inv3, gq, gp)
        d_d2gamma = (
            -np.einsum("...l,lij->...ij", s * inv3, self.matrices)
            - cross
            - np.swapaxes(cross, -1, -2)
            + 3.0 * np.einsum("...l,...li,...lj->...ij", s * inv3 * inv**2, gp, gp)
        )
        return (
            d_gamma_q[..., None, None] * d2gamma
            + total[..., None, None] * d_d2gamma
            + d2gamma_q[..., :, None] * dgamma[..., None, :]
            + dgamma[..., :, None] * d2gamma_q[..., None, :]
        )

    def lifted(self) -> "AnisotropySpec":
        """Unregularized anisotropy on R^(d+1) with matrices diag(G_l, 1)."""
        n, d = self.n_matrices, self.dim
        mats = np.zeros((n, d + 1, d + 1))
        mats[:, :d, :d] = self.matrices
        mats[:, d, d] = 1.0
        return AnisotropySpec(mats, 0.0)

    def lifted_value(self, p):
        p = np.asarray(p, dtype=float)
        tail = np.full(p.shape[:-1] + (1,), math.sqrt(self.delta))
        return self.lifted().a_value(np.concatenate([p, tail], axis=-1))


def _rotation(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s], [s, c]])


def from_matrices(matrices, delta: float = 0.0, rescale: bool = True) -> AnisotropySpec:
    """Build a spec from raw BGN matrices, dividing them by their count unless told not to."""
    mats = np.array(matrices, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if rescale:
        mats = mats / mats.shape[0]
    return AnisotropySpec(mats, delta)


def isotropic(delta: float = 0.0, **_) -> AnisotropySpec:
    return from_matrices(np.eye(2)[None], delta)


def regularized_l1(delta: float = 0.0, eps_aniso: float = 0.01, **_) -> AnisotropySpec:
    return from_matrices([np.diag([1.0, eps_aniso]), np.diag([eps_aniso, 1.0])], delta)


def hexagon(delta: float = 0.0, eps_aniso: float = 0.01, **_) -> AnisotropySpec:
    base = np.diag([1.0, eps_aniso])
    mats = []
    for l in (1, 2, 3):
        rot = _rotation(math.pi * l / 3.0)
        mats.append(rot @ base @ rot.T)
    return from_matrices(mats, delta)


def third_derivative_scaling(
    spec: AnisotropySpec, deltas, direction=(1.0, 0.0), q=(0.0, 1.0)
) -> np.ndarray:
    """Frobenius norm of A'''_delta(sqrt(delta) * direction)[q] for every delta."""
    direction = np.asarray(direction, dtype=float)
    norms = []
    for delta in deltas:
        reg = spec.with_delta(delta)
        tensor = reg.a_third_apply(math.sqrt(delta) * direction, q)
        norms.append(float(np.linalg.norm(tensor)))
    logger.debug("third derivative norms %s for deltas %s", norms, list(deltas))
    return np.asarray(norms)
