import logging

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from .anisotropy import AnisotropySpec

logger = logging.getLogger(__name__)


def dual_norm(aniso: AnisotropySpec, directions: np.ndarray, n_grid: int = 8192) -> np.ndarray:
    """
    gamma*(q) = sup_p q.p / gamma(p) over unit p, for (K, 2) directions q.

    The supremum is located on a p-angle grid and then refined by a bounded
    scalar search around the best grid angle.
    """
    density = aniso.with_delta(0.0)
    phis = np.linspace(0.0, 2.0 * np.pi, n_grid, endpoint=False)
    unit = np.column_stack([np.cos(phis), np.sin(phis)])
    ratios = (directions @ unit.T) / density.gamma(unit)
    best = np.argmax(ratios, axis=1)
    width = 2.0 * np.pi / n_grid

    def negative_ratio(phi, q):
        p = np.array([np.cos(phi), np.sin(phi)])
        return -(q @ p) / float(density.gamma(p))

    values = np.empty(len(directions))
    for k, q in enumerate(directions):
        phi0 = phis[best[k]]
        res = minimize_scalar(
            negative_ratio,
            bounds=(phi0 - width, phi0 + width),
            args=(q,),
            method="bounded",
            options={"xatol": 1e-12},
        )
        values[k] = max(-res.fun, ratios[k, best[k]])
    return values


def wulff_shape(aniso: AnisotropySpec, n_angles: int = 720, n_grid: int = 8192) -> np.ndarray:
    """Boundary points e_theta / gamma*(e_theta) of the Wulff shape, shape (n_angles, 2)."""
    thetas = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    directions = np.column_stack([np.cos(thetas), np.sin(thetas)])
    radii = 1.0 / dual_norm(aniso, directions, n_grid)
    logger.debug("wulff shape radii in [%.6g, %.6g]", radii.min(), radii.max())
    return directions * radii[:, None]


def wulff_frame(points: np.ndarray) -> pd.DataFrame:
    theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
    return pd.DataFrame({"theta": theta, "x": points[:, 0], "y": points[:, 1]})


def is_convex(points: np.ndarray, tol: float = 1e-12) -> bool:
    """Cross-product sign test for a closed counter-clockwise polygon."""
    a = np.roll(points, 1, axis=0) - points
    b = np.roll(points, -1, axis=0) - points
    cross = b[:, 0] * a[:, 1] - b[:, 1] * a[:, 0]
    return bool(np.all(cross >= -tol))
