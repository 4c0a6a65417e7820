import os
from pathlib import Path

import numpy as np
import pytest

from aniso_ac.anisotropy import hexagon, isotropic
from aniso_ac.config import SolverConfig
from aniso_ac.fem import build_mesh
from aniso_ac.sensitivity import ReducedFunctional
from aniso_ac.shapes import Circle, make_field
from aniso_ac.state import ProblemSpec, StateSolver, TimeGrid

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

# direct solves keep Newton residuals near round-off for finite-difference checks
TIGHT_SOLVER = SolverConfig(newton_tol=1e-12, linear_solver="direct")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def mesh4():
    return build_mesh(4)


@pytest.fixture
def mesh16():
    return build_mesh(16)


def make_problem(mesh, aniso, n_steps=5, tau=1e-4, r0=0.5, r_target=0.6, lam=0.01):
    eps = 1.0 / (14.0 * np.pi)
    return ProblemSpec(
        mesh=mesh,
        grid=TimeGrid.uniform(n_steps * tau, n_steps=n_steps),
        aniso=aniso,
        y0=make_field(Circle(radius=r0), mesh, eps),
        y_target=make_field(Circle(radius=r_target), mesh, eps),
        eps=eps,
        lam=lam,
    )


@pytest.fixture
def hex_problem(mesh16):
    return make_problem(mesh16, hexagon(delta=1e-3))


@pytest.fixture
def iso_problem(mesh16):
    return make_problem(mesh16, isotropic(delta=1e-7))


@pytest.fixture
def hex_solver(hex_problem):
    return StateSolver(hex_problem, TIGHT_SOLVER)


@pytest.fixture
def hex_functional(hex_solver):
    return ReducedFunctional(hex_solver, cache_size=4)


@pytest.fixture
def control(hex_problem, rng):
    return 0.5 * rng.standard_normal((hex_problem.grid.n_steps, hex_problem.mesh.n_nodes))


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("ANISO_AC_") or key.startswith("WANDB_"):
            monkeypatch.delenv(key)
    monkeypatch.setenv("WANDB_MODE", "disabled")
