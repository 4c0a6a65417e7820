import math
from typing import Literal


ANISOTROPY_NAMES = Literal["isotropic", "l1", "hexagon", "custom"]
SHAPE_KINDS = Literal[
    "circle", "square", "hexagon", "star", "union", "full_domain", "constant"
]
STUDY_AXES = Literal["mesh", "tau"]
LINEAR_SOLVERS = Literal["pcg", "direct"]
WANDB_MODES = Literal["online", "offline", "disabled"]
TERMINATION_KINDS = Literal["interior", "boundary", "neg_curvature", "max_iter"]

# semiconvexity constant of the double well psi(s) = (1 - s^2)^2 / 4
C_PSI = 1.0

DEFAULT_EPS = 1.0 / (14.0 * math.pi)
DEFAULT_LAMBDA = 0.01
DEFAULT_DELTA = 1e-7
DEFAULT_EPS_ANISO = 0.01

DESK_N_DIV = 64
DESK_FINAL_TIME = 2e-3
DESK_TAU = 1e-4

PAPER_N_DIV = 128
PAPER_FINAL_TIME = 1.625e-2
PAPER_TAU = 1.625e-4

SNAPSHOT_FRAMES = 8
