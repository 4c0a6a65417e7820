from .anisotropy import AnisotropySpec, from_matrices, hexagon, isotropic, regularized_l1
from .config import ScenarioConfig, SolverConfig, TrustRegionConfig, load_config
from .fem import StructuredTriMesh, build_mesh
from .optimizer import TrustRegionReport, minimize, steihaug_solve
from .sensitivity import ReducedFunctional
from .state import ProblemSpec, StateSolver, TimeGrid, Trajectory
