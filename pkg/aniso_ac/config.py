from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .anisotropy import AnisotropySpec, from_matrices
from .constants import (
    ANISOTROPY_NAMES,
    C_PSI,
    DEFAULT_DELTA,
    DEFAULT_EPS,
    DEFAULT_EPS_ANISO,
    DEFAULT_LAMBDA,
    DESK_FINAL_TIME,
    DESK_N_DIV,
    DESK_TAU,
    LINEAR_SOLVERS,
    PAPER_FINAL_TIME,
    PAPER_N_DIV,
    PAPER_TAU,
    WANDB_MODES,
)
from .errors import ConfigError
from .registry import ANISOTROPY_REGISTRY
from .shapes import Circle, ShapeSpec, fits_inside


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # Newton iteration of each time step
    newton_tol: float = Field(
        default=1e-9, gt=0.0, description="Residual tolerance, scaled by 1 + ||M u_j||"
    )
    newton_max_iter: int = Field(default=30, gt=0)
    max_halvings: int = Field(default=8, ge=0, description="Backtracking halvings per step")
    armijo: float = Field(default=1e-4, gt=0.0, lt=1.0)
    jacobian_delta: float = Field(
        default=1e-12, gt=0.0, description="Shift used in the Jacobian of delta = 0 solves"
    )

    # linear solves
    linear_solver: LINEAR_SOLVERS = Field(default="pcg")
    newton_linear_tol: float = Field(default=1e-10, gt=0.0)
    sensitivity_linear_tol: float = Field(default=1e-12, gt=0.0)
    linear_max_iter: int | None = Field(default=None, gt=0)


class TrustRegionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    initial_radius: float = Field(default=1.0, gt=0.0)
    max_radius: float = Field(default=1e3, gt=0.0)
    min_radius: float = Field(
        default=1e-12, gt=0.0, description="Stop as stagnated once the radius drops below"
    )
    eta_accept: float = Field(default=0.1, gt=0.0, lt=1.0)
    eta_expand: float = Field(default=0.75, gt=0.0, lt=1.0)
    shrink: float = Field(default=0.25, gt=0.0, lt=1.0)
    expand: float = Field(default=2.0, gt=1.0)
    gtol_abs: float = Field(default=1e-13, ge=0.0)
    gtol_rel: float = Field(default=1e-8, ge=0.0)
    max_iter: int = Field(default=100, ge=0, description="Outer trust-region iterations")
    cg_rel_tol: float = Field(default=1e-6, gt=0.0, lt=1.0)
    cg_max_iter: int = Field(default=400, gt=0)
    max_retries: int = Field(
        default=5, ge=0, description="Consecutive failed trial solves before aborting"
    )

    @model_validator(mode="after")
    def _check_order(self):
        if not self.eta_accept < self.eta_expand:
            raise ValueError("eta_accept must be smaller than eta_expand")
        if self.initial_radius > self.max_radius:
            raise ValueError("initial_radius exceeds max_radius")
        return self


class AnisotropyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: ANISOTROPY_NAMES = Field(default="isotropic")
    eps_aniso: float = Field(default=DEFAULT_EPS_ANISO, gt=0.0)
    matrices: list[list[list[float]]] | None = Field(
        default=None, description="Raw matrices for name='custom', divided by their count"
    )

    @model_validator(mode="after")
    def _check_custom(self):
        if self.name == "custom" and not self.matrices:
            raise ValueError("a custom anisotropy needs `matrices`")
        return self

    def build(self, delta: float) -> AnisotropySpec:
        if self.name == "custom":
            return from_matrices(self.matrices, delta)
        return ANISOTROPY_REGISTRY[self.name](delta=delta, eps_aniso=self.eps_aniso)


class ScenarioConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="ANISO_AC_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    name: str = Field(default="scenario", description="Label used in logs and output folders")

    # model
    anisotropy: AnisotropyConfig = Field(default_factory=AnisotropyConfig)
    eps: float = Field(default=DEFAULT_EPS, gt=0.0, description="Interface width parameter")
    lam: float = Field(default=DEFAULT_LAMBDA, gt=0.0, description="Control cost weight")
    delta: float = Field(default=DEFAULT_DELTA, ge=0.0, description="Anisotropy regularization")
    initial: ShapeSpec = Field(default_factory=lambda: Circle(radius=0.5))
    target: ShapeSpec = Field(default_factory=lambda: Circle(radius=0.5))

    # discretization
    n_div: int = Field(default=DESK_N_DIV, ge=2, description="Mesh divisions per axis")
    final_time: float = Field(default=DESK_FINAL_TIME, gt=0.0)
    tau: float | None = Field(default=DESK_TAU, gt=0.0)
    n_steps: int | None = Field(default=None, gt=0, description="Overrides tau when set")
    paper_scale: bool = Field(default=False, description="Use the 129 x 129 grid horizon")

    optimizer: TrustRegionConfig = Field(default_factory=TrustRegionConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)

    # run control
    output_dir: Path = Field(default=Path("runs"))
    deterministic: bool = Field(default=False, description="Run study cells in-process")
    threads: int = Field(default=1, ge=1, description="Worker processes for studies")
    write_vtk: bool = Field(default=False)

    # Weights & Biases configuration
    wandb_project: str = Field(default="aniso-ac", description="W&B project name")
    wandb_mode: WANDB_MODES = Field(default="disabled")

    @model_validator(mode="before")
    @classmethod
    def _apply_paper_scale(cls, data: Any):
        if isinstance(data, dict) and str(data.get("paper_scale", "")).lower() in ("true", "1"):
            data = {
                **data,
                "n_div": PAPER_N_DIV,
                "final_time": PAPER_FINAL_TIME,
                "tau": PAPER_TAU,
                "n_steps": None,
            }
        return data

    @model_validator(mode="after")
    def _check_problem(self):
        n_steps, tau = self.resolved_steps()
        if tau >= self.eps**2 / C_PSI:
            raise ValueError(
                f"time step {tau:.4g} violates tau < eps^2/C_psi = {self.eps**2 / C_PSI:.4g}"
            )
        margin = 3.0 * self.eps
        for label, shape in (("initial", self.initial), ("target", self.target)):
            if not fits_inside(shape, margin):
                raise ValueError(f"{label} shape must stay {margin:.4g} away from the boundary")
        return self

    def resolved_steps(self) -> tuple[int, float]:
        """(N, tau) of the uniform time grid."""
        if self.n_steps is not None:
            n_steps = self.n_steps
        elif self.tau is not None:
            n_steps = max(1, round(self.final_time / self.tau))
        else:
            raise ValueError("either tau or n_steps is required")
        return n_steps, self.final_time / n_steps

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, TomlConfigSettingsSource(settings_cls)


def load_config(path: str | Path | None = None, **overrides) -> ScenarioConfig:
    """
    Resolve a scenario: keyword overrides, then ANISO_AC_* environment
    variables, then the TOML file, then defaults.
    """
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")

    class _FileConfig(ScenarioConfig):
        model_config = SettingsConfigDict(toml_file=path)

    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return _FileConfig(**overrides)
    except ValidationError as err:
        raise ConfigError(f"invalid configuration {path or ''}:\n{err}") from err
    except ValueError as err:
        # tomllib.TOMLDecodeError is a ValueError
        raise ConfigError(f"could not parse {path}: {err}") from err
