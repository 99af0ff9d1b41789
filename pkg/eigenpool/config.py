from pathlib import Path
from typing import Annotated, List, Literal, Optional

from dotenv import dotenv_values
from pydantic import field_validator, model_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from eigenpool.hiermodel.schemas import ModelVariant, PriorConfig, SamplerOptions


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Numerical tolerances
    ORTHONORMAL_TOL: float = 1e-8  # re-orthonormalize past this drift

    # Sampler grids
    PHI_GRID_SIZE: int = 4096
    SHAPE_GRID_SIZE: int = 200

    # Normalizing-constant correction
    CORRECTION_CEILING: float = 1e6
    CORRECTION_GAP_FLOOR: float = 1e-3

    # Bingham sweeps used outside the main chain
    PREDICTIVE_SWEEPS: int = 25
    SYNTHETIC_SWEEPS: int = 200

    model_config = SettingsConfigDict(
        env_prefix="EIGENPOOL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",  # Ignore unrelated variables in a shared .env
    )

    @field_validator("PHI_GRID_SIZE", "SHAPE_GRID_SIZE", "PREDICTIVE_SWEEPS", "SYNTHETIC_SWEEPS")
    @classmethod
    def validate_positive_counts(cls, v):
        """Grids and sweep counts must be usable"""
        if v < 1:
            raise ValueError("grid sizes and sweep counts must be positive")
        return v

    @field_validator("ORTHONORMAL_TOL", "CORRECTION_CEILING", "CORRECTION_GAP_FLOOR")
    @classmethod
    def validate_positive_tolerances(cls, v):
        if v <= 0:
            raise ValueError("tolerances must be strictly positive")
        return v


settings = Settings()


MH_CORRECTION_ORDERS = {"off": 0, "1": 1, "2": 2}


class RunConfig(BaseSettings):
    """Options for one `fit`/`fit-copula`/`simulate` invocation.

    Values come from a plain key=value file, then CLI flags; environment
    variables with the EIGENPOOL_RUN_ prefix fill in anything left unset.
    """

    iterations: int = 10000
    burn_in: int = 0
    thin: int = 10
    seed: Optional[int] = None
    variant: ModelVariant = ModelVariant.hierarchical

    # w exponential with mean 1000, 1/lambda exponential with mean 1
    eta0: float = 2.0
    tau0_sq: float = 0.002
    nu0: float = 2.0
    sigma0_sq: float = 1.0

    phi_grid_size: int = settings.PHI_GRID_SIZE
    shape_grid_size: int = settings.SHAPE_GRID_SIZE
    mh_correction: Literal["off", "1", "2"] = "1"
    pair_schedule: Literal["single", "sweep", "all"] = "single"
    rng_mode: Literal["sequential", "substream"] = "sequential"
    group_workers: int = 1
    chains: int = 1
    predictive_sweeps: int = settings.PREDICTIVE_SWEEPS
    monitored: Annotated[List[str], NoDecode] = ["w", "mean_log_ab", "lambda1"]

    model_config = SettingsConfigDict(env_prefix="EIGENPOOL_RUN_", extra="ignore")

    @field_validator("variant", mode="before")
    @classmethod
    def accept_variant_aliases(cls, v):
        if isinstance(v, str):
            return ModelVariant.from_alias(v)
        return v

    @field_validator("mh_correction", mode="before")
    @classmethod
    def normalize_mh_correction(cls, v):
        v = str(v).strip().lower()
        return "off" if v in ("0", "false", "no") else v

    @field_validator("monitored", mode="before")
    @classmethod
    def split_monitored(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("seed")
    @classmethod
    def validate_seed_range(cls, v):
        if v is not None and not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    @model_validator(mode="after")
    def validate_counts(self):
        """Reject chain shapes that cannot produce samples"""
        for name in ("iterations", "burn_in", "group_workers", "chains", "phi_grid_size", "shape_grid_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        return self

    @property
    def priors(self) -> PriorConfig:
        return PriorConfig(eta0=self.eta0, tau0_sq=self.tau0_sq, nu0=self.nu0, sigma0_sq=self.sigma0_sq)

    @property
    def mh_order(self) -> int:
        return MH_CORRECTION_ORDERS[self.mh_correction]

    def sampler_options(self) -> SamplerOptions:
        return SamplerOptions(
            phi_grid_size=self.phi_grid_size,
            shape_grid_size=self.shape_grid_size,
            mh_order=self.mh_order,
            pair_schedule=self.pair_schedule,
            rng_mode=self.rng_mode,
            group_workers=self.group_workers,
            predictive_sweeps=self.predictive_sweeps,
        )

    @classmethod
    def load(cls, path: Optional[str] = None, **overrides) -> "RunConfig":
        """Read a key=value file and apply non-None overrides on top of it."""
        values = {}
        if path:
            config_path = Path(path)
            if not config_path.exists():
                raise FileNotFoundError(f"config file not found: {path}")
            values = {
                key.strip().lower(): value
                for key, value in dotenv_values(config_path).items()
                if value is not None
            }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)
