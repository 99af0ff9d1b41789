from enum import Enum
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from eigenpool.core.schemas import ArrayModel
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.matcore.schemas import CorrelationMatrix, OrthonormalMatrix, SpectrumDiag, SymMatrix

PSD_TOL = 1e-8


class ModelVariant(str, Enum):
    hierarchical = "hierarchical"
    no_pooling = "no_pooling"
    one_shared_eigenvector = "one_shared_eigenvector"
    common_covariance = "common_covariance"

    @classmethod
    def from_alias(cls, value: str) -> "ModelVariant":
        aliases = {
            "hier": cls.hierarchical,
            "nopool": cls.no_pooling,
            "shared1": cls.one_shared_eigenvector,
            "common": cls.common_covariance,
        }
        key = value.strip().lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def pools_eigenvectors(self) -> bool:
        """Whether the group updates see the shared Bingham prior."""
        return self in (ModelVariant.hierarchical, ModelVariant.one_shared_eigenvector)

    @property
    def alias(self) -> str:
        return {
            ModelVariant.hierarchical: "hier",
            ModelVariant.no_pooling: "nopool",
            ModelVariant.one_shared_eigenvector: "shared1",
            ModelVariant.common_covariance: "common",
        }[self]


class GroupData(ArrayModel):
    """Sample size and centered sum-of-squares matrix of one group."""

    n: int = Field(ge=1)
    s: SymMatrix
    label: str = ""

    @model_validator(mode="after")
    def check_psd(self):
        if self.s.size == 0:
            raise ValueError("sum-of-squares matrix must not be empty")
        scale = max(1.0, float(np.max(np.abs(self.s))))
        if np.linalg.eigvalsh(self.s)[0] < -PSD_TOL * scale:
            raise ValueError("sum-of-squares matrix must be positive semidefinite")
        if self.n == 1 and np.any(self.s != 0):
            raise ValueError("a single observation has a zero sum-of-squares matrix")
        return self

    @property
    def dim(self) -> int:
        return self.s.shape[0]

    @property
    def df(self) -> int:
        return self.n - 1

    @classmethod
    def from_observations(cls, y: np.ndarray, label: str = "") -> "GroupData":
        """S = Yᵀ(I - 11ᵀ/n)Y"""
        y = np.asarray(y, dtype=float)
        centered = y - y.mean(axis=0)
        return cls(n=y.shape[0], s=centered.T @ centered, label=label)


class PriorConfig(BaseModel):
    """w ~ gamma(η₀/2, rate τ₀²/2); 1/λ ~ gamma(ν₀/2, rate ν₀σ₀²/2)."""

    eta0: float = Field(default=2.0, gt=0)
    tau0_sq: float = Field(default=0.002, gt=0)
    nu0: float = Field(default=2.0, gt=0)
    sigma0_sq: float = Field(default=1.0, gt=0)

    @property
    def w_prior_mean(self) -> float:
        return self.eta0 / self.tau0_sq


class SamplerOptions(BaseModel):
    phi_grid_size: int = Field(default=4096, ge=16)
    shape_grid_size: int = Field(default=200, ge=2)
    mh_order: Literal[0, 1, 2] = 1
    pair_schedule: Literal["single", "sweep", "all"] = "single"
    rng_mode: Literal["sequential", "substream"] = "sequential"
    group_workers: int = Field(default=1, ge=0)
    predictive_sweeps: int = Field(default=25, ge=1)


class ChainState(ArrayModel):
    """Every unknown of the sampler: {U_k, Λ_k}, V and (w, α, β)."""

    u: List[OrthonormalMatrix]
    lam: List[SpectrumDiag]
    v: OrthonormalMatrix
    conc: ConcentrationParams

    @model_validator(mode="after")
    def check_consistency(self):
        if len(self.u) != len(self.lam):
            raise ValueError("u and lam must have one entry per group")
        p = self.v.shape[0]
        for u_k, lam_k in zip(self.u, self.lam):
            if u_k.shape != (p, p) or lam_k.shape != (p,):
                raise ValueError("all groups must share the dimension of v")
            if np.any(lam_k <= 0) or np.any(np.diff(lam_k) >= 0):
                raise ValueError("eigenvalues must be positive and strictly decreasing")
        if self.conc.dim != p:
            raise ValueError("concentration vectors must have length p")
        return self

    @property
    def k(self) -> int:
        return len(self.u)

    @property
    def dim(self) -> int:
        return self.v.shape[0]


class PosteriorSample(ArrayModel):
    """Saved state at one iteration; `correlations` is set by the copula chain.

    `conc` is None for variants without a Bingham prior on U_k (no pooling,
    common covariance): A = B = 0 there, and V is only the starting frame.
    """

    iteration: int = Field(ge=0)
    u: List[OrthonormalMatrix]
    lam: List[SpectrumDiag]
    v: OrthonormalMatrix
    conc: Optional[ConcentrationParams]
    correlations: Optional[List[CorrelationMatrix]] = None

    @property
    def k(self) -> int:
        return len(self.u)

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @classmethod
    def from_state(
        cls,
        iteration: int,
        state: ChainState,
        correlations: Optional[Sequence[np.ndarray]] = None,
        pooled: bool = True,
    ) -> "PosteriorSample":
        return cls(
            iteration=iteration,
            u=[x.copy() for x in state.u],
            lam=[x.copy() for x in state.lam],
            v=state.v.copy(),
            conc=state.conc if pooled else None,
            correlations=None if correlations is None else [np.array(c) for c in correlations],
        )


class ChainRngs:
    """Random streams of one chain.

    In sequential mode every group draws from the main generator, so the
    run is bit-reproducible in a single thread. In substream mode each group
    owns a generator spawned from the chain seed and the per-group updates
    may run concurrently.
    """

    def __init__(self, main: np.random.Generator, groups: Sequence[np.random.Generator], mode: str):
        self.main = main
        self.groups = list(groups)
        self.mode = mode

    @classmethod
    def from_seed(
        cls,
        seed: Union[int, np.random.SeedSequence, None],
        k: int,
        mode: Literal["sequential", "substream"] = "sequential",
    ) -> "ChainRngs":
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        if mode == "substream":
            children = seq.spawn(k + 1)
            return cls(
                np.random.default_rng(children[0]),
                [np.random.default_rng(c) for c in children[1:]],
                mode,
            )
        main = np.random.default_rng(seq)
        return cls(main, [main] * k, mode)

    @classmethod
    def coerce(cls, rng: Union["ChainRngs", np.random.Generator], k: int) -> "ChainRngs":
        if isinstance(rng, ChainRngs):
            if len(rng.groups) != k:
                raise ValueError(f"generator set holds {len(rng.groups)} group streams, need {k}")
            return rng
        return cls(rng, [rng] * k, "sequential")

    @property
    def concurrent(self) -> bool:
        return self.mode == "substream"
