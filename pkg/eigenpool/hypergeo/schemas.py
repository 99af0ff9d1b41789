import numpy as np
from pydantic import Field, model_validator

from eigenpool.core.schemas import ArrayModel
from eigenpool.matcore.schemas import SpectrumDiag


class ConcentrationParams(ArrayModel):
    """(w, α, β) with A = √w·diag(α) and B = √w·diag(β).

    α and β run from 1 down to 0. Ties are allowed here so that restricted
    variants can pin interior entries; the normalizing-constant correction
    refuses them.
    """

    w: float = Field(gt=0)
    alpha: SpectrumDiag
    beta: SpectrumDiag

    @model_validator(mode="after")
    def check_endpoints(self):
        if self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta must have the same length")
        p = self.alpha.shape[0]
        if p >= 2:
            for name, vec in (("alpha", self.alpha), ("beta", self.beta)):
                if vec[0] != 1.0 or vec[-1] != 0.0:
                    raise ValueError(f"{name} must start at 1 and end at 0")
        return self

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    @property
    def a(self) -> np.ndarray:
        return np.sqrt(self.w) * self.alpha

    @property
    def b(self) -> np.ndarray:
        return np.sqrt(self.w) * self.beta

    @classmethod
    def equally_spaced(cls, p: int, w: float) -> "ConcentrationParams":
        grid = np.linspace(1.0, 0.0, p) if p >= 2 else np.zeros(1)
        return cls(w=w, alpha=grid, beta=grid)

    @classmethod
    def one_shared(cls, p: int, w: float = 1000.0) -> "ConcentrationParams":
        """α = β = (1, 0, ..., 0): only the first eigenvector is pooled."""
        e1 = np.zeros(p)
        e1[0] = 1.0
        return cls(w=w, alpha=e1, beta=e1)
