from typing import Sequence

import numpy as np
from pydantic import model_validator

from eigenpool.core.schemas import ArrayModel
from eigenpool.matcore.schemas import OrthonormalMatrix, RealMatrix, SpectrumDiag, SymMatrix
from eigenpool.matcore.services import null_space


class BinghamParams(ArrayModel):
    """Parameters (A, B, V) of p_B(U | A, B, V) ∝ etr(B Uᵀ V A Vᵀ U)."""

    a: SpectrumDiag
    b: SpectrumDiag
    v: OrthonormalMatrix

    @model_validator(mode="after")
    def check_shapes(self):
        p = self.v.shape[0]
        if self.v.shape != (p, p) or self.a.shape != (p,) or self.b.shape != (p,):
            raise ValueError("a, b and v must share the dimension p")
        if np.any(self.a < 0) or np.any(self.b < 0):
            raise ValueError("a and b must be non-negative")
        if self.a[-1] != 0 or self.b[-1] != 0:
            raise ValueError("the last entries of a and b must be zero")
        return self

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @property
    def va_vt(self) -> np.ndarray:
        return (self.v * self.a) @ self.v.T


class PairConditionalParams(ArrayModel):
    """2x2 forms G, H of the joint conditional of two columns, in the basis N."""

    g: SymMatrix
    h: SymMatrix
    basis: RealMatrix

    @model_validator(mode="after")
    def check_shapes(self):
        if self.g.shape != (2, 2) or self.h.shape != (2, 2):
            raise ValueError("g and h must be 2x2")
        if self.basis.ndim != 2 or self.basis.shape[1] != 2:
            raise ValueError("basis must be p x 2")
        return self

    @classmethod
    def from_quadratic_forms(
        cls, u: np.ndarray, j1: int, j2: int, q1: np.ndarray, q2: np.ndarray
    ) -> "PairConditionalParams":
        """Project the column forms Q_j1, Q_j2 onto the plane left free by the other columns."""
        n = null_space(u, (j1, j2))
        g = n.T @ q1 @ n
        h = n.T @ q2 @ n
        # Inputs are internal and already checked; skip per-call validation
        return cls.model_construct(g=0.5 * (g + g.T), h=0.5 * (h + h.T), basis=n)

    @classmethod
    def zero(cls, basis: Sequence[Sequence[float]]) -> "PairConditionalParams":
        return cls(g=np.zeros((2, 2)), h=np.zeros((2, 2)), basis=basis)
