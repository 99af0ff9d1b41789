from typing import Annotated, List

import numpy as np
from pydantic import AfterValidator, BeforeValidator, model_validator

from eigenpool.core.schemas import ArrayModel


def _as_float_array(value):
    return np.array(value, dtype=float)


def _no_infinities(y: np.ndarray) -> np.ndarray:
    if y.ndim != 2:
        raise ValueError(f"expected an n x p matrix, got shape {y.shape}")
    if np.any(np.isinf(y)):
        raise ValueError("observations must be finite or missing")
    return y


# NaN marks a missing entry
ObservationMatrix = Annotated[np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_no_infinities)]


class OrdinalTable(ArrayModel):
    """Grouped observation matrices of ordered-categorical or numeric values."""

    groups: List[ObservationMatrix]
    labels: List[str] = []
    columns: List[str] = []

    @model_validator(mode="after")
    def check_groups(self):
        if not self.groups:
            raise ValueError("at least one group is required")
        p = self.groups[0].shape[1]
        for y in self.groups:
            if y.shape[0] < 1:
                raise ValueError("every group needs at least one row")
            if y.shape[1] != p:
                raise ValueError("all groups must have the same number of columns")
        if self.labels and len(self.labels) != len(self.groups):
            raise ValueError("one label per group is required")
        if self.columns and len(self.columns) != p:
            raise ValueError("one column name per variable is required")
        return self

    @property
    def dim(self) -> int:
        return self.groups[0].shape[1]

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> List[int]:
        return [y.shape[0] for y in self.groups]

    def group_label(self, k: int) -> str:
        return self.labels[k] if self.labels else f"g{k + 1}"


class LatentState(ArrayModel):
    """Latent Gaussian matrices z_k, one n_k x p block per group."""

    z: List[np.ndarray]
