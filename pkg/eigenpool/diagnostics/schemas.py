from typing import Annotated, List, Optional, Tuple

import numpy as np
from pydantic import AfterValidator, BaseModel, BeforeValidator, PlainSerializer

from eigenpool.core.schemas import ArrayModel


def _check_trace(values: np.ndarray) -> np.ndarray:
    if values.ndim != 1:
        raise ValueError("a trace is one-dimensional")
    if not np.all(np.isfinite(values)):
        raise ValueError("trace entries must be finite")
    return values


ScalarTrace = Annotated[
    np.ndarray,
    BeforeValidator(lambda v: np.array(v, dtype=float)),
    AfterValidator(_check_trace),
    PlainSerializer(lambda x: np.asarray(x).tolist(), return_type=list, when_used="json"),
]


class LogABTraces(ArrayModel):
    """Per saved iteration mean and SD of the logs of the nonzero block of A∘B."""

    mean: ScalarTrace
    sd: ScalarTrace


class PredictiveCheck(ArrayModel):
    """Posterior-predictive distribution of (min t, max t) and observed coverage."""

    draws_min: ScalarTrace
    draws_max: ScalarTrace
    level: float
    min_interval: Tuple[float, float]
    max_interval: Tuple[float, float]
    observed_min: Optional[float] = None
    observed_max: Optional[float] = None
    covers_min: Optional[bool] = None
    covers_max: Optional[bool] = None

    @property
    def covers(self) -> Optional[bool]:
        if self.covers_min is None or self.covers_max is None:
            return None
        return self.covers_min and self.covers_max


class PairSpread(BaseModel):
    i: int
    j: int
    minimum: float
    median: float
    maximum: float
    sign_consistent: bool


class CorrelationSpread(BaseModel):
    pairs: List[PairSpread]

    @property
    def sign_consistent_count(self) -> int:
        return sum(pair.sign_consistent for pair in self.pairs)
