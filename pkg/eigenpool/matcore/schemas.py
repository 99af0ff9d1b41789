from typing import Annotated

import numpy as np
from pydantic import AfterValidator, BeforeValidator, PlainSerializer

# Looser than the sampler's drift tolerance: frames typed in by hand or read
# back from 17-digit text must still validate.
ORTHONORMAL_CHECK_TOL = 1e-6
SYMMETRY_TOL = 1e-8


def _as_float_array(value):
    return np.array(value, dtype=float)


def _to_list(value: np.ndarray) -> list:
    return np.asarray(value).tolist()


def _check_finite(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError("entries must be finite")
    return x


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    _check_finite(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
        raise ValueError("matrix is not symmetric")
    # Store one triangle, mirrored
    upper = np.triu(m)
    m = upper + np.triu(m, 1).T
    m.setflags(write=False)
    return m


def _check_orthonormal(x: np.ndarray) -> np.ndarray:
    _check_finite(x)
    if x.ndim != 2 or x.shape[1] > x.shape[0]:
        raise ValueError(f"expected a p x r matrix with r <= p, got shape {x.shape}")
    gram = x.T @ x
    if np.max(np.abs(gram - np.eye(x.shape[1])), initial=0.0) > ORTHONORMAL_CHECK_TOL:
        raise ValueError("columns are not orthonormal")
    return x


def _check_non_increasing(v: np.ndarray) -> np.ndarray:
    _check_finite(v)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    if np.any(np.diff(v) > 0):
        raise ValueError("entries must be in non-increasing order")
    return v


def _check_correlation(c: np.ndarray) -> np.ndarray:
    c = _check_symmetric(c)
    if np.max(np.abs(np.diag(c) - 1.0), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("correlation matrix must have a unit diagonal")
    if c.size and np.linalg.eigvalsh(c)[0] < -SYMMETRY_TOL:
        raise ValueError("correlation matrix must be positive semidefinite")
    return c


_json = PlainSerializer(_to_list, return_type=list, when_used="json")

SymMatrix = Annotated[
    np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_check_symmetric), _json
]
OrthonormalMatrix = Annotated[
    np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_check_orthonormal), _json
]
SpectrumDiag = Annotated[
    np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_check_non_increasing), _json
]
RealMatrix = Annotated[
    np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_check_finite), _json
]
CorrelationMatrix = Annotated[
    np.ndarray, BeforeValidator(_as_float_array), AfterValidator(_check_correlation), _json
]
