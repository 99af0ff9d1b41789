import itertools
from typing import Iterator, Sequence, Tuple

import numpy as np
import scipy.linalg

from eigenpool.config import settings
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.matcore.schemas import ORTHONORMAL_CHECK_TOL

logger = get_logger("matcore")


def _require_finite_square(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{what} has non-finite entries")
    return m


def orthonormal_drift(x: np.ndarray) -> float:
    """max |XᵀX - I| over all entries"""
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(x.T @ x - np.eye(x.shape[1])), initial=0.0))


def is_orthonormal(x: np.ndarray, tol: float = ORTHONORMAL_CHECK_TOL) -> bool:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] > x.shape[0] or not np.all(np.isfinite(x)):
        return False
    return orthonormal_drift(x) <= tol


def canonical_signs(x: np.ndarray) -> np.ndarray:
    """Flip columns so each one's first largest-magnitude entry is non-negative."""
    x = np.array(x, dtype=float)
    if x.size == 0:
        return x
    lead = np.argmax(np.abs(x), axis=0)
    signs = np.where(x[lead, np.arange(x.shape[1])] < 0, -1.0, 1.0)
    return x * signs


def sign_variants(x: np.ndarray) -> Iterator[np.ndarray]:
    """All 2^r column-sign flips of x, starting with x itself."""
    x = np.asarray(x, dtype=float)
    for flips in itertools.product((1.0, -1.0), repeat=x.shape[1]):
        yield x * np.array(flips)


def sym_eig(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (vectors, values) with values non-increasing and the columns of
    `vectors` following the canonical sign convention. Tied eigenvalues keep
    the order LAPACK returns for them.
    """
    m = _require_finite_square(m)
    sym = 0.5 * (m + m.T)
    values, vectors = scipy.linalg.eigh(sym)
    # eigh is ascending; reverse both
    values = values[::-1].copy()
    vectors = canonical_signs(vectors[:, ::-1])
    return vectors, values


def null_space(u: np.ndarray, drop: Sequence[int]) -> np.ndarray:
    """Orthonormal p x 2 basis for the complement of the columns of u not in `drop`."""
    u = _require_finite_square(u, "u")
    j1, j2 = drop
    p = u.shape[0]
    if j1 == j2:
        raise InvalidInputError("column pair must have two distinct indices")
    if not (0 <= j1 < p and 0 <= j2 < p):
        raise InvalidInputError(f"column indices {j1}, {j2} out of range for p={p}")
    if not is_orthonormal(u):
        raise InvalidInputError("null_space needs an orthonormal matrix")
    keep = [j for j in range(p) if j not in (j1, j2)]
    if not keep:
        # p == 2: nothing to be orthogonal to
        return np.eye(2)
    basis = scipy.linalg.null_space(u[:, keep].T)
    if basis.shape[1] != 2:
        raise InvalidInputError(f"expected a 2-dimensional null space, got {basis.shape[1]}")
    return basis


def hadamard_square(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x * x


def _qr_sign_fixed(z: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def haar_orthonormal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed p x p orthogonal matrix."""
    if p < 1:
        raise InvalidInputError("dimension must be at least 1")
    return _qr_sign_fixed(rng.standard_normal((p, p)))


def reorthonormalize(x: np.ndarray, tol: float = None) -> np.ndarray:
    """Return x unchanged unless its drift exceeds tol, else the nearest QR frame."""
    tol = settings.ORTHONORMAL_TOL if tol is None else tol
    x = np.asarray(x, dtype=float)
    drift = orthonormal_drift(x)
    if drift <= tol:
        return x
    logger.debug(f"Re-orthonormalizing frame with drift {drift:.3e}")
    return _qr_sign_fixed(x)
