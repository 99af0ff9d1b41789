from functools import lru_cache
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from eigenpool.bingham.schemas import BinghamParams, PairConditionalParams
from eigenpool.config import settings
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.matcore.services import (
    canonical_signs,
    haar_orthonormal,
    hadamard_square,
    reorthonormalize,
    sign_variants,
)

logger = get_logger("bingham")

PairSchedule = Literal["sweep", "single", "all"]


# --- Density ---
def log_density_terms(u: np.ndarray, a: np.ndarray, b: np.ndarray, v: np.ndarray) -> float:
    """aᵀ (X∘X) b with X = VᵀU, for arbitrary coefficient vectors a and b."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise InvalidInputError(f"u has shape {u.shape} but v has shape {v.shape}")
    x = v.T @ u
    return float(np.asarray(a, dtype=float) @ hadamard_square(x) @ np.asarray(b, dtype=float))


def log_density_unnorm(u: np.ndarray, params: BinghamParams) -> float:
    return log_density_terms(u, params.a, params.b, params.v)


# --- Angle sampling ---
@lru_cache(maxsize=8)
def _phi_grid(size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    phi = np.linspace(0.0, 2.0 * np.pi, size + 1)
    c, s = np.cos(phi), np.sin(phi)
    return phi, c * c, s * s, c * s


def phi_log_density(params: PairConditionalParams, phi: np.ndarray) -> np.ndarray:
    """Unnormalized log density of the rotation angle (up to a constant)."""
    g, h = params.g, params.h
    c, s = np.cos(phi), np.sin(phi)
    return (
        (g[0, 0] + h[1, 1]) * c * c
        + (h[0, 0] + g[1, 1]) * s * s
        + (g[0, 1] + g[1, 0] - h[0, 1] - h[1, 0]) * c * s
    )


def sample_phi(
    params: PairConditionalParams, rng: np.random.Generator, grid_size: Optional[int] = None
) -> Tuple[float, int]:
    """Draw (φ, s): φ by inverse CDF on a fixed grid, s uniform on {-1, +1}."""
    size = grid_size or settings.PHI_GRID_SIZE
    phi, cos2, sin2, cs = _phi_grid(size)
    g, h = params.g, params.h
    log_p = (
        (g[0, 0] + h[1, 1]) * cos2
        + (h[0, 0] + g[1, 1]) * sin2
        + (g[0, 1] + g[1, 0] - h[0, 1] - h[1, 0]) * cs
    )
    dens = np.exp(log_p - log_p.max())
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))))
    cdf /= cdf[-1]
    angle = float(np.interp(rng.random(), cdf, phi))
    sign = 1 if rng.random() < 0.5 else -1
    return angle, sign


def rotation_from_phi(phi: float, s: int) -> np.ndarray:
    """Z(φ, s) = [[cos φ, s sin φ], [sin φ, -s cos φ]]"""
    c, sn = np.cos(phi), np.sin(phi)
    return np.array([[c, s * sn], [sn, -s * c]])


# --- Paired-column updates ---
def update_column_pair(
    u: np.ndarray,
    j1: int,
    j2: int,
    params: PairConditionalParams,
    rng: np.random.Generator,
    grid_size: Optional[int] = None,
) -> np.ndarray:
    """Replace columns j1, j2 of u by N·Z(φ, s); all other columns are untouched."""
    if j1 == j2:
        raise InvalidInputError("column pair must have two distinct indices")
    phi, s = sample_phi(params, rng, grid_size)
    pair = params.basis @ rotation_from_phi(phi, s)
    out = np.array(u, dtype=float)
    out[:, j1] = pair[:, 0]
    out[:, j2] = pair[:, 1]
    return out


def random_pairs(p: int, rng: np.random.Generator, schedule: PairSchedule = "sweep") -> List[Tuple[int, int]]:
    """Column pairs to visit: a random perfect matching, one random pair, or every pair in random order."""
    if p < 2:
        return []
    if schedule == "single":
        j1, j2 = rng.choice(p, size=2, replace=False)
        return [(int(j1), int(j2))]
    if schedule == "all":
        pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
        return [pairs[i] for i in rng.permutation(len(pairs))]
    order = rng.permutation(p)
    # odd p leaves the last column of the permutation idle
    return [(int(order[i]), int(order[i + 1])) for i in range(0, p - 1, 2)]


def gibbs_sweep_quadratic(
    u: np.ndarray,
    forms: Sequence[np.ndarray],
    rng: np.random.Generator,
    sweeps: int = 1,
    schedule: PairSchedule = "sweep",
    grid_size: Optional[int] = None,
) -> np.ndarray:
    """Paired-column Gibbs updates for the density ∝ exp(Σ_j u_jᵀ Q_j u_j).

    `forms[j]` is the symmetric p x p matrix Q_j attached to column j. Every
    model in the package (plain Bingham, group eigenvectors with their
    Wishart term, the shared frame V) reduces to this target.
    """
    u = np.array(u, dtype=float)
    p = u.shape[1]
    if len(forms) != p:
        raise InvalidInputError(f"expected {p} quadratic forms, got {len(forms)}")
    for _ in range(sweeps):
        for j1, j2 in random_pairs(p, rng, schedule):
            params = PairConditionalParams.from_quadratic_forms(u, j1, j2, forms[j1], forms[j2])
            u = update_column_pair(u, j1, j2, params, rng, grid_size)
        u = reorthonormalize(u)
    return u


def bingham_forms(params: BinghamParams) -> np.ndarray:
    """Q_j = b_j·VAVᵀ stacked along the first axis."""
    return params.b[:, None, None] * params.va_vt[None, :, :]


def gibbs_sweep_bingham(
    u: np.ndarray,
    params: BinghamParams,
    rng: np.random.Generator,
    sweeps: int = 1,
    grid_size: Optional[int] = None,
) -> np.ndarray:
    if sweeps < 1:
        raise InvalidInputError("sweeps must be at least 1")
    return gibbs_sweep_quadratic(u, bingham_forms(params), rng, sweeps=sweeps, grid_size=grid_size)


def sample_bingham(
    params: BinghamParams,
    rng: np.random.Generator,
    sweeps: Optional[int] = None,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One approximate draw from p_B: a Haar start followed by `sweeps` Gibbs sweeps."""
    sweeps = sweeps or settings.SYNTHETIC_SWEEPS
    u = haar_orthonormal(params.dim, rng) if start is None else np.asarray(start, dtype=float)
    return gibbs_sweep_bingham(u, params, rng, sweeps=sweeps)


def expected_squared_entries(
    params: BinghamParams,
    rng: np.random.Generator,
    draws: int,
    thin: int = 1,
    burn_in: int = 0,
    batches: int = 20,
) -> Tuple[np.ndarray, np.ndarray]:
    """Monte Carlo E[X∘X], X = VᵀU, with batch-means standard errors."""
    if draws < batches:
        raise InvalidInputError(f"need at least {batches} draws for batch-means errors")
    u = haar_orthonormal(params.dim, rng)
    if burn_in:
        u = gibbs_sweep_bingham(u, params, rng, sweeps=burn_in)
    squares = np.empty((draws, params.dim, params.dim))
    for i in range(draws):
        u = gibbs_sweep_bingham(u, params, rng, sweeps=thin)
        squares[i] = hadamard_square(params.v.T @ u)
    usable = draws - draws % batches
    batch_means = squares[:usable].reshape(batches, -1, params.dim, params.dim).mean(axis=1)
    se = batch_means.std(axis=0, ddof=1) / np.sqrt(batches)
    return squares.mean(axis=0), se


# --- Modes ---
def mode_set(params: BinghamParams) -> np.ndarray:
    """Canonical mode V.

    Every V·S with S a diagonal sign matrix is also a mode; with distinct
    entries in both a and b these 2^p frames are the only modes.
    """
    return canonical_signs(params.v)


def iter_modes(params: BinghamParams) -> Iterator[np.ndarray]:
    return sign_variants(mode_set(params))
