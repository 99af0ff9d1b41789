from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp
from scipy.stats import rankdata

from eigenpool.copula.schemas import LatentState, OrdinalTable
from eigenpool.core.exceptions import InvalidInputError, InvariantViolationError
from eigenpool.core.logging import get_logger
from eigenpool.hiermodel.schemas import (
    ChainRngs,
    ChainState,
    GroupData,
    ModelVariant,
    PosteriorSample,
    PriorConfig,
    SamplerOptions,
)
from eigenpool.hiermodel.services import (
    draw_seed,
    expand_common,
    gibbs_iteration,
    initial_state,
    pool_groups,
)

logger = get_logger("copula")


# --- Univariate pieces ---
def truncated_normal(
    mean: np.ndarray,
    sd: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Inverse-CDF draws from N(mean, sd²) restricted to (lower, upper).

    CDF values are handled in log space and intervals in the upper tail are
    reflected into the lower one, so bounds many standard deviations out
    still produce draws inside the interval.
    """
    mean, sd, lower, upper = np.broadcast_arrays(
        np.asarray(mean, dtype=float),
        np.asarray(sd, dtype=float),
        np.asarray(lower, dtype=float),
        np.asarray(upper, dtype=float),
    )
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    flip = a > 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    log_a, log_b = log_ndtr(a), log_ndtr(b)
    u = rng.random(a.shape)
    with np.errstate(divide="ignore"):
        log_cdf = log_b + np.log(u + (1.0 - u) * np.exp(log_a - log_b))
    x = ndtri_exp(np.minimum(log_cdf, 0.0))
    x = np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf))
    return mean + sd * np.where(flip, -x, x)


def extract_correlation(sigma: np.ndarray) -> np.ndarray:
    """C_ij = Σ_ij / √(Σ_ii Σ_jj)"""
    sigma = np.asarray(sigma, dtype=float)
    d = np.diag(sigma)
    if np.any(d <= 0):
        raise InvalidInputError("covariance diagonal must be positive")
    scale = np.sqrt(d)
    c = sigma / np.outer(scale, scale)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


# --- Rank constraints ---
def rank_bounds(
    y: np.ndarray, z: np.ndarray, i: int, missing: Optional[np.ndarray] = None
) -> Tuple[float, float]:
    """Bounds on z_i from the observed entries ranked strictly below and above y_i."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    observed = ~np.isnan(y) if missing is None else ~np.asarray(missing)
    if not observed[i]:
        return -np.inf, np.inf
    below = observed & (y < y[i])
    above = observed & (y > y[i])
    lower = float(z[below].max()) if below.any() else -np.inf
    upper = float(z[above].min()) if above.any() else np.inf
    if not lower < upper:
        raise InvariantViolationError(f"latent values are not concordant with the ranks around row {i}")
    return lower, upper


def _levels(y: np.ndarray, observed: np.ndarray) -> List[np.ndarray]:
    """Row indices of the observed entries, one array per distinct value, in increasing order."""
    rows = np.flatnonzero(observed)
    if rows.size == 0:
        return []
    _, inverse = np.unique(y[rows], return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    splits = np.flatnonzero(np.diff(inverse[order])) + 1
    return np.split(rows[order], splits)


def check_rank_concordance(y: np.ndarray, z: np.ndarray) -> None:
    """Raise unless y_i < y_i' implies z_i < z_i' within every column."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    for j in range(y.shape[1]):
        levels = _levels(y[:, j], ~np.isnan(y[:, j]))
        for lo, hi in zip(levels[:-1], levels[1:]):
            if not z[lo, j].max() < z[hi, j].min():
                raise InvariantViolationError(f"latent column {j} violates the observed ranks")


def normal_scores(table: OrdinalTable) -> LatentState:
    """Φ⁻¹(r / (n+1)) of the average ranks, 0 for missing entries."""
    z = []
    for y in table.groups:
        scores = np.zeros_like(y)
        for j in range(y.shape[1]):
            observed = ~np.isnan(y[:, j])
            count = int(observed.sum())
            if count:
                scores[observed, j] = ndtri(rankdata(y[observed, j]) / (count + 1))
        z.append(scores)
    return LatentState(z=z)


def latent_sum_of_squares(z: np.ndarray, label: str = "") -> GroupData:
    z = np.asarray(z, dtype=float)
    centered = z - z.mean(axis=0)
    s = centered.T @ centered
    return GroupData(n=z.shape[0], s=0.5 * (s + s.T), label=label)


# --- Latent updates ---
def _update_group_latent(
    y: np.ndarray, z: np.ndarray, sigma: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    z = np.array(z, dtype=float)
    precision = np.linalg.inv(sigma)
    p = y.shape[1]
    for j in range(p):
        cond_sd = 1.0 / np.sqrt(precision[j, j])
        others = np.delete(np.arange(p), j)
        cond_mean = -(z[:, others] @ precision[others, j]) / precision[j, j]
        observed = ~np.isnan(y[:, j])
        missing_rows = np.flatnonzero(~observed)
        if missing_rows.size:
            z[missing_rows, j] = cond_mean[missing_rows] + cond_sd * rng.standard_normal(missing_rows.size)
        levels = _levels(y[:, j], observed)
        # rows sharing a value are conditionally independent; sweep levels upward
        for idx, rows in enumerate(levels):
            lower = z[levels[idx - 1], j].max() if idx > 0 else -np.inf
            upper = z[levels[idx + 1], j].min() if idx + 1 < len(levels) else np.inf
            z[rows, j] = truncated_normal(cond_mean[rows], cond_sd, lower, upper, rng)
    return z


def update_latent(
    state: LatentState,
    sigmas: Sequence[np.ndarray],
    data: OrdinalTable,
    rng: Union[ChainRngs, np.random.Generator],
) -> LatentState:
    """Coordinate-wise Gibbs update of every latent entry given the group covariances."""
    rngs = ChainRngs.coerce(rng, data.k)
    if len(sigmas) != data.k:
        raise InvalidInputError(f"expected {data.k} covariance matrices, got {len(sigmas)}")
    z = [
        _update_group_latent(y, z_k, np.asarray(sigma), rngs.groups[k])
        for k, (y, z_k, sigma) in enumerate(zip(data.groups, state.z, sigmas))
    ]
    return LatentState(z=z)


# --- Chain ---
def _group_covariances(state: ChainState, k: int) -> List[np.ndarray]:
    covs = [(u * lam) @ u.T for u, lam in zip(state.u, state.lam)]
    return covs * k if len(covs) == 1 and k > 1 else covs


def run_copula_chain(
    data: OrdinalTable,
    priors: PriorConfig = PriorConfig(),
    variant: ModelVariant = ModelVariant.hierarchical,
    iterations: int = 10000,
    thin: int = 10,
    burn_in: int = 0,
    seed: Union[int, np.random.SeedSequence, None] = None,
    options: SamplerOptions = SamplerOptions(),
) -> Iterator[PosteriorSample]:
    """Alternate latent updates with the hierarchical sampler on the latent sums of squares."""
    if thin < 1:
        raise InvalidInputError("thin must be at least 1")
    if seed is None:
        seed = draw_seed()
    common = variant == ModelVariant.common_covariance
    latent = normal_scores(data)
    groups = [latent_sum_of_squares(z, data.group_label(k)) for k, z in enumerate(latent.z)]
    fit_groups = [pool_groups(groups)] if common else groups
    state = initial_state(fit_groups, priors, variant)
    # latent updates draw per table group, sampler updates per fitted group
    rngs = ChainRngs.from_seed(seed, data.k, options.rng_mode)
    fit_rngs = ChainRngs(rngs.main, rngs.groups[:1], rngs.mode) if common else rngs
    logger.info(
        f"Starting copula {variant.value} chain (seed {seed}): K={data.k}, p={data.dim}, "
        f"iterations={iterations}, burn_in={burn_in}, thin={thin}"
    )
    progress_step = max(iterations // 10, 1)
    for t in range(1, iterations + 1):
        latent = update_latent(latent, _group_covariances(state, data.k), data, rngs)
        for y, z in zip(data.groups, latent.z):
            check_rank_concordance(y, z)
        groups = [latent_sum_of_squares(z, data.group_label(k)) for k, z in enumerate(latent.z)]
        fit_groups = [pool_groups(groups)] if common else groups
        state, _ = gibbs_iteration(state, fit_groups, priors, variant, options, fit_rngs)
        if t > burn_in and (t - burn_in) % thin == 0:
            correlations = [extract_correlation(c) for c in _group_covariances(state, data.k)]
            sample = PosteriorSample.from_state(t, state, correlations, pooled=variant.pools_eigenvectors)
            yield expand_common(sample, data.k) if common else sample
        if t % progress_step == 0:
            logger.info(f"Iteration {t}/{iterations}")
    logger.info("Copula chain finished")


def posterior_mean_correlations(samples: Sequence[PosteriorSample]) -> List[np.ndarray]:
    if not samples or samples[0].correlations is None:
        raise InvalidInputError("samples carry no correlation matrices")
    return list(np.mean([np.stack(s.correlations) for s in samples], axis=0))
