from typing import Optional, Sequence

import numpy as np
from scipy.special import logit

from eigenpool.core.exceptions import InvalidInputError
from eigenpool.diagnostics.schemas import CorrelationSpread, LogABTraces, PairSpread, PredictiveCheck
from eigenpool.hiermodel.schemas import GroupData, PosteriorSample
from eigenpool.matcore.services import sym_eig


MIN_ESS_LENGTH = 10


# --- Chain traces ---
def trace_log_ab(samples: Sequence[PosteriorSample]) -> LogABTraces:
    """Mean and population SD of log(a_i b_j), i, j < p, per saved sample."""
    if not samples:
        raise InvalidInputError("no samples to trace")
    means, sds = [], []
    for sample in samples:
        if sample.conc is None:
            raise InvalidInputError("samples carry no concentration parameters")
        p = sample.dim
        block = np.outer(sample.conc.a, sample.conc.b)[: p - 1, : p - 1]
        if block.size == 0 or np.any(block <= 0):
            raise InvalidInputError(
                f"A∘B has non-positive entries in its leading block at iteration {sample.iteration}"
            )
        logs = np.log(block)
        means.append(logs.mean())
        sds.append(logs.std())
    return LogABTraces(mean=means, sd=sds)


def effective_sample_size(trace: Sequence[float]) -> float:
    """Initial monotone positive sequence estimate of the ESS.

    Autocovariances come from an FFT of the zero-padded centered trace. Sums
    of adjacent autocorrelation pairs are accumulated while positive and
    forced non-increasing; the result is clamped to (0, n].
    """
    x = np.asarray(trace, dtype=float)
    n = x.shape[0]
    if n < MIN_ESS_LENGTH:
        raise InvalidInputError(f"need at least {MIN_ESS_LENGTH} values, got {n}")
    x = x - x.mean()
    spectrum = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
    if acov[0] <= 0:
        raise InvalidInputError("ESS is undefined for a zero-variance trace")
    rho = acov / acov[0]
    total = 0.0
    previous = np.inf
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        previous = min(previous, pair)
        total += previous
    tau = 2.0 * total - 1.0
    if tau <= 0:
        return float(n)
    return float(min(n, n / tau))


def monte_carlo_se(trace: Sequence[float]) -> float:
    x = np.asarray(trace, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))


# --- Eigenvector agreement ---
def _check_frames(v: np.ndarray, u: np.ndarray) -> None:
    if np.shape(v) != np.shape(u):
        raise InvalidInputError(f"frames of shape {np.shape(v)} and {np.shape(u)} cannot be compared")


def similarity_stat(v: np.ndarray, u_list: Sequence[np.ndarray]) -> np.ndarray:
    """t = (1/K) Σ_k diag(VᵀU_k)∘diag(VᵀU_k)"""
    if not u_list:
        raise InvalidInputError("at least one group frame is required")
    v = np.asarray(v, dtype=float)
    total = np.zeros(v.shape[1])
    for u in u_list:
        _check_frames(v, u)
        total += np.einsum("ij,ij->j", v, u) ** 2
    return total / len(u_list)


def estimator_similarity(u_hat: np.ndarray, u_check: np.ndarray) -> float:
    """Average of diag(Ǔᵀ Û)², 1 exactly when the frames agree up to column signs."""
    _check_frames(u_hat, u_check)
    return float(np.mean(np.einsum("ij,ij->j", np.asarray(u_check), np.asarray(u_hat)) ** 2))


# --- Predictive check ---
def predictive_minmax(
    stats: Sequence[np.ndarray],
    observed: Optional[np.ndarray] = None,
    level: float = 0.95,
) -> PredictiveCheck:
    """Min and max of t for every predictive draw, with central intervals."""
    draws = np.atleast_2d(np.asarray(stats, dtype=float))
    if draws.size == 0 or len(stats) == 0:
        raise InvalidInputError("the predictive stream is empty")
    lows, highs = draws.min(axis=1), draws.max(axis=1)
    tail = 0.5 * (1.0 - level)
    min_interval = tuple(float(q) for q in np.quantile(lows, [tail, 1.0 - tail]))
    max_interval = tuple(float(q) for q in np.quantile(highs, [tail, 1.0 - tail]))
    check = dict(
        draws_min=lows,
        draws_max=highs,
        level=level,
        min_interval=min_interval,
        max_interval=max_interval,
    )
    if observed is not None:
        observed = np.asarray(observed, dtype=float)
        obs_min, obs_max = float(observed.min()), float(observed.max())
        check.update(
            observed_min=obs_min,
            observed_max=obs_max,
            covers_min=min_interval[0] <= obs_min <= min_interval[1],
            covers_max=max_interval[0] <= obs_max <= max_interval[1],
        )
    return PredictiveCheck(**check)


def logit_scale(values: Sequence[float], eps: float = 1e-12) -> np.ndarray:
    """Display transform for statistics in [0, 1]."""
    return logit(np.clip(np.asarray(values, dtype=float), eps, 1.0 - eps))


# --- Copula summaries ---
def correlation_spread(correlations: Sequence[np.ndarray]) -> CorrelationSpread:
    """Across-group min/median/max of every correlation pair and its sign consistency."""
    if not correlations:
        raise InvalidInputError("no correlation matrices to summarize")
    stack = np.stack([np.asarray(c, dtype=float) for c in correlations])
    p = stack.shape[1]
    pairs = []
    for i in range(p):
        for j in range(i + 1, p):
            values = stack[:, i, j]
            pairs.append(
                PairSpread(
                    i=i,
                    j=j,
                    minimum=float(values.min()),
                    median=float(np.median(values)),
                    maximum=float(values.max()),
                    sign_consistent=bool(np.all(values > 0) or np.all(values < 0)),
                )
            )
    return CorrelationSpread(pairs=pairs)


def empirical_similarity(data: Sequence[GroupData]) -> np.ndarray:
    """t evaluated at the empirical frames.

    Û_k are the eigenvectors of S_k and V̂ those of Σ_k S_k / (n_k - 1).
    """
    if not data:
        raise InvalidInputError("at least one group is required")
    pooled = sum(np.asarray(g.s) / max(g.df, 1) for g in data)
    v_hat, _ = sym_eig(pooled)
    return similarity_stat(v_hat, [sym_eig(g.s)[0] for g in data])
