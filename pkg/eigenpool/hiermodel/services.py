from concurrent.futures import ThreadPoolExecutor
from math import comb
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy.special import gammainc, gammaincc, gammainccinv, gammaincinv

from eigenpool.bingham.services import gibbs_sweep_quadratic
from eigenpool.core.exceptions import InvalidInputError, InvariantViolationError, NumericalError
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
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.hypergeo.services import mh_correct_w
from eigenpool.matcore.services import hadamard_square, orthonormal_drift, sym_eig

logger = get_logger("hiermodel")

MAX_TRUNCATION_ATTEMPTS = 100
FIXED_SHARED_W = 1000.0
DRIFT_LIMIT = 1e-8

RngLike = Union[ChainRngs, np.random.Generator]


class IterationStats(BaseModel):
    w_proposed: bool = False
    w_accepted: bool = False


# --- Validation ---
def validate_groups(data: Sequence[GroupData], min_n: int = 1) -> int:
    """Common dimension of the groups."""
    if not data:
        raise InvalidInputError("at least one group is required")
    p = data[0].dim
    for group in data:
        if group.dim != p:
            raise InvalidInputError(
                f"group '{group.label}' has dimension {group.dim}, expected {p}"
            )
        if group.n < min_n:
            raise InvalidInputError(
                f"group '{group.label}' has n={group.n}; this model needs n >= {min_n}"
            )
    return p


def pool_groups(data: Sequence[GroupData]) -> GroupData:
    """One group holding ΣS_k with Σ(n_k - 1) degrees of freedom."""
    total = sum(g.s for g in data)
    return GroupData(n=sum(g.df for g in data) + 1, s=total, label="pooled")


def check_state_invariants(state: ChainState) -> None:
    for k, (u_k, lam_k) in enumerate(zip(state.u, state.lam)):
        if orthonormal_drift(u_k) > DRIFT_LIMIT:
            raise InvariantViolationError(f"U_{k} drifted off the orthogonal group")
        if np.any(lam_k <= 0) or np.any(np.diff(lam_k) >= 0):
            raise InvariantViolationError(f"eigenvalues of group {k} lost their strict ordering")
    if orthonormal_drift(state.v) > DRIFT_LIMIT:
        raise InvariantViolationError("V drifted off the orthogonal group")
    if state.conc.w <= 0:
        raise InvariantViolationError("w must stay positive")
    if np.any(np.diff(state.conc.alpha) > 0) or np.any(np.diff(state.conc.beta) > 0):
        raise InvariantViolationError("alpha and beta lost their ordering")


# --- Initialization ---
def _strictly_decreasing(values: np.ndarray) -> np.ndarray:
    lam = np.array(values, dtype=float)
    floor = 1e-8 * max(1.0, float(lam[0]))
    lam = np.maximum(lam, floor)
    for j in range(1, lam.shape[0]):
        lam[j] = min(lam[j], lam[j - 1] * (1.0 - 1e-6))
    return lam


def initial_state(data: Sequence[GroupData], priors: PriorConfig, variant: ModelVariant) -> ChainState:
    """Warm start at the empirical eigendecompositions.

    Groups with a single observation start from the pooled covariance.
    """
    p = validate_groups(data)
    covs = [g.s / g.df if g.df > 0 else None for g in data]
    informative = [c for c in covs if c is not None]
    pooled = sum(informative) if informative else np.eye(p)
    v, _ = sym_eig(pooled)
    pooled_mean = pooled / max(len(informative), 1)
    u_list, lam_list = [], []
    for cov in covs:
        vectors, values = sym_eig(pooled_mean if cov is None else cov)
        u_list.append(vectors)
        lam_list.append(_strictly_decreasing(values))
    if variant == ModelVariant.one_shared_eigenvector:
        conc = ConcentrationParams.one_shared(p, FIXED_SHARED_W)
    else:
        conc = ConcentrationParams.equally_spaced(p, priors.w_prior_mean)
    return ChainState(u=u_list, lam=lam_list, v=v, conc=conc)


# --- Step 1: within-group updates ---
def _for_each_group(rngs: ChainRngs, options: SamplerOptions, k: int, work: Callable[[int], object]) -> list:
    if rngs.concurrent and options.group_workers > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=options.group_workers) as pool:
            return list(pool.map(work, range(k)))
    return [work(i) for i in range(k)]


def group_eigenvector_forms(
    u_k: np.ndarray, lam_k: np.ndarray, s_k: np.ndarray, state: ChainState, pooled: bool
) -> np.ndarray:
    """Q_j = b_j·VAVᵀ - ½λ_j⁻¹S_k for every column j."""
    forms = -0.5 * (1.0 / lam_k)[:, None, None] * np.asarray(s_k)[None, :, :]
    if pooled:
        conc = state.conc
        va_vt = (state.v * conc.a) @ state.v.T
        forms = forms + conc.b[:, None, None] * va_vt[None, :, :]
    return forms


def update_group_eigenvectors(
    state: ChainState,
    data: Sequence[GroupData],
    rng: RngLike,
    options: SamplerOptions = SamplerOptions(),
    pooled: bool = True,
) -> ChainState:
    rngs = ChainRngs.coerce(rng, state.k)

    def update(k: int) -> np.ndarray:
        forms = group_eigenvector_forms(state.u[k], state.lam[k], data[k].s, state, pooled)
        return gibbs_sweep_quadratic(
            state.u[k],
            forms,
            rngs.groups[k],
            schedule=options.pair_schedule,
            grid_size=options.phi_grid_size,
        )

    return state.model_copy(update={"u": _for_each_group(rngs, options, state.k, update)})


def truncated_inverse_gamma(
    shape: float,
    rate: float,
    lower: float,
    upper: float,
    rng: np.random.Generator,
) -> float:
    """Draw λ with 1/λ ~ gamma(shape, rate), restricted to lower < λ < upper.

    Works with τ = 1/λ and the regularized incomplete gamma functions, using
    the upper tail when the interval sits above the median.
    """
    if not 0 <= lower < upper:
        raise NumericalError(f"empty truncation interval ({lower}, {upper})")
    tau_lo = 0.0 if np.isinf(upper) else 1.0 / upper
    tau_hi = np.inf if lower == 0 else 1.0 / lower
    use_tail = gammainc(shape, rate * tau_lo) > 0.5
    if use_tail:
        q_lo, q_hi = gammaincc(shape, rate * tau_hi), gammaincc(shape, rate * tau_lo)
    else:
        q_lo, q_hi = gammainc(shape, rate * tau_lo), gammainc(shape, rate * tau_hi)
    warned = False
    for attempt in range(MAX_TRUNCATION_ATTEMPTS):
        if q_hi > q_lo and attempt < MAX_TRUNCATION_ATTEMPTS // 2:
            q = q_lo + (q_hi - q_lo) * rng.random()
            x = gammainccinv(shape, q) if use_tail else gammaincinv(shape, q)
            lam = rate / x if x > 0 else np.inf
        else:
            # CDF cannot resolve the interval; fall back to a grid in λ
            if not warned:
                logger.warning(
                    f"Truncated inverse-gamma interval ({lower:.6g}, {upper:.6g}) is not "
                    "resolvable by the incomplete gamma inverse; using grid fallback"
                )
                warned = True
            lam = _log_grid_inverse_gamma(shape, rate, lower, upper, rng)
        if np.isfinite(lam) and lower < lam < upper:
            return float(lam)
    raise NumericalError(
        f"could not draw inside ({lower:.6g}, {upper:.6g}) after {MAX_TRUNCATION_ATTEMPTS} attempts"
    )


def _log_grid_inverse_gamma(
    shape: float, rate: float, lower: float, upper: float, rng: np.random.Generator, cells: int = 200
) -> float:
    if lower <= 0 or not np.isfinite(upper):
        return np.nan
    edges = np.linspace(lower, upper, cells + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    log_p = -(shape + 1.0) * np.log(mid) - rate / mid
    return float(_grid_draw(log_p, edges, rng))


def _grid_draw(log_p: np.ndarray, edges: np.ndarray, rng: np.random.Generator) -> float:
    """Pick a cell with probability ∝ exp(log_p), then a uniform point inside it."""
    weights = np.exp(log_p - np.max(log_p))
    cell = rng.choice(weights.shape[0], p=weights / weights.sum())
    return edges[cell] + (edges[cell + 1] - edges[cell]) * rng.random()


def update_group_eigenvalues(
    state: ChainState,
    data: Sequence[GroupData],
    priors: PriorConfig,
    rng: RngLike,
    options: SamplerOptions = SamplerOptions(),
) -> ChainState:
    """λ_j ~ inverse-gamma((ν₀+n-1)/2, (ν₀σ₀² + u_jᵀSu_j)/2) on (λ_{j+1}, λ_{j-1})."""
    rngs = ChainRngs.coerce(rng, state.k)

    def update(k: int) -> np.ndarray:
        group = data[k]
        u_k = state.u[k]
        lam = np.array(state.lam[k], dtype=float)
        quad = np.einsum("ij,ik,kj->j", u_k, np.asarray(group.s), u_k)
        shape = 0.5 * (priors.nu0 + group.df)
        p = lam.shape[0]
        for j in range(p):
            upper = np.inf if j == 0 else lam[j - 1]
            lower = 0.0 if j == p - 1 else lam[j + 1]
            rate = 0.5 * (priors.nu0 * priors.sigma0_sq + max(quad[j], 0.0))
            lam[j] = truncated_inverse_gamma(shape, rate, lower, upper, rngs.groups[k])
        return lam

    return state.model_copy(update={"lam": _for_each_group(rngs, options, state.k, update)})


# --- Step 2: across-group updates ---
def update_v(state: ChainState, rng: np.random.Generator, options: SamplerOptions = SamplerOptions()) -> ChainState:
    """Gibbs sweep on V ∝ etr(A Vᵀ [Σ U_k B U_kᵀ] V)."""
    conc = state.conc
    c = sum(((u_k * conc.b) @ u_k.T for u_k in state.u), np.zeros((state.dim, state.dim)))
    forms = conc.a[:, None, None] * c[None, :, :]
    v = gibbs_sweep_quadratic(state.v, forms, rng, grid_size=options.phi_grid_size)
    return state.model_copy(update={"v": v})


def log_v_full_conditional(v: np.ndarray, state: ChainState, a: Optional[np.ndarray] = None) -> float:
    """tr(A Vᵀ C V) with C = Σ U_k B U_kᵀ, unnormalized."""
    conc = state.conc
    a = conc.a if a is None else np.asarray(a, dtype=float)
    c = sum(((u_k * conc.b) @ u_k.T for u_k in state.u), np.zeros((state.dim, state.dim)))
    return float(np.einsum("i,ji,jk,ki->", a, v, c, v))


def compute_m(state: ChainState) -> np.ndarray:
    """M = Σ_k (VᵀU_k)∘(VᵀU_k)"""
    m = np.zeros((state.dim, state.dim))
    for u_k in state.u:
        m += hadamard_square(state.v.T @ u_k)
    return m


def w_full_conditional(state: ChainState, priors: PriorConfig, m: np.ndarray) -> Tuple[float, float]:
    """(shape, rate) of the gamma full conditional of w under the c̃ approximation."""
    k, p = state.k, state.dim
    alpha, beta = state.conc.alpha, state.conc.beta
    shape = 0.5 * priors.eta0 + 0.5 * comb(p, 2) * k
    rate = 0.5 * priors.tau0_sq + float(alpha @ (k * np.eye(p) - m) @ beta)
    return shape, rate


def update_w(
    state: ChainState,
    priors: PriorConfig,
    rng: np.random.Generator,
    mh_order: int = 1,
    m: Optional[np.ndarray] = None,
) -> ChainState:
    m = compute_m(state) if m is None else m
    shape, rate = w_full_conditional(state, priors, m)
    if rate <= 0:
        raise NumericalError(f"non-positive rate {rate} in the full conditional of w")
    proposal = rng.gamma(shape, 1.0 / rate)
    if proposal <= 0:
        raise NumericalError("gamma draw for w underflowed to zero")
    w = proposal
    if mh_order > 0:
        w = mh_correct_w(state.conc.w, proposal, state.conc, state.k, rng, order=mh_order)
    return state.model_copy(update={"conc": state.conc.model_copy(update={"w": float(w)})})


def _shape_coordinate_log_density(
    x: np.ndarray, coef: float, others: np.ndarray, k: int
) -> np.ndarray:
    log_p = -coef * x
    if k:
        log_p = log_p + 0.5 * k * np.sum(np.log(np.abs(x[:, None] - others[None, :])), axis=1)
    return log_p


def _resample_shape_vector(
    vec: np.ndarray, coefs: np.ndarray, k: int, rng: np.random.Generator, cells: int
) -> np.ndarray:
    vec = np.array(vec, dtype=float)
    for i in range(1, vec.shape[0] - 1):
        coef = coefs[i]
        edges = np.linspace(vec[i + 1], vec[i - 1], cells + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        others = np.delete(vec, i)
        vec[i] = _grid_draw(_shape_coordinate_log_density(mid, coef, others, k), edges, rng)
    return vec


def update_shape_vectors(
    state: ChainState,
    rng: np.random.Generator,
    m: Optional[np.ndarray] = None,
    grid_size: int = 200,
) -> ChainState:
    """Grid Gibbs updates of the interior entries of α, then β.

    α_i has density ∝ exp(-w[(KI - M)β]_i α_i) Π_{j≠i} |α_i - α_j|^{K/2} on
    (α_{i+1}, α_{i-1}); β_j uses w[(KI - M)ᵀα]_j.
    """
    m = compute_m(state) if m is None else m
    k, p, w = state.k, state.dim, state.conc.w
    gap = k * np.eye(p) - m
    beta = state.conc.beta
    alpha = _resample_shape_vector(state.conc.alpha, w * (gap @ beta), k, rng, grid_size)
    beta = _resample_shape_vector(beta, w * (gap.T @ alpha), k, rng, grid_size)
    conc = state.conc.model_copy(update={"alpha": alpha, "beta": beta})
    return state.model_copy(update={"conc": conc})


# --- Full iteration and chain ---
def gibbs_iteration(
    state: ChainState,
    data: Sequence[GroupData],
    priors: PriorConfig,
    variant: ModelVariant,
    options: SamplerOptions,
    rngs: ChainRngs,
) -> Tuple[ChainState, IterationStats]:
    """One pass: U_k, Λ_k for every group, then V, then (w, α, β)."""
    stats = IterationStats()
    pooled = variant.pools_eigenvectors
    state = update_group_eigenvectors(state, data, rngs, options, pooled=pooled)
    state = update_group_eigenvalues(state, data, priors, rngs, options)
    if pooled:
        state = update_v(state, rngs.main, options)
    if variant == ModelVariant.hierarchical:
        m = compute_m(state)
        sums = np.concatenate([m.sum(axis=0), m.sum(axis=1)])
        if np.max(np.abs(sums - state.k)) > 1e-6 * max(state.k, 1):
            raise InvariantViolationError("M lost its row and column sums")
        w_before = state.conc.w
        state = update_w(state, priors, rngs.main, options.mh_order, m)
        stats.w_proposed = True
        stats.w_accepted = state.conc.w != w_before
        state = update_shape_vectors(state, rngs.main, m, options.shape_grid_size)
    check_state_invariants(state)
    return state, stats


def draw_seed() -> int:
    """Fresh 64-bit seed from OS entropy."""
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def expand_common(sample: PosteriorSample, k: int) -> PosteriorSample:
    return sample.model_copy(update={"u": [sample.u[0]] * k, "lam": [sample.lam[0]] * k})


def run_chain(
    data: Sequence[GroupData],
    priors: PriorConfig = PriorConfig(),
    variant: ModelVariant = ModelVariant.hierarchical,
    iterations: int = 10000,
    thin: int = 10,
    burn_in: int = 0,
    seed: Union[int, np.random.SeedSequence, None] = None,
    options: SamplerOptions = SamplerOptions(),
) -> Iterator[PosteriorSample]:
    """Run the sampler, yielding a sample at every `thin`-th iteration past burn-in."""
    validate_groups(data, min_n=2)
    if thin < 1:
        raise InvalidInputError("thin must be at least 1")
    k_out = len(data)
    fit_data = [pool_groups(data)] if variant == ModelVariant.common_covariance else list(data)
    if seed is None:
        seed = draw_seed()
    rngs = ChainRngs.from_seed(seed, len(fit_data), options.rng_mode)
    state = initial_state(fit_data, priors, variant)
    logger.info(
        f"Starting {variant.value} chain (seed {seed}): K={k_out}, p={state.dim}, iterations={iterations}, "
        f"burn_in={burn_in}, thin={thin}"
    )
    proposed = accepted = 0
    progress_step = max(iterations // 10, 1)
    for t in range(1, iterations + 1):
        state, stats = gibbs_iteration(state, fit_data, priors, variant, options, rngs)
        proposed += stats.w_proposed
        accepted += stats.w_accepted
        if t > burn_in and (t - burn_in) % thin == 0:
            sample = PosteriorSample.from_state(t, state, pooled=variant.pools_eigenvectors)
            yield expand_common(sample, k_out) if variant == ModelVariant.common_covariance else sample
        if t % progress_step == 0:
            logger.info(f"Iteration {t}/{iterations}")
    if proposed:
        logger.info(f"w acceptance rate {accepted / proposed:.3f} over {proposed} proposals")
    logger.info("Chain finished")


# --- Posterior summaries ---
def posterior_mean_v(samples: Sequence[PosteriorSample]) -> np.ndarray:
    """Eigenvectors of the posterior mean of V·A·Vᵀ.

    Samples without concentration weight the columns of V by p, p-1, ..., 1.
    """
    if not samples:
        raise InvalidInputError("no samples to summarize")
    p = samples[0].dim
    ranks = np.arange(p, 0, -1, dtype=float)
    mean = sum((s.v * (ranks if s.conc is None else s.conc.a)) @ s.v.T for s in samples) / len(samples)
    vectors, _ = sym_eig(mean)
    return vectors


def posterior_mean_covariances(samples: Sequence[PosteriorSample]) -> List[np.ndarray]:
    """Per-group posterior mean of U_k Λ_k U_kᵀ."""
    if not samples:
        raise InvalidInputError("no samples to summarize")
    k = samples[0].k
    return [
        sum((s.u[i] * s.lam[i]) @ s.u[i].T for s in samples) / len(samples) for i in range(k)
    ]


def posterior_mean_eigenvalues(samples: Sequence[PosteriorSample]) -> List[np.ndarray]:
    if not samples:
        raise InvalidInputError("no samples to summarize")
    return list(np.mean([np.stack(s.lam) for s in samples], axis=0))
