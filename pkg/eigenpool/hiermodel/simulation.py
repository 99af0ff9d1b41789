from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field
from scipy import stats

from eigenpool.bingham.schemas import BinghamParams
from eigenpool.bingham.services import sample_bingham
from eigenpool.config import settings
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.core.schemas import ArrayModel
from eigenpool.hiermodel.schemas import (
    ChainRngs,
    ChainState,
    GroupData,
    ModelVariant,
    PosteriorSample,
    PriorConfig,
    SamplerOptions,
)
from eigenpool.hiermodel.services import gibbs_iteration
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.matcore.schemas import OrthonormalMatrix, SpectrumDiag
from eigenpool.matcore.services import haar_orthonormal

logger = get_logger("hiermodel.simulation")


class SyntheticTruth(ArrayModel):
    """Every latent value behind a simulated dataset."""

    seed: Optional[int] = None
    conc: Optional[ConcentrationParams] = None
    v: OrthonormalMatrix
    u: List[OrthonormalMatrix]
    lam: List[SpectrumDiag]
    n: List[int]


class SyntheticDataset(ArrayModel):
    groups: List[GroupData]
    truth: SyntheticTruth
    observations: Optional[List[np.ndarray]] = Field(default=None, exclude=True)


# --- Wishart ---
def sample_wishart(
    scale: np.ndarray, df: int, rng: np.random.Generator, allow_singular: bool = False
) -> np.ndarray:
    """Draw from Wishart(scale, df) with E[draw] = df·scale.

    df < p is rank deficient and only allowed with `allow_singular`, where the
    draw is built as a sum of df outer products.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    try:
        chol = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("Wishart scale must be positive definite") from exc
    if df >= p:
        draw = stats.wishart.rvs(df=df, scale=scale, random_state=rng)
        return np.atleast_2d(draw).reshape(p, p)
    if not allow_singular:
        raise InvalidInputError(f"df={df} is smaller than the dimension {p}; the draw would be singular")
    z = rng.standard_normal((df, p)) @ chol.T
    return z.T @ z


# --- Posterior predictive ---
def bingham_params_for(conc: Optional[ConcentrationParams], v: np.ndarray, pooled: bool = True) -> BinghamParams:
    p = v.shape[0]
    if not pooled or conc is None:
        return BinghamParams(a=np.zeros(p), b=np.zeros(p), v=v)
    return BinghamParams(a=conc.a, b=conc.b, v=v)


def posterior_predictive_groups(
    sample: PosteriorSample,
    data: Sequence[GroupData],
    rng: np.random.Generator,
    sweeps: Optional[int] = None,
    variant: ModelVariant = ModelVariant.hierarchical,
) -> List[GroupData]:
    """Replicate every group: Ũ_k ~ p_B(·|A, B, V), S̃_k ~ Wishart(Ũ_kΛ_kŨ_kᵀ, n_k - 1).

    Λ_k is the sample's current value rather than a fresh prior draw.
    """
    if sample.k != len(data):
        raise InvalidInputError(f"sample has {sample.k} groups but the data has {len(data)}")
    sweeps = sweeps or settings.PREDICTIVE_SWEEPS
    params = bingham_params_for(sample.conc, sample.v, variant.pools_eigenvectors)
    simulated = []
    for k, group in enumerate(data):
        if variant == ModelVariant.common_covariance:
            u_k = sample.u[k]
        else:
            u_k = sample_bingham(params, rng, sweeps)
        scale = (u_k * sample.lam[k]) @ u_k.T
        s_k = sample_wishart(scale, group.df, rng, allow_singular=True)
        simulated.append(GroupData(n=group.n, s=0.5 * (s_k + s_k.T), label=group.label))
    return simulated


# --- Synthetic data ---
def generate_synthetic(
    k: int,
    p: int,
    n: Union[int, Sequence[int]],
    conc: Optional[ConcentrationParams],
    v: np.ndarray,
    eigenvalues: np.ndarray,
    seed: Optional[int] = None,
    observations: bool = False,
    sweeps: Optional[int] = None,
) -> SyntheticDataset:
    """Simulate K groups from the model with known truth.

    `conc=None` stands for w = 0 (Haar-uniform U_k). `eigenvalues` is either
    one profile for all groups or a K x p array. With `observations` the
    groups are built from Gaussian rows, otherwise S_k is a Wishart draw.
    """
    sizes = [n] * k if isinstance(n, (int, np.integer)) else list(n)
    if len(sizes) != k:
        raise InvalidInputError(f"expected {k} group sizes, got {len(sizes)}")
    lam = np.asarray(eigenvalues, dtype=float)
    lam = np.tile(lam, (k, 1)) if lam.ndim == 1 else lam
    if lam.shape != (k, p):
        raise InvalidInputError(f"eigenvalue profile must have shape ({p},) or ({k}, {p})")
    sweeps = sweeps or settings.SYNTHETIC_SWEEPS
    rng = np.random.default_rng(seed)
    params = bingham_params_for(conc, v) if conc is not None else None

    groups, raw, u_list = [], [], []
    for i in range(k):
        u_k = haar_orthonormal(p, rng) if params is None else sample_bingham(params, rng, sweeps)
        sigma = (u_k * lam[i]) @ u_k.T
        if observations:
            y = rng.multivariate_normal(np.zeros(p), sigma, size=sizes[i])
            raw.append(y)
            groups.append(GroupData.from_observations(y, label=f"g{i + 1}"))
        else:
            s_k = sample_wishart(sigma, sizes[i] - 1, rng, allow_singular=True)
            groups.append(GroupData(n=sizes[i], s=0.5 * (s_k + s_k.T), label=f"g{i + 1}"))
        u_list.append(u_k)

    truth = SyntheticTruth(seed=seed, conc=conc, v=v, u=u_list, lam=list(lam), n=sizes)
    logger.info(f"Simulated {k} groups of dimension {p}")
    return SyntheticDataset(groups=groups, truth=truth, observations=raw if observations else None)


def discretize(observations: Sequence[np.ndarray], levels: int) -> List[np.ndarray]:
    """Ordinal codes 0..levels-1 from per-column quantile cuts pooled over groups."""
    if levels < 2:
        raise InvalidInputError("need at least two levels")
    stacked = np.vstack(observations)
    cuts = np.quantile(stacked, np.linspace(0.0, 1.0, levels + 1)[1:-1], axis=0)
    return [
        np.column_stack([np.searchsorted(cuts[:, j], y[:, j], side="right") for j in range(y.shape[1])])
        for y in observations
    ]


# --- Joint-distribution checks ---
def simulate_prior_state(
    p: int,
    k: int,
    n: int,
    priors: PriorConfig,
    rng: np.random.Generator,
    sweeps: Optional[int] = None,
) -> Tuple[ChainState, List[GroupData]]:
    """One draw of all parameters from the prior and data from the likelihood."""
    sweeps = sweeps or settings.SYNTHETIC_SWEEPS
    w = rng.gamma(0.5 * priors.eta0, 2.0 / priors.tau0_sq)
    interior_a = np.sort(rng.random(p - 2))[::-1] if p > 2 else np.empty(0)
    interior_b = np.sort(rng.random(p - 2))[::-1] if p > 2 else np.empty(0)
    ends = (np.ones(1), np.zeros(1))
    conc = ConcentrationParams(
        w=w,
        alpha=np.concatenate([ends[0], interior_a, ends[1]]),
        beta=np.concatenate([ends[0], interior_b, ends[1]]),
    )
    v = haar_orthonormal(p, rng)
    params = bingham_params_for(conc, v)
    u_list, lam_list = [], []
    for _ in range(k):
        u_list.append(sample_bingham(params, rng, sweeps, start=v))
        inv = rng.gamma(0.5 * priors.nu0, 2.0 / (priors.nu0 * priors.sigma0_sq), size=p)
        lam_list.append(np.sort(1.0 / inv)[::-1])
    state = ChainState(u=u_list, lam=lam_list, v=v, conc=conc)
    return state, redraw_data(state, n, rng)


def redraw_data(state: ChainState, n: int, rng: np.random.Generator) -> List[GroupData]:
    groups = []
    for u_k, lam_k in zip(state.u, state.lam):
        s_k = sample_wishart((u_k * lam_k) @ u_k.T, n - 1, rng)
        groups.append(GroupData(n=n, s=0.5 * (s_k + s_k.T)))
    return groups


def joint_test_functions(state: ChainState) -> Dict[str, float]:
    """Scalar summaries compared between the two joint simulators."""
    return {
        "w": state.conc.w,
        "alpha2": float(state.conc.alpha[1]) if state.dim > 2 else 0.0,
        "lambda11": float(state.lam[0][0]),
        "similarity1": float(np.mean([np.dot(state.v[:, 0], u_k[:, 0]) ** 2 for u_k in state.u])),
    }


def marginal_conditional_draws(
    p: int, k: int, n: int, priors: PriorConfig, draws: int, rng: np.random.Generator, sweeps: Optional[int] = None
) -> Dict[str, np.ndarray]:
    records = [joint_test_functions(simulate_prior_state(p, k, n, priors, rng, sweeps)[0]) for _ in range(draws)]
    return {key: np.array([r[key] for r in records]) for key in records[0]}


def successive_conditional_draws(
    p: int,
    k: int,
    n: int,
    priors: PriorConfig,
    draws: int,
    rng: np.random.Generator,
    options: SamplerOptions = SamplerOptions(pair_schedule="sweep"),
    sweeps: Optional[int] = None,
) -> Dict[str, np.ndarray]:
    """Alternate sampler transitions with fresh data given the current parameters."""
    state, data = simulate_prior_state(p, k, n, priors, rng, sweeps)
    rngs = ChainRngs(rng, [rng] * k, "sequential")
    records = []
    for _ in range(draws):
        state, _ = gibbs_iteration(state, data, priors, ModelVariant.hierarchical, options, rngs)
        data = redraw_data(state, n, rng)
        records.append(joint_test_functions(state))
    return {key: np.array([r[key] for r in records]) for key in records[0]}
