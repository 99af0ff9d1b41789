import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy import stats

from eigenpool.copula.schemas import LatentState, OrdinalTable
from eigenpool.copula.services import (
    check_rank_concordance,
    extract_correlation,
    latent_sum_of_squares,
    normal_scores,
    posterior_mean_correlations,
    rank_bounds,
    run_copula_chain,
    truncated_normal,
    update_latent,
)
from eigenpool.core.exceptions import InvalidInputError, InvariantViolationError
from eigenpool.diagnostics.services import estimator_similarity
from eigenpool.hiermodel.schemas import ModelVariant, PosteriorSample, SamplerOptions
from eigenpool.hiermodel.services import posterior_mean_covariances, run_chain
from eigenpool.hiermodel.simulation import discretize, generate_synthetic
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.matcore.services import haar_orthonormal, sym_eig


# --- Truncated normal ---
@pytest.mark.parametrize("lower,upper", [(-1.0, 0.5), (1.0, 2.0), (-np.inf, -0.5), (0.0, np.inf)])
def test_truncated_normal_matches_scipy(rng, lower, upper):
    draws = truncated_normal(np.zeros(20000), 1.0, lower, upper, rng)
    assert np.all((draws > lower) & (draws < upper))
    assert stats.kstest(draws, stats.truncnorm(lower, upper).cdf).pvalue > 0.001


def test_truncated_normal_far_tails(rng):
    upper_tail = truncated_normal(np.zeros(1000), 1.0, 12.0, 12.5, rng)
    lower_tail = truncated_normal(np.zeros(1000), 1.0, -40.0, -39.0, rng)
    assert np.all((upper_tail > 12.0) & (upper_tail < 12.5))
    assert np.all((lower_tail > -40.0) & (lower_tail < -39.0))
    # mass piles up against the bound closest to the mean
    assert np.median(upper_tail) < 12.1


def test_truncated_normal_location_scale(rng):
    draws = truncated_normal(np.full(20000, 5.0), 2.0, 5.0, np.inf, rng)
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - (5.0 + 2.0 * np.sqrt(2.0 / np.pi))) < 4 * se


# --- Correlations ---
def test_extract_correlation_by_hand():
    c = extract_correlation(np.array([[4.0, 2.0], [2.0, 9.0]]))
    assert_allclose(c, [[1.0, 1.0 / 3.0], [1.0 / 3.0, 1.0]])


def test_extract_correlation_rejects_zero_variance():
    with pytest.raises(InvalidInputError):
        extract_correlation(np.diag([1.0, 0.0]))


def test_extract_correlation_scale_free(rng):
    z = rng.standard_normal((4, 4))
    sigma = z @ z.T + np.eye(4)
    d = np.diag([0.5, 2.0, 3.0, 10.0])
    assert_allclose(extract_correlation(d @ sigma @ d), extract_correlation(sigma), atol=1e-12)


def test_extract_correlation_is_positive_semidefinite(rng):
    for p in (2, 4, 7):
        for _ in range(200):
            z = rng.standard_normal((p, int(rng.integers(1, p + 3))))
            sigma = z @ z.T + 1e-9 * np.eye(p)
            c = extract_correlation(sigma)
            assert np.linalg.eigvalsh(c)[0] >= -1e-12
            assert_allclose(np.diag(c), 1.0)


# --- Ranks ---
def test_rank_bounds_by_hand():
    y = np.array([1.0, 2.0, 2.0, 3.0, np.nan])
    z = np.array([-1.0, 0.1, 0.3, 1.2, 5.0])
    assert rank_bounds(y, z, 1) == (-1.0, 1.2)
    assert rank_bounds(y, z, 0) == (-np.inf, 0.1)
    assert rank_bounds(y, z, 3) == (0.3, np.inf)
    assert rank_bounds(y, z, 4) == (-np.inf, np.inf)


def test_rank_bounds_detects_discordance():
    with pytest.raises(InvariantViolationError):
        rank_bounds(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, 0.1]), 1)


def test_concordance_check():
    y = np.array([[1.0, 0.0], [2.0, 1.0], [2.0, np.nan]])
    check_rank_concordance(y, np.array([[-1.0, -0.2], [0.4, 0.3], [0.1, -9.0]]))
    with pytest.raises(InvariantViolationError):
        check_rank_concordance(y, np.array([[1.0, -0.2], [0.4, 0.3], [0.1, 0.0]]))


def test_normal_scores_are_concordant_and_zero_for_missing():
    table = OrdinalTable(groups=[np.array([[3.0, 1.0], [1.0, np.nan], [2.0, 0.0], [2.0, 5.0]])])
    z = normal_scores(table).z[0]
    check_rank_concordance(table.groups[0], z)
    assert z[1, 1] == 0.0
    # tied values share an average rank
    assert z[2, 0] == z[3, 0]


# --- Latent updates ---
def _table(rng, sizes=(15, 12), levels=4, p=3):
    groups = [rng.integers(0, levels, size=(n, p)).astype(float) for n in sizes]
    return OrdinalTable(groups=groups)


def test_update_latent_keeps_ranks(rng):
    table = _table(rng)
    table.groups[0][2, 1] = np.nan
    latent = normal_scores(table)
    sigmas = [np.eye(3), np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.0]])]
    for _ in range(50):
        latent = update_latent(latent, sigmas, table, rng)
        for y, z in zip(table.groups, latent.z):
            check_rank_concordance(y, z)


def test_update_latent_conditional_of_missing_entry(rng):
    rho = 0.9
    sigma = np.array([[1.0, rho], [rho, 1.0]])
    # columns are visited in order, so the missing first entry sees z₂ = 1.5
    table = OrdinalTable(groups=[np.array([[np.nan, 0.0]])])
    latent = LatentState(z=[np.array([[0.0, 1.5]])])
    draws = np.array([update_latent(latent, [sigma], table, rng).z[0][0, 0] for _ in range(20000)])
    # z₂ | z₁ = 1.5 ~ N(1.35, 0.19)
    assert abs(draws.mean() - rho * 1.5) < 4 * np.sqrt(1 - rho**2) / np.sqrt(draws.size)
    assert draws.var(ddof=1) == pytest.approx(1 - rho**2, rel=0.05)


def test_update_latent_matches_rejection_sampling(rng):
    # Σ = I: the first row of column 0 is N(0, 1) below the second row's 0.5,
    # then the second row is N(0, 1) above the new first row
    table = OrdinalTable(groups=[np.array([[0.0, 0.0], [1.0, 1.0]])])
    latent = LatentState(z=[np.array([[-0.3, -1.0], [0.5, 2.0]])])
    draws = np.array([update_latent(latent, [np.eye(2)], table, rng).z[0][:, 0] for _ in range(20000)])
    assert np.all(draws[:, 0] < draws[:, 1])

    candidates = rng.standard_normal(200000)
    first = candidates[candidates < 0.5][: draws.shape[0]]
    second = np.full(first.size, np.nan)
    pending = np.arange(first.size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        accepted = x > first[pending]
        second[pending[accepted]] = x[accepted]
        pending = pending[~accepted]
    for ours, reference in ((draws[:, 0], first), (draws[:, 1], second)):
        se = np.sqrt(ours.var(ddof=1) / ours.size + reference.var(ddof=1) / reference.size)
        assert abs(ours.mean() - reference.mean()) < 4 * se
        assert ours.var(ddof=1) == pytest.approx(reference.var(ddof=1), rel=0.05)


def test_update_latent_keeps_the_law_of_a_median_split_table(rng):
    # z ~ N(0, Σ) coded by the column medians: ranks fix the 2 x 2 table, so one
    # latent update given Σ must leave z distributed as N(0, Σ)
    rho, n, replicates = 0.6, 4, 5000
    sigma = np.array([[1.0, rho], [rho, 1.0]])
    chol = np.linalg.cholesky(sigma)
    updated = []
    for _ in range(replicates):
        z = rng.standard_normal((n, 2)) @ chol.T
        y = (z > np.median(z, axis=0)).astype(float)
        table = OrdinalTable(groups=[y])
        out = update_latent(LatentState(z=[z]), [sigma], table, rng).z[0]
        check_rank_concordance(y, out)
        updated.append(out)
    updated = np.vstack(updated)
    size = updated.shape[0]
    assert np.all(np.abs(updated.mean(axis=0)) < 4 / np.sqrt(size))
    assert_allclose(updated.var(axis=0, ddof=1), 1.0, atol=4 * np.sqrt(2.0 / size))
    cross = updated[:, 0] * updated[:, 1]
    assert abs(cross.mean() - rho) < 4 * np.sqrt((1 + rho**2) / size)


def test_update_latent_needs_one_covariance_per_group(rng):
    table = _table(rng)
    with pytest.raises(InvalidInputError):
        update_latent(normal_scores(table), [np.eye(3)], table, rng)


def test_latent_sum_of_squares():
    z = np.array([[1.0, 0.0], [-1.0, 2.0]])
    group = latent_sum_of_squares(z, "a")
    assert_allclose(group.s, [[2.0, -2.0], [-2.0, 2.0]])
    assert group.n == 2 and group.label == "a"


# --- Tables ---
def test_table_rejects_ragged_groups():
    with pytest.raises(ValidationError):
        OrdinalTable(groups=[np.zeros((2, 2)), np.zeros((2, 3))])


def test_table_rejects_infinite_entries():
    with pytest.raises(ValidationError):
        OrdinalTable(groups=[np.array([[1.0, np.inf]])])


def test_table_labels_and_columns():
    table = OrdinalTable(groups=[np.zeros((2, 2))], labels=["x"], columns=["a", "b"])
    assert table.group_label(0) == "x"
    assert OrdinalTable(groups=[np.zeros((2, 2))]).group_label(0) == "g1"
    with pytest.raises(ValidationError):
        OrdinalTable(groups=[np.zeros((2, 2))], columns=["a"])


# --- Chain ---
def test_copula_chain_reports_correlations(rng):
    table = _table(rng)
    samples = list(run_copula_chain(table, iterations=20, thin=10, seed=3))
    assert [s.iteration for s in samples] == [10, 20]
    for sample in samples:
        assert len(sample.correlations) == 2
        for c in sample.correlations:
            assert_allclose(np.diag(c), 1.0)
    mean = posterior_mean_correlations(samples)
    assert len(mean) == 2


def test_copula_chain_is_invariant_to_monotone_recoding(rng):
    table = _table(rng)
    recoded = OrdinalTable(groups=[np.exp(y) for y in table.groups])
    a = list(run_copula_chain(table, iterations=20, thin=10, seed=8))
    b = list(run_copula_chain(recoded, iterations=20, thin=10, seed=8))
    for x, y in zip(a, b):
        assert_allclose(x.v, y.v, atol=0)
        for cx, cy in zip(x.correlations, y.correlations):
            assert_allclose(cx, cy, atol=0)


def test_copula_common_variant(rng):
    table = _table(rng)
    samples = list(
        run_copula_chain(table, variant=ModelVariant.common_covariance, iterations=10, thin=10, seed=2)
    )
    assert_allclose(samples[0].correlations[0], samples[0].correlations[1])


def test_posterior_mean_correlations_needs_correlations(small_groups):
    samples = list(run_chain(small_groups, iterations=10, thin=10, seed=1))
    with pytest.raises(InvalidInputError):
        posterior_mean_correlations(samples)


def test_copula_on_continuous_data_tracks_normal_scores(rng):
    target = np.array([[1.0, 0.7, -0.3], [0.7, 1.0, 0.1], [-0.3, 0.1, 1.0]])
    chol = np.linalg.cholesky(target)
    # monotone margins: ranks are all the chain sees
    groups = [np.exp(rng.standard_normal((300, 3)) @ chol.T) for _ in range(2)]
    table = OrdinalTable(groups=groups)
    samples = list(
        run_copula_chain(
            table,
            variant=ModelVariant.no_pooling,
            iterations=300,
            burn_in=100,
            thin=5,
            seed=4,
            options=SamplerOptions(pair_schedule="all"),
        )
    )
    for z, mean in zip(normal_scores(table).z, posterior_mean_correlations(samples)):
        assert_allclose(mean, extract_correlation(latent_sum_of_squares(z).s), atol=0.06)


def test_samples_reject_invalid_correlations(small_groups):
    sample = next(run_chain(small_groups, iterations=1, thin=1, seed=1))
    data = sample.model_dump()
    good = [np.eye(3)] * sample.k
    assert len(PosteriorSample(**{**data, "correlations": good}).correlations) == sample.k
    for bad in (2.0 * np.eye(3), np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])):
        with pytest.raises(ValidationError):
            PosteriorSample(**{**data, "correlations": [bad] * sample.k})


@pytest.mark.slow
def test_pooling_helps_the_smallest_group():
    p, k = 3, 20
    sizes = [4] + [30] * (k - 1)
    chain = dict(
        iterations=1000, burn_in=250, thin=5, options=SamplerOptions(pair_schedule="all", phi_grid_size=1024)
    )
    wins = 0
    for replicate in range(20):
        rng = np.random.default_rng(500 + replicate)
        v = haar_orthonormal(p, rng)
        dataset = generate_synthetic(
            k, p, sizes, ConcentrationParams.equally_spaced(p, 500.0), v, np.array([4.0, 2.0, 1.0]),
            seed=replicate, observations=True, sweeps=50,
        )
        table = OrdinalTable(groups=[y.astype(float) for y in discretize(dataset.observations, 5)])
        scores = normal_scores(table).z
        pooled = sum(latent_sum_of_squares(z).s for z in scores)
        center, _ = sym_eig(pooled)

        hier = list(run_copula_chain(table, seed=replicate, **chain))
        # without pooling the smallest group's posterior does not involve the others
        alone = OrdinalTable(groups=[table.groups[0]])
        nopool = list(run_copula_chain(alone, variant=ModelVariant.no_pooling, seed=replicate, **chain))
        agreement = [
            estimator_similarity(sym_eig(posterior_mean_covariances(samples)[0])[0], center)
            for samples in (hier, nopool)
        ]
        wins += agreement[0] > agreement[1]
    assert wins >= 18
