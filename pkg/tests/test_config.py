import pytest
from pydantic import ValidationError

from eigenpool.config import RunConfig, Settings
from eigenpool.hiermodel.schemas import ModelVariant


def test_run_config_defaults():
    config = RunConfig()
    assert config.iterations == 10000 and config.thin == 10 and config.burn_in == 0
    assert config.variant is ModelVariant.hierarchical
    assert config.priors.w_prior_mean == pytest.approx(1000.0)
    assert config.mh_order == 1
    assert config.monitored == ["w", "mean_log_ab", "lambda1"]


@pytest.mark.parametrize(
    "alias,variant",
    [
        ("hier", ModelVariant.hierarchical),
        ("nopool", ModelVariant.no_pooling),
        ("shared1", ModelVariant.one_shared_eigenvector),
        ("common", ModelVariant.common_covariance),
    ],
)
def test_variant_aliases(alias, variant):
    assert RunConfig(variant=alias).variant is variant


@pytest.mark.parametrize("raw,order", [("off", 0), ("0", 0), ("false", 0), ("1", 1), (2, 2)])
def test_mh_correction_spellings(raw, order):
    assert RunConfig(mh_correction=raw).mh_order == order


def test_mh_correction_rejects_unknown_order():
    with pytest.raises(ValidationError):
        RunConfig(mh_correction="3")


def test_monitored_from_comma_string():
    assert RunConfig(monitored="w, lambda1,").monitored == ["w", "lambda1"]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"thin": 0},
        {"iterations": 10, "burn_in": 10},
        {"chains": 0},
        {"iterations": -1},
        {"seed": 2**64},
        {"seed": -1},
    ],
)
def test_run_config_rejects_bad_shapes(kwargs):
    with pytest.raises(ValidationError):
        RunConfig(**kwargs)


def test_sampler_options_follow_config():
    options = RunConfig(mh_correction="2", pair_schedule="sweep", rng_mode="substream", group_workers=4).sampler_options()
    assert options.mh_order == 2
    assert options.pair_schedule == "sweep"
    assert options.rng_mode == "substream"
    assert options.group_workers == 4


def test_load_reads_key_value_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("ITERATIONS=200\nvariant=nopool\nmonitored=w,lambda1\n# comment\nseed=17\n")
    config = RunConfig.load(str(path), iterations=50, thin=None)
    assert config.iterations == 50
    assert config.thin == 10
    assert config.variant is ModelVariant.no_pooling
    assert config.monitored == ["w", "lambda1"]
    assert config.seed == 17


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.load(str(tmp_path / "absent.env"))


def test_environment_fills_unset_values(monkeypatch):
    monkeypatch.setenv("EIGENPOOL_RUN_ITERATIONS", "300")
    monkeypatch.setenv("EIGENPOOL_RUN_MONITORED", "w,corr")
    config = RunConfig.load(None, thin=3)
    assert config.iterations == 300
    assert config.thin == 3
    assert config.monitored == ["w", "corr"]


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("EIGENPOOL_PHI_GRID_SIZE", "512")
    assert Settings().PHI_GRID_SIZE == 512


@pytest.mark.parametrize("field", ["PHI_GRID_SIZE", "PREDICTIVE_SWEEPS"])
def test_settings_reject_empty_grids(field):
    with pytest.raises(ValidationError):
        Settings(**{field: 0})


def test_settings_reject_non_positive_tolerance():
    with pytest.raises(ValidationError):
        Settings(CORRECTION_GAP_FLOOR=0.0)
