import json

import numpy as np
import pytest
from click.testing import CliRunner
from numpy.testing import assert_allclose

from eigenpool.cli import services
from eigenpool.cli.ingest import ingest, read_raw, read_ssq, write_raw, write_ssq
from eigenpool.cli.records import read_samples, sample_columns, schema_line, write_samples
from eigenpool.cli.reports import ess_table
from eigenpool.config import RunConfig
from eigenpool.copula.schemas import OrdinalTable
from eigenpool.core.exceptions import InvalidInputError, NumericalError
from eigenpool.core.logging import setup_logging
from eigenpool.hiermodel.schemas import ModelVariant
from eigenpool.hiermodel.services import run_chain
from eigenpool.main import cli


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    # CliRunner swaps stderr while a command runs
    setup_logging()


@pytest.fixture
def runner():
    return CliRunner(mix_stderr=False)


def _invoke(runner, *args):
    result = runner.invoke(cli, [str(a) for a in args])
    return result, json.loads(result.stdout) if result.stdout.strip() else None


def _write_raw_csv(path, groups):
    lines = ["group,a,b"]
    for label, y in groups.items():
        lines += [f"{label},{row[0]:g},{row[1]:g}" for row in y]
    path.write_text("\n".join(lines) + "\n")


# --- Ingestion ---
def test_raw_groups_by_hand(tmp_path, two_groups_raw):
    path = tmp_path / "data.csv"
    _write_raw_csv(path, two_groups_raw)
    groups = ingest(path, "raw")
    assert [g.label for g in groups] == ["a", "b"]
    assert_allclose(groups[0].s, [[8.0, 14.0], [14.0, 26.0]])
    assert_allclose(groups[1].s, [[2.0, -2.0], [-2.0, 2.0]])


def test_single_observation_group(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,a,b\nx,1,2\nx,3,1\ny,0,0\n")
    with pytest.raises(InvalidInputError, match="'y'"):
        ingest(path, "raw")
    table = ingest(path, "raw", copula=True)
    assert table.sizes == [2, 1]


def test_missing_values_only_for_copula(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,a,b\nx,1,\nx,3,1\nx,2,2\n")
    with pytest.raises(InvalidInputError, match="missing"):
        ingest(path, "raw")
    table = ingest(path, "raw", copula=True)
    assert np.isnan(table.groups[0][0, 1])


def test_malformed_row_names_the_line(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,a,b\nx,1,2\nx,oops,1\n")
    with pytest.raises(InvalidInputError, match="line 3"):
        read_raw(path)


def test_short_row_is_rejected(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,x1,x2,x3\na,1,2,3\na,4,5\n")
    with pytest.raises(InvalidInputError, match="line 3: expected 4 fields, got 3"):
        read_raw(path)


def test_long_row_is_rejected(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,x1,x2\na,1,2\n\na,4,5,6\n")
    with pytest.raises(InvalidInputError, match="line 4"):
        read_raw(path)


def test_trailing_empty_field_is_missing(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("group,x1,x2,x3\na,1,2,3\na,4,5,\n")
    table = read_raw(path)
    assert_allclose(table.groups[0][1, :2], [4.0, 5.0])
    assert np.isnan(table.groups[0][1, 2])


def test_raw_needs_group_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        read_raw(path)


def test_ssq_blocks(tmp_path):
    path = tmp_path / "data.ssq"
    path.write_text("# two groups\nfirst,5\n4,1\n1,3\n\nsecond,3\n2,0\n0,2\n")
    groups = read_ssq(path)
    assert [(g.label, g.n) for g in groups] == [("first", 5), ("second", 3)]
    assert_allclose(groups[0].s, [[4.0, 1.0], [1.0, 3.0]])


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("a,5\n4,1\n2,3\n", "asymmetric"),
        ("a,5\n4,1\n", "matrix rows"),
        ("a,five\n4,1\n1,3\n", "line 1"),
        ("a,5\n4,1\n1,x\n", "line 3"),
        ("a,5\n1,0\n0,1\na,5\n1,0\n0,1\n", "duplicate"),
        ("# nothing\n", "no groups"),
    ],
)
def test_ssq_errors(tmp_path, text, fragment):
    path = tmp_path / "data.ssq"
    path.write_text(text)
    with pytest.raises(InvalidInputError, match=fragment):
        read_ssq(path)


def test_ssq_rewrite_is_byte_stable(tmp_path, small_groups):
    first, second = tmp_path / "a.ssq", tmp_path / "b.ssq"
    write_ssq(small_groups, first)
    write_ssq(read_ssq(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_raw_rewrite_is_byte_stable(tmp_path, rng):
    table = OrdinalTable(
        groups=[rng.standard_normal((4, 3)), np.array([[1.0, np.nan, 0.1], [2.0, 3.0, 1e-17]])],
        labels=["one", "two"],
        columns=["x", "y", "z"],
    )
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_raw(table, first)
    reread = read_raw(first)
    write_raw(reread, second)
    assert first.read_bytes() == second.read_bytes()
    assert reread.columns == ["x", "y", "z"]
    assert_allclose(reread.groups[0], table.groups[0], atol=0)


def test_copula_rejects_ssq(tmp_path, small_groups):
    path = tmp_path / "data.ssq"
    write_ssq(small_groups, path)
    with pytest.raises(InvalidInputError):
        ingest(path, "ssq", copula=True)


# --- Sample files ---
def test_sample_file_round_trip(tmp_path, small_groups):
    samples = list(run_chain(small_groups, iterations=20, thin=5, seed=3))
    path = tmp_path / "samples.csv"
    write_samples(samples, path)
    assert path.read_text().splitlines()[0] == schema_line(3, 3, False)
    restored = read_samples(path)
    assert [s.iteration for s in restored] == [s.iteration for s in samples]
    for a, b in zip(samples, restored):
        assert a.conc.w == b.conc.w
        assert_allclose(a.v, b.v, atol=0)
        assert_allclose(a.lam[2], b.lam[2], atol=0)


def test_sample_columns_layout():
    columns = sample_columns(2, 1, copula=True)
    assert columns[:6] == ["iteration", "w", "alpha_1", "alpha_2", "beta_1", "beta_2"]
    assert columns[-4:] == ["C1_1_1", "C1_1_2", "C1_2_1", "C1_2_2"]
    assert len(columns) == 2 + 4 + 4 + 4 + 2 + 4


def test_corrupt_sample_file_names_the_line(tmp_path, small_groups):
    samples = list(run_chain(small_groups, iterations=20, thin=5, seed=3))
    path = tmp_path / "samples.csv"
    write_samples(samples, path)
    lines = path.read_text().splitlines()
    fields = lines[3].split(",")
    fields[1] = "nan"
    lines[3] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(InvalidInputError, match="line 4"):
        read_samples(path)


def test_sample_file_needs_schema(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text("iteration,w\n1,2\n")
    with pytest.raises(InvalidInputError, match="schema"):
        read_samples(path)


# --- Chains ---
def _config(**kwargs):
    defaults = dict(iterations=20, thin=5, seed=41, predictive_sweeps=5)
    defaults.update(kwargs)
    return RunConfig(**defaults)


def test_fit_is_byte_reproducible(tmp_path, small_groups):
    first = services.fit_data(small_groups, _config(), tmp_path / "a")
    second = services.fit_data(small_groups, _config(), tmp_path / "b")
    a, b = first["sample_files"][0], second["sample_files"][0]
    assert open(a, "rb").read() == open(b, "rb").read()
    assert (tmp_path / "a" / services.SUMMARY_FILE).read_bytes() == (tmp_path / "b" / services.SUMMARY_FILE).read_bytes()


def test_worker_process_matches_in_process(tmp_path, small_groups):
    def job(out_dir):
        out_dir.mkdir()
        return services.ChainJob(index=0, chains=1, seed=9, config=_config(), out_dir=out_dir, groups=small_groups)

    local = services.run_chains([job(tmp_path / "local")], processes=False)[0]
    pooled = services.run_chains([job(tmp_path / "pool")], processes=True)[0]
    assert local.path.read_bytes() == pooled.path.read_bytes()


def test_chains_get_distinct_streams(tmp_path, small_groups):
    outcome = services.fit_data(small_groups, _config(chains=2), tmp_path)
    a, b = (open(p, "rb").read() for p in outcome["sample_files"])
    assert a != b
    assert outcome["samples"] == 8


def test_monitored_traces_reject_unknown_names(small_groups):
    samples = list(run_chain(small_groups, iterations=10, thin=5, seed=1))
    with pytest.raises(InvalidInputError):
        services.monitored_traces(samples, ["bogus"], ["g1", "g2", "g3"])
    traces = services.monitored_traces(samples, ["w", "lambda1"], ["g1", "g2", "g3"])
    assert set(traces) == {"w", "lambda1_g1", "lambda1_g2", "lambda1_g3"}


def test_no_pooling_sample_file_leaves_concentration_empty(tmp_path, small_groups):
    samples = list(run_chain(small_groups, variant=ModelVariant.no_pooling, iterations=20, thin=5, seed=3))
    path = tmp_path / "samples.csv"
    write_samples(samples, path)
    first_row = path.read_text().splitlines()[2].split(",")
    assert first_row[1:8] == [""] * 7
    restored = read_samples(path)
    assert all(s.conc is None for s in restored)
    assert_allclose(restored[-1].u[0], samples[-1].u[0], atol=0)


def test_no_pooling_summary_has_no_concentration_outputs(tmp_path, small_groups):
    outcome = services.fit_data(small_groups, _config(variant="nopool"), tmp_path)
    report = services.summarize(outcome["sample_files"], tmp_path / "again.txt")
    assert "log_ab_trace" not in report.names()
    scalars = list(report.get("ess")["scalar"])
    assert "w" not in scalars and "mean_log_ab" not in scalars
    assert "lambda1_g1" in scalars
    assert "[log_ab_trace]" not in (tmp_path / "summary.txt").read_text()


def test_ess_table_flags_degenerate_traces():
    frame = ess_table({"flat": np.ones(30), "short": np.arange(4.0)})
    assert list(frame["note"]) == ["zero_variance", "too_short"]


# --- Commands ---
def test_simulate_fit_summarize(tmp_path, runner):
    result, payload = _invoke(
        runner, "simulate", "--groups", 3, "--dim", 3, "--n", 20, "--w", 200, "--seed", 5, "--out-dir", tmp_path
    )
    assert result.exit_code == 0, result.stderr
    assert payload["success"] and payload["data"]["seed"] == 5

    fit_dir = tmp_path / "fit"
    result, payload = _invoke(
        runner, "fit", "--data", tmp_path / "data.ssq", "--iterations", 20, "--thin", 5, "--seed", 1, "--out-dir", fit_dir
    )
    assert result.exit_code == 0, result.stderr
    assert payload["data"]["samples"] == 4
    summary = (fit_dir / "summary.txt").read_text()
    for section in ("[run]", "[posterior_mean_v]", "[similarity]", "[ess]", "[predictive]"):
        assert section in summary

    out = tmp_path / "again.txt"
    result, payload = _invoke(
        runner, "summarize", fit_dir / "samples_1.csv", "--out", out, "--truth", tmp_path / "truth.json"
    )
    assert result.exit_code == 0, result.stderr
    assert "recovery" in payload["data"]["sections"]
    assert out.exists()


def test_fit_generates_and_reports_a_seed(tmp_path, runner, small_groups):
    write_ssq(small_groups, tmp_path / "data.ssq")
    result, payload = _invoke(
        runner, "fit", "--data", tmp_path / "data.ssq", "--iterations", 10, "--thin", 5, "--out-dir", tmp_path
    )
    assert result.exit_code == 0, result.stderr
    seed = payload["data"]["seed"]
    assert 0 <= seed < 2**64
    assert f"seed,{seed}" in (tmp_path / "summary.txt").read_text()


def test_fit_copula_on_ordinal_data(tmp_path, runner):
    result, _ = _invoke(
        runner, "simulate", "--groups", 2, "--dim", 3, "--n", 15, "--seed", 3, "--format", "raw", "--levels", 4,
        "--out-dir", tmp_path,
    )
    assert result.exit_code == 0, result.stderr
    result, payload = _invoke(
        runner, "fit-copula", "--data", tmp_path / "data.csv", "--iterations", 10, "--thin", 5, "--seed", 2,
        "--out-dir", tmp_path / "fit",
    )
    assert result.exit_code == 0, result.stderr
    summary = (tmp_path / "fit" / "summary.txt").read_text()
    assert "[correlations]" in summary and "[sign_consistent]" in summary
    assert read_samples(payload["data"]["sample_files"][0])[0].correlations is not None


def test_fit_uses_config_file(tmp_path, runner, small_groups):
    write_ssq(small_groups, tmp_path / "data.ssq")
    config = tmp_path / "run.env"
    config.write_text("iterations=15\nthin=5\nseed=8\nvariant=nopool\n")
    result, payload = _invoke(
        runner, "fit", "--data", tmp_path / "data.ssq", "--config", config, "--thin", 15, "--out-dir", tmp_path
    )
    assert result.exit_code == 0, result.stderr
    assert payload["data"]["samples"] == 1
    assert "variant,nopool" in (tmp_path / "summary.txt").read_text()


def test_missing_data_file_is_an_input_error(tmp_path, runner):
    result, payload = _invoke(runner, "fit", "--data", tmp_path / "absent.ssq", "--out-dir", tmp_path)
    assert result.exit_code == 2
    assert payload["success"] is False


def test_invalid_run_shape_is_an_input_error(tmp_path, runner, small_groups):
    write_ssq(small_groups, tmp_path / "data.ssq")
    result, payload = _invoke(
        runner, "fit", "--data", tmp_path / "data.ssq", "--iterations", 10, "--burn-in", 10, "--out-dir", tmp_path
    )
    assert result.exit_code == 2
    assert "burn_in" in payload["error"]


def test_numerical_failure_exit_code(tmp_path, runner, small_groups, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericalError("rate underflow")

    monkeypatch.setattr(services, "fit", broken)
    write_ssq(small_groups, tmp_path / "data.ssq")
    result, payload = _invoke(runner, "fit", "--data", tmp_path / "data.ssq", "--out-dir", tmp_path)
    assert result.exit_code == 3
    assert payload["error"] == "rate underflow"


def test_summarize_empty_sample_file(tmp_path, runner):
    path = tmp_path / "samples_1.csv"
    path.write_text(schema_line(2, 1, False) + "\n" + ",".join(sample_columns(2, 1)) + "\n")
    result, payload = _invoke(runner, "summarize", path, "--out", tmp_path / "s.txt")
    assert result.exit_code == 2
    assert "no samples" in payload["error"]


def test_summarize_single_sample_flags_zero_variance(tmp_path, runner, small_groups):
    path = tmp_path / "samples_1.csv"
    write_samples(list(run_chain(small_groups, iterations=5, thin=5, seed=2)), path)
    out = tmp_path / "s.txt"
    result, _ = _invoke(runner, "summarize", path, "--out", out, "--monitored", "w")
    assert result.exit_code == 0, result.stderr
    assert "zero_variance" in out.read_text()
