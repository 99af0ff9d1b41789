from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from eigenpool.cli.ingest import DataFormat, ingest, write_raw, write_ssq
from eigenpool.cli.records import read_samples, write_samples
from eigenpool.cli.reports import SummaryReport, build_summary
from eigenpool.config import RunConfig
from eigenpool.copula.schemas import OrdinalTable
from eigenpool.copula.services import run_copula_chain
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.core.schemas import ArrayModel
from eigenpool.diagnostics.schemas import PredictiveCheck
from eigenpool.diagnostics.services import empirical_similarity, predictive_minmax, trace_log_ab
from eigenpool.hiermodel.schemas import GroupData, PosteriorSample
from eigenpool.hiermodel.services import draw_seed, run_chain
from eigenpool.hiermodel.simulation import (
    SyntheticDataset,
    SyntheticTruth,
    discretize,
    generate_synthetic,
    posterior_predictive_groups,
)
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.matcore.services import haar_orthonormal

logger = get_logger("cli.services")

SUMMARY_FILE = "summary.txt"
TRUTH_FILE = "truth.json"


class ChainJob(ArrayModel):
    """Everything one worker needs; chain seeds derive from (seed, index, chains)."""

    index: int
    chains: int
    seed: int
    config: RunConfig
    out_dir: Path
    groups: Optional[List[GroupData]] = None
    table: Optional[OrdinalTable] = None


class ChainOutcome(ArrayModel):
    index: int
    path: Path
    samples: List[PosteriorSample]
    predictive_stats: List[np.ndarray] = []


def chain_seed_sequences(seed: int, chains: int, index: int) -> List[np.random.SeedSequence]:
    """(chain, predictive) seed sequences of chain `index`."""
    return np.random.SeedSequence(seed).spawn(chains)[index].spawn(2)


def samples_path(out_dir: Path, index: int) -> Path:
    return Path(out_dir) / f"samples_{index + 1}.csv"


def run_chain_job(job: ChainJob) -> ChainOutcome:
    """Run one chain and write its sample file; module-level so worker processes can import it."""
    config = job.config
    chain_seq, predictive_seq = chain_seed_sequences(job.seed, job.chains, job.index)
    kwargs = dict(
        priors=config.priors,
        variant=config.variant,
        iterations=config.iterations,
        thin=config.thin,
        burn_in=config.burn_in,
        seed=chain_seq,
        options=config.sampler_options(),
    )
    if job.table is not None:
        samples = list(run_copula_chain(job.table, **kwargs))
    else:
        samples = list(run_chain(job.groups, **kwargs))
    if not samples:
        raise InvalidInputError("the run saved no samples; check iterations, burn_in and thin")
    path = samples_path(job.out_dir, job.index)
    write_samples(samples, path)

    stats = []
    if job.groups is not None:
        rng = np.random.default_rng(predictive_seq)
        for sample in samples:
            simulated = posterior_predictive_groups(
                sample, job.groups, rng, config.predictive_sweeps, config.variant
            )
            stats.append(empirical_similarity(simulated))
    return ChainOutcome(index=job.index, path=path, samples=samples, predictive_stats=stats)


def run_chains(jobs: Sequence[ChainJob], processes: Optional[bool] = None) -> List[ChainOutcome]:
    """In-process for one chain, one worker process per chain otherwise."""
    if processes is None:
        processes = len(jobs) > 1
    if not processes:
        return [run_chain_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        return list(pool.map(run_chain_job, jobs))


# --- Monitored scalars ---
def monitored_traces(
    samples: Sequence[PosteriorSample], names: Sequence[str], labels: Sequence[str]
) -> Dict[str, np.ndarray]:
    traces: Dict[str, np.ndarray] = {}
    for name in names:
        if name == "w":
            if any(s.conc is None for s in samples):
                logger.info("w is not monitored: samples carry no concentration parameters")
                continue
            traces["w"] = np.array([s.conc.w for s in samples])
        elif name == "mean_log_ab":
            try:
                traces["mean_log_ab"] = np.asarray(trace_log_ab(samples).mean)
            except InvalidInputError as exc:
                logger.info(f"mean_log_ab is not monitored: {exc.detail}")
        elif name == "lambda1":
            for k, label in enumerate(labels):
                traces[f"lambda1_{label}"] = np.array([s.lam[k][0] for s in samples])
        elif name == "corr":
            if samples[0].correlations is None or samples[0].dim < 2:
                continue
            for k, label in enumerate(labels):
                traces[f"corr12_{label}"] = np.array([s.correlations[k][0, 1] for s in samples])
        else:
            raise InvalidInputError(f"unknown monitored scalar '{name}'")
    return traces


# --- Commands ---
def _labels(data: Union[List[GroupData], OrdinalTable]) -> List[str]:
    if isinstance(data, OrdinalTable):
        return [data.group_label(k) for k in range(data.k)]
    return [g.label or f"g{k + 1}" for k, g in enumerate(data)]


def fit_data(
    data: Union[List[GroupData], OrdinalTable],
    config: RunConfig,
    out_dir: Union[str, Path],
) -> Dict[str, object]:
    """Run `config.chains` chains, write their sample files and the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed if config.seed is not None else draw_seed()
    copula = isinstance(data, OrdinalTable)
    jobs = [
        ChainJob(
            index=c,
            chains=config.chains,
            seed=seed,
            config=config,
            out_dir=out_dir,
            groups=None if copula else data,
            table=data if copula else None,
        )
        for c in range(config.chains)
    ]
    logger.info(f"Running {config.chains} chain(s) with seed {seed}")
    outcomes = sorted(run_chains(jobs), key=lambda o: o.index)
    samples = [s for outcome in outcomes for s in outcome.samples]
    labels = _labels(data)

    predictive: Optional[PredictiveCheck] = None
    if not copula:
        stats = [t for outcome in outcomes for t in outcome.predictive_stats]
        predictive = predictive_minmax(stats, observed=empirical_similarity(data))

    names = list(config.monitored)
    if copula and "corr" not in names:
        names.append("corr")
    run_info = {
        "model": "copula" if copula else "gaussian",
        "variant": config.variant.alias,
        "seed": seed,
        "chains": config.chains,
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "mh_correction": config.mh_correction,
        "samples": len(samples),
        "groups": samples[0].k,
        "dim": samples[0].dim,
    }
    report = build_summary(samples, run_info, monitored_traces(samples, names, labels), labels, predictive)
    summary = out_dir / SUMMARY_FILE
    report.write(summary)
    return {
        "seed": seed,
        "samples": len(samples),
        "sample_files": [str(o.path) for o in outcomes],
        "summary": str(summary),
    }


def fit(
    data_path: Union[str, Path],
    fmt: DataFormat,
    config: RunConfig,
    out_dir: Union[str, Path],
    copula: bool = False,
) -> Dict[str, object]:
    return fit_data(ingest(data_path, fmt, copula=copula), config, out_dir)


def summarize(
    sample_paths: Sequence[Union[str, Path]],
    out_path: Union[str, Path],
    monitored: Sequence[str] = ("w", "mean_log_ab", "lambda1"),
    truth_path: Optional[Union[str, Path]] = None,
) -> SummaryReport:
    samples: List[PosteriorSample] = []
    for path in sample_paths:
        samples.extend(read_samples(path))
    if not samples:
        raise InvalidInputError("no samples to summarize")
    if len({(s.k, s.dim, s.correlations is None) for s in samples}) != 1:
        raise InvalidInputError("sample files disagree on the number of groups, dimension or model")
    names = list(monitored)
    if samples[0].correlations is not None and "corr" not in names:
        names.append("corr")
    labels = [f"g{k + 1}" for k in range(samples[0].k)]
    truth_v = None
    if truth_path is not None:
        truth_path = Path(truth_path)
        if not truth_path.exists():
            raise InvalidInputError(f"truth file not found: {truth_path}")
        truth_v = SyntheticTruth.model_validate_json(truth_path.read_text()).v
    run_info = {
        "files": len(sample_paths),
        "samples": len(samples),
        "groups": samples[0].k,
        "dim": samples[0].dim,
    }
    report = build_summary(samples, run_info, monitored_traces(samples, names, labels), labels, truth_v=truth_v)
    report.write(out_path)
    return report


def simulate(
    k: int,
    p: int,
    n: int,
    w: float,
    eigenvalues: Optional[Sequence[float]],
    seed: Optional[int],
    out_dir: Union[str, Path],
    fmt: DataFormat = "ssq",
    levels: Optional[int] = None,
) -> Dict[str, object]:
    """Write an ingestible dataset and its truth file.

    `w = 0` draws Haar-uniform U_k; otherwise α = β are equally spaced on
    [0, 1]. `levels` turns raw observations into ordinal codes.
    """
    if k < 1 or p < 1 or n < 1:
        raise InvalidInputError("groups, dimension and sample size must be positive")
    if w < 0:
        raise InvalidInputError("w must be non-negative")
    if levels is not None and fmt != "raw":
        raise InvalidInputError("ordinal levels need the raw format")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = seed if seed is not None else draw_seed()
    profile = np.arange(p, 0, -1, dtype=float) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    if profile.shape != (p,):
        raise InvalidInputError(f"expected {p} eigenvalues, got {profile.size}")
    v = haar_orthonormal(p, np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]))
    conc = ConcentrationParams.equally_spaced(p, w) if w > 0 else None
    dataset: SyntheticDataset = generate_synthetic(
        k, p, n, conc, v, profile, seed=seed, observations=fmt == "raw"
    )

    if fmt == "raw":
        observations = dataset.observations
        if levels is not None:
            observations = discretize(observations, levels)
        table = OrdinalTable(groups=observations, labels=[g.label for g in dataset.groups])
        data_path = out_dir / "data.csv"
        write_raw(table, data_path)
    else:
        data_path = out_dir / "data.ssq"
        write_ssq(dataset.groups, data_path)
    truth_path = out_dir / TRUTH_FILE
    truth_path.write_text(dataset.truth.model_dump_json(indent=2))
    logger.info(f"Wrote {data_path} and {truth_path}")
    return {"seed": seed, "data": str(data_path), "truth": str(truth_path)}
