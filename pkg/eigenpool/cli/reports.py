"""summary.txt: `[section]` headers, each followed by a CSV block in %.17g."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from eigenpool.copula.services import posterior_mean_correlations
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.diagnostics.schemas import CorrelationSpread, LogABTraces, PredictiveCheck
from eigenpool.diagnostics.services import (
    correlation_spread,
    effective_sample_size,
    estimator_similarity,
    similarity_stat,
    trace_log_ab,
)
from eigenpool.hiermodel.schemas import PosteriorSample
from eigenpool.hiermodel.services import posterior_mean_covariances, posterior_mean_eigenvalues, posterior_mean_v
from eigenpool.matcore.services import sym_eig

logger = get_logger("cli.reports")

FLOAT_FORMAT = "%.17g"


class SummaryReport:
    """Ordered named tables written as one text file."""

    def __init__(self):
        self.sections: List[Tuple[str, pd.DataFrame]] = []

    def add(self, name: str, frame: pd.DataFrame) -> None:
        self.sections.append((name, frame))

    def names(self) -> List[str]:
        return [name for name, _ in self.sections]

    def get(self, name: str) -> pd.DataFrame:
        for section, frame in self.sections:
            if section == name:
                return frame
        raise KeyError(name)

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as handle:
            for index, (name, frame) in enumerate(self.sections):
                if index:
                    handle.write("\n")
                handle.write(f"[{name}]\n")
                frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info(f"Wrote summary with {len(self.sections)} sections to {path}")


# --- Tables ---
def _matrix_frame(m: np.ndarray, prefix: str = "col") -> pd.DataFrame:
    m = np.asarray(m, dtype=float)
    frame = pd.DataFrame(m, columns=[f"{prefix}_{j + 1}" for j in range(m.shape[1])])
    frame.insert(0, "row", np.arange(1, m.shape[0] + 1))
    return frame


def _group_labels(labels: Optional[Sequence[str]], k: int) -> List[str]:
    return list(labels) if labels else [f"g{i + 1}" for i in range(k)]


def eigenvalue_table(samples: Sequence[PosteriorSample], labels: List[str]) -> pd.DataFrame:
    lam = posterior_mean_eigenvalues(samples)
    p = samples[0].dim
    frame = pd.DataFrame(np.vstack(lam), columns=[f"lambda_{j + 1}" for j in range(p)])
    frame.insert(0, "group", labels)
    return frame


def group_eigenvector_table(samples: Sequence[PosteriorSample], labels: List[str]) -> pd.DataFrame:
    """Eigenvectors of each group's posterior-mean covariance, stacked by group."""
    frames = []
    for label, cov in zip(labels, posterior_mean_covariances(samples)):
        vectors, _ = sym_eig(cov)
        frame = _matrix_frame(vectors, "u")
        frame.insert(0, "group", label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def similarity_table(samples: Sequence[PosteriorSample], v_hat: np.ndarray, labels: List[str]) -> pd.DataFrame:
    """Posterior mean of t, t at the point estimates, and per-group agreement with V̂."""
    p = samples[0].dim
    posterior_t = np.mean([similarity_stat(s.v, s.u) for s in samples], axis=0)
    u_hat = [sym_eig(cov)[0] for cov in posterior_mean_covariances(samples)]
    point_t = similarity_stat(v_hat, u_hat)
    frame = pd.DataFrame(
        {"statistic": [f"t_{j + 1}" for j in range(p)], "posterior_mean": posterior_t, "point_estimate": point_t}
    )
    agreement = pd.DataFrame(
        {
            "statistic": [f"agreement_{label}" for label in labels],
            "posterior_mean": np.nan,
            "point_estimate": [estimator_similarity(u, v_hat) for u in u_hat],
        }
    )
    return pd.concat([frame, agreement], ignore_index=True)


def ess_table(traces: Dict[str, np.ndarray]) -> pd.DataFrame:
    """ESS per monitored scalar; constant or short traces are flagged, not estimated."""
    rows = []
    for name, trace in traces.items():
        trace = np.asarray(trace, dtype=float)
        row = {"scalar": name, "n": trace.size, "mean": trace.mean(), "sd": np.nan, "ess": np.nan, "mcse": np.nan}
        if trace.size > 1:
            row["sd"] = trace.std(ddof=1)
        if np.ptp(trace) == 0:
            row["note"] = "zero_variance"
        else:
            try:
                row["ess"] = effective_sample_size(trace)
                row["mcse"] = row["sd"] / np.sqrt(row["ess"])
                row["note"] = ""
            except InvalidInputError:
                row["note"] = "too_short"
        rows.append(row)
    return pd.DataFrame(rows, columns=["scalar", "n", "mean", "sd", "ess", "mcse", "note"])


def predictive_table(check: PredictiveCheck) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "statistic": ["min_t", "max_t"],
            "observed": [check.observed_min, check.observed_max],
            "lower": [check.min_interval[0], check.max_interval[0]],
            "upper": [check.min_interval[1], check.max_interval[1]],
            "covers": [check.covers_min, check.covers_max],
        }
    )


def log_ab_table(samples: Sequence[PosteriorSample], traces: LogABTraces) -> pd.DataFrame:
    return pd.DataFrame({"iteration": [s.iteration for s in samples], "mean": traces.mean, "sd": traces.sd})


def correlation_tables(
    samples: Sequence[PosteriorSample], labels: List[str]
) -> Tuple[pd.DataFrame, pd.DataFrame, CorrelationSpread]:
    means = posterior_mean_correlations(samples)
    p = samples[0].dim
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    corr = pd.DataFrame(
        [[label, i + 1, j + 1, c[i, j]] for label, c in zip(labels, means) for i, j in pairs],
        columns=["group", "i", "j", "correlation"],
    )
    spread = correlation_spread(means)
    spread_frame = pd.DataFrame(
        [
            [pair.i + 1, pair.j + 1, pair.minimum, pair.median, pair.maximum, int(pair.sign_consistent)]
            for pair in spread.pairs
        ],
        columns=["i", "j", "minimum", "median", "maximum", "sign_consistent"],
    )
    return corr, spread_frame, spread


# --- Assembly ---
def build_summary(
    samples: Sequence[PosteriorSample],
    run_info: Dict[str, object],
    traces: Dict[str, np.ndarray],
    labels: Optional[Sequence[str]] = None,
    predictive: Optional[PredictiveCheck] = None,
    truth_v: Optional[np.ndarray] = None,
) -> SummaryReport:
    if not samples:
        raise InvalidInputError("no samples to summarize")
    labels = _group_labels(labels, samples[0].k)
    report = SummaryReport()
    report.add("run", pd.DataFrame({"key": list(run_info), "value": [str(v) for v in run_info.values()]}))

    v_hat = posterior_mean_v(samples)
    report.add("posterior_mean_v", _matrix_frame(v_hat, "v"))
    report.add("eigenvalues", eigenvalue_table(samples, labels))
    report.add("group_eigenvectors", group_eigenvector_table(samples, labels))
    report.add("similarity", similarity_table(samples, v_hat, labels))
    report.add("ess", ess_table(traces))
    try:
        report.add("log_ab_trace", log_ab_table(samples, trace_log_ab(samples)))
    except InvalidInputError as exc:
        # restricted variants pin entries of α or β at zero
        logger.info(f"Skipping log A∘B trace: {exc.detail}")
    if predictive is not None:
        report.add("predictive", predictive_table(predictive))
    if samples[0].correlations is not None:
        corr, spread_frame, spread = correlation_tables(samples, labels)
        report.add("correlations", corr)
        report.add("correlation_spread", spread_frame)
        report.add(
            "sign_consistent",
            pd.DataFrame({"consistent": [spread.sign_consistent_count], "pairs": [len(spread.pairs)]}),
        )
    if truth_v is not None:
        truth_v = np.asarray(truth_v, dtype=float)
        if truth_v.shape != v_hat.shape:
            raise InvalidInputError(f"truth V has shape {truth_v.shape}, expected {v_hat.shape}")
        report.add(
            "recovery",
            pd.DataFrame(
                {
                    "column": np.arange(1, v_hat.shape[1] + 1),
                    "abs_inner_product": np.abs(np.einsum("ij,ij->j", v_hat, truth_v)),
                }
            ),
        )
    return report
