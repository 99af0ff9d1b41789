"""Sample files: one CSV row per saved sample.

The first line is a schema comment::

    # schema: eigenpool-samples/v1 p=<p> k=<K> copula=<0|1>

followed by a header and the rows. Column order, all indices 1-based:

    iteration, w, alpha_1..alpha_p, beta_1..beta_p,
    V_i_j (row-major),
    then for each group k: U{k}_i_j (row-major), lambda{k}_1..lambda{k}_p,
    and in copula mode C{k}_i_j (row-major).

Variants without a concentration (no pooling, common covariance) leave the
w, alpha and beta fields empty.
"""

import re
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.hiermodel.schemas import PosteriorSample
from eigenpool.hypergeo.schemas import ConcentrationParams

logger = get_logger("cli.records")

SCHEMA_VERSION = "eigenpool-samples/v1"
SCHEMA_PATTERN = re.compile(r"^# schema: (?P<version>\S+) p=(?P<p>\d+) k=(?P<k>\d+) copula=(?P<copula>[01])$")


def _matrix_columns(prefix: str, p: int) -> List[str]:
    return [f"{prefix}_{i + 1}_{j + 1}" for i in range(p) for j in range(p)]


def sample_columns(p: int, k: int, copula: bool = False) -> List[str]:
    columns = ["iteration", "w"]
    columns += [f"alpha_{i + 1}" for i in range(p)]
    columns += [f"beta_{i + 1}" for i in range(p)]
    columns += _matrix_columns("V", p)
    for g in range(1, k + 1):
        columns += _matrix_columns(f"U{g}", p)
        columns += [f"lambda{g}_{j + 1}" for j in range(p)]
        if copula:
            columns += _matrix_columns(f"C{g}", p)
    return columns


def schema_line(p: int, k: int, copula: bool) -> str:
    return f"# schema: {SCHEMA_VERSION} p={p} k={k} copula={int(copula)}"


def _sample_row(sample: PosteriorSample, copula: bool) -> list:
    if sample.conc is None:
        row = [sample.iteration] + [np.nan] * (1 + 2 * sample.dim)
    else:
        row = [sample.iteration, sample.conc.w]
        row += list(sample.conc.alpha) + list(sample.conc.beta)
    row += list(np.ravel(sample.v))
    for g in range(sample.k):
        row += list(np.ravel(sample.u[g])) + list(sample.lam[g])
        if copula:
            row += list(np.ravel(sample.correlations[g]))
    return row


def write_samples(samples: Sequence[PosteriorSample], path: Union[str, Path]) -> None:
    if not samples:
        raise InvalidInputError("no samples to write")
    first = samples[0]
    p, k = first.dim, first.k
    copula = first.correlations is not None
    frame = pd.DataFrame([_sample_row(s, copula) for s in samples], columns=sample_columns(p, k, copula))
    frame["iteration"] = frame["iteration"].astype(np.int64)
    with open(path, "w", newline="") as handle:
        handle.write(schema_line(p, k, copula) + "\n")
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Wrote {len(samples)} samples to {path}")


def read_schema(path: Union[str, Path]) -> Dict[str, int]:
    with open(path) as handle:
        first = handle.readline().rstrip("\n")
    match = SCHEMA_PATTERN.match(first)
    if not match:
        raise InvalidInputError(f"{path}: missing or malformed schema line")
    if match["version"] != SCHEMA_VERSION:
        raise InvalidInputError(f"{path}: unsupported schema '{match['version']}'")
    return {"p": int(match["p"]), "k": int(match["k"]), "copula": int(match["copula"])}


def read_samples(path: Union[str, Path]) -> List[PosteriorSample]:
    """Rebuild the saved samples; raises InvalidInputError on any corruption."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"sample file not found: {path}")
    schema = read_schema(path)
    p, k, copula = schema["p"], schema["k"], bool(schema["copula"])
    try:
        frame = pd.read_csv(path, skiprows=1, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    expected = sample_columns(p, k, copula)
    if list(frame.columns) != expected:
        raise InvalidInputError(f"{path}: header does not match the schema line")
    if frame.empty:
        raise InvalidInputError(f"{path}: no samples")
    values = frame.to_numpy(dtype=float)
    finite = np.isfinite(values)
    conc_cols = slice(1, 2 + 2 * p)
    # an empty concentration block marks a variant without one
    unpooled = np.isnan(values[:, conc_cols]).all(axis=1)
    finite[unpooled, conc_cols] = True
    if not np.all(finite):
        row = int(np.flatnonzero(~finite.all(axis=1))[0])
        # schema and header occupy lines 1 and 2
        raise InvalidInputError(f"{path}: missing or non-finite value on line {row + 3}")

    samples = []
    for number, (row, no_conc) in enumerate(zip(values, unpooled), start=3):
        cursor = 2
        alpha, beta = row[cursor : cursor + p], row[cursor + p : cursor + 2 * p]
        cursor += 2 * p
        v = row[cursor : cursor + p * p].reshape(p, p)
        cursor += p * p
        u, lam, corr = [], [], []
        for _ in range(k):
            u.append(row[cursor : cursor + p * p].reshape(p, p))
            cursor += p * p
            lam.append(row[cursor : cursor + p])
            cursor += p
            if copula:
                corr.append(row[cursor : cursor + p * p].reshape(p, p))
                cursor += p * p
        try:
            samples.append(
                PosteriorSample(
                    iteration=int(row[0]),
                    u=u,
                    lam=lam,
                    v=v,
                    conc=None if no_conc else ConcentrationParams(w=row[1], alpha=alpha, beta=beta),
                    correlations=corr if copula else None,
                )
            )
        except ValueError as exc:
            raise InvalidInputError(f"{path}: line {number}: {exc}") from exc
    logger.info(f"Read {len(samples)} samples (p={p}, K={k}) from {path}")
    return samples
