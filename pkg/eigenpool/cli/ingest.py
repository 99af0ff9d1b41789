"""Reading and writing grouped data files.

Two formats are understood:

* ``raw``: CSV with a header row, first column ``group``, then p numeric
  columns, one observation per row. Empty fields are missing values.
* ``ssq``: per-group blocks, a ``label,n`` line followed by p rows of the p x p
  centered sum-of-squares matrix. Blank lines and ``#`` comments are skipped.
"""

import csv
from pathlib import Path
from typing import List, Literal, Sequence, Union

import numpy as np
import pandas as pd

from eigenpool.copula.schemas import OrdinalTable
from eigenpool.core.exceptions import InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.hiermodel.schemas import GroupData

logger = get_logger("cli.ingest")

DataFormat = Literal["raw", "ssq"]
SYMMETRY_TOL = 1e-8


# --- raw observations ---
def _check_field_counts(path: Path) -> None:
    """Every non-blank row must have as many fields as the header; empty fields still count."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return
        for fields in reader:
            if fields and len(fields) != len(header):
                raise InvalidInputError(
                    f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(fields)}"
                )


def read_raw(path: Union[str, Path]) -> OrdinalTable:
    path = Path(path)
    _check_field_counts(path)
    try:
        frame = pd.read_csv(path, dtype={"group": str}, float_precision="round_trip", skip_blank_lines=True)
    except pd.errors.ParserError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise InvalidInputError(f"{path}: file is empty") from exc
    if frame.columns.size < 2 or frame.columns[0] != "group":
        raise InvalidInputError(f"{path}: first column must be 'group' followed by the variables")
    values = frame.iloc[:, 1:]
    numeric = values.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & values.notna()
    if bad.to_numpy().any():
        row = int(np.flatnonzero(bad.to_numpy().any(axis=1))[0])
        # header is line 1
        raise InvalidInputError(f"{path}: non-numeric value on line {row + 2}")
    if frame["group"].isna().any():
        row = int(np.flatnonzero(frame["group"].isna().to_numpy())[0])
        raise InvalidInputError(f"{path}: missing group label on line {row + 2}")
    labels = list(pd.unique(frame["group"]))
    groups = [numeric[frame["group"] == label].to_numpy(dtype=float) for label in labels]
    table = OrdinalTable(groups=groups, labels=labels, columns=[str(c) for c in frame.columns[1:]])
    logger.info(f"Read {frame.shape[0]} observations in {table.k} groups of dimension {table.dim} from {path}")
    return table


def raw_to_groups(table: OrdinalTable, min_n: int = 2) -> List[GroupData]:
    groups = []
    for k, y in enumerate(table.groups):
        label = table.group_label(k)
        if np.isnan(y).any():
            raise InvalidInputError(f"group '{label}' has missing values; only the copula model handles them")
        if y.shape[0] < min_n:
            raise InvalidInputError(
                f"group '{label}' has {y.shape[0]} observation(s); the Gaussian model needs at least {min_n}"
            )
        groups.append(GroupData.from_observations(y, label=label))
    return groups


def write_raw(table: OrdinalTable, path: Union[str, Path]) -> None:
    names = table.columns or [f"y{j + 1}" for j in range(table.dim)]
    frames = []
    for k, y in enumerate(table.groups):
        frame = pd.DataFrame(y, columns=names)
        frame.insert(0, "group", table.group_label(k))
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# --- sum-of-squares blocks ---
def _fields(line: str) -> List[str]:
    return [field.strip() for field in line.split(",")]


def read_ssq(path: Union[str, Path]) -> List[GroupData]:
    path = Path(path)
    lines = [
        (number, line.strip())
        for number, line in enumerate(path.read_text().splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    groups: List[GroupData] = []
    seen = set()
    p = None
    cursor = 0
    while cursor < len(lines):
        number, header = lines[cursor]
        fields = _fields(header)
        if len(fields) != 2:
            raise InvalidInputError(f"{path}: line {number}: expected a 'group,n' header")
        label = fields[0]
        try:
            n = int(fields[1])
        except ValueError as exc:
            raise InvalidInputError(f"{path}: line {number}: sample size must be an integer") from exc
        if label in seen:
            raise InvalidInputError(f"{path}: line {number}: duplicate group '{label}'")
        seen.add(label)
        if cursor + 1 >= len(lines):
            raise InvalidInputError(f"{path}: line {number}: group '{label}' has no matrix rows")
        if p is None:
            p = len(_fields(lines[cursor + 1][1]))
        block = lines[cursor + 1 : cursor + 1 + p]
        if len(block) != p:
            raise InvalidInputError(f"{path}: group '{label}' needs {p} matrix rows")
        rows = []
        for row_number, row in block:
            row_fields = _fields(row)
            if len(row_fields) != p:
                raise InvalidInputError(f"{path}: line {row_number}: expected {p} values, got {len(row_fields)}")
            try:
                rows.append([float(x) for x in row_fields])
            except ValueError as exc:
                raise InvalidInputError(f"{path}: line {row_number}: non-numeric value") from exc
        s = np.array(rows)
        scale = max(1.0, float(np.max(np.abs(s))))
        if np.max(np.abs(s - s.T)) > SYMMETRY_TOL * scale:
            raise InvalidInputError(f"{path}: group '{label}' has an asymmetric matrix")
        try:
            groups.append(GroupData(n=n, s=0.5 * (s + s.T), label=label))
        except ValueError as exc:
            raise InvalidInputError(f"{path}: group '{label}': {exc}") from exc
        cursor += 1 + p
    if not groups:
        raise InvalidInputError(f"{path}: no groups found")
    logger.info(f"Read {len(groups)} sum-of-squares blocks of dimension {p} from {path}")
    return groups


def write_ssq(groups: Sequence[GroupData], path: Union[str, Path]) -> None:
    lines = []
    for k, group in enumerate(groups):
        lines.append(f"{group.label or f'g{k + 1}'},{group.n}")
        lines.extend(",".join("%.17g" % x for x in row) for row in np.asarray(group.s))
    Path(path).write_text("\n".join(lines) + "\n")


# --- entry point ---
def ingest(
    path: Union[str, Path], fmt: DataFormat = "ssq", copula: bool = False
) -> Union[List[GroupData], OrdinalTable]:
    """GroupData list for the Gaussian model, OrdinalTable for the copula model."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"data file not found: {path}")
    if fmt == "ssq":
        if copula:
            raise InvalidInputError("the copula model needs raw observations")
        return read_ssq(path)
    if fmt != "raw":
        raise InvalidInputError(f"unknown data format '{fmt}'")
    table = read_raw(path)
    return table if copula else raw_to_groups(table)
