"""Observed-data container, CSV ingestion/emission and sample splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SPLIT_FLOOR = 50

_TREATMENT_TOKENS = {"0": 0, "1": 1, "0.0": 0, "1.0": 1}


class DataError(ValueError):
    """Raised when input data violate the dataset contract."""


@dataclass(frozen=True)
class Dataset:
    """Covariates ``v`` (n x p), binary treatment ``a`` and outcome ``y``.

    Arrays are copied and made read-only on construction.
    """

    v: np.ndarray
    a: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        a_raw = np.asarray(self.a)
        y = np.array(self.y, dtype=float).ravel()
        if v.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n = v.shape[0]
        if n < 2:
            raise DataError("need at least two units")
        if a_raw.shape != (n,) or y.shape != (n,):
            raise DataError("v, a and y must have the same number of rows")
        if not np.all(np.isin(a_raw, (0, 1))):
            raise DataError("non-binary treatment value")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(y))):
            raise DataError("non-finite entries in covariates or outcome")
        a = a_raw.astype(np.int8)
        names = tuple(self.names) or tuple(f"v{j + 1}" for j in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise DataError("one name per covariate column required")
        for arr in (v, a, y):
            arr.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def p(self) -> int:
        return self.v.shape[1]

    @property
    def w(self) -> np.ndarray:
        """Design matrix with a leading intercept column."""
        return np.column_stack([np.ones(self.n), self.v])

    @property
    def n_treated(self) -> int:
        return int(self.a.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.v[idx], self.a[idx], self.y[idx], self.names)

    def require_arms(self, m: int = 1) -> None:
        if min(self.n_treated, self.n_control) < m:
            raise DataError(
                f"each arm needs at least {m} unit(s); got "
                f"{self.n_control} control and {self.n_treated} treated"
            )


@dataclass(frozen=True)
class SplitIndex:
    """Partition into a nuisance-fitting part and an estimation part."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    seed: int

    @property
    def m_n(self) -> int:
        return len(self.idx_a)

    @property
    def n_eff(self) -> int:
        return len(self.idx_b)


def split_sample(d: Dataset, frac: float, seed: int, floor: int = SPLIT_FLOOR) -> SplitIndex:
    """Draw a uniformly random split with ``round(frac * n)`` units in part A.

    Part A is used to fit nuisances, part B for estimation. Deterministic
    for a fixed ``seed``.
    """
    if not 0.0 < frac < 1.0:
        raise DataError("split fraction must lie in (0, 1)")
    m_n = int(math.floor(frac * d.n + 0.5))
    if m_n < floor:
        raise DataError(f"split leaves {m_n} units for nuisance fitting; floor is {floor}")
    if m_n >= d.n:
        raise DataError("split leaves no units for estimation")
    perm = np.random.default_rng(seed).permutation(d.n)
    idx_a = np.sort(perm[:m_n])
    idx_b = np.sort(perm[m_n:])
    a_b = d.a[idx_b]
    if a_b.min() == a_b.max():
        raise DataError("split leaves an arm empty in the estimation part")
    return SplitIndex(idx_a, idx_b, seed)


def _parse_float(token: str, row: int, col: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"non-numeric cell {token!r} in column {col!r}, row {row}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell {token!r} in column {col!r}, row {row}")
    return value


def load_csv(path, schema: Mapping[str, object] | None = None) -> Dataset:
    """Read a dataset from a header-row CSV file.

    Parameters
    ----------
    path : str or Path
        UTF-8, comma separated, one unit per row.
    schema : mapping, optional
        ``treatment`` and ``outcome`` column names (defaults ``"a"`` and
        ``"y"``) and ``covariates``, a list of column names. Without
        ``covariates`` every other column except ``ignore`` is used.
    """
    schema = dict(schema or {})
    t_col = schema.get("treatment", "a")
    y_col = schema.get("outcome", "y")
    ignore = set(schema.get("ignore", ()))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataError("file has a header but no data rows")
    for col in (t_col, y_col):
        if col not in header:
            raise DataError(f"missing column {col!r}")
    covariates = schema.get("covariates")
    if covariates is None:
        covariates = [h for h in header if h not in (t_col, y_col) and h not in ignore]
    covariates = list(covariates)
    if not covariates:
        raise DataError("no covariate columns")
    for col in covariates:
        if col not in header:
            raise DataError(f"missing column {col!r}")
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    v = np.empty((n, len(covariates)))
    a = np.empty(n, dtype=np.int8)
    y = np.empty(n)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 1} has {len(row)} fields, expected {len(header)}")
        token = row[pos[t_col]].strip()
        if token not in _TREATMENT_TOKENS:
            raise DataError(f"non-binary treatment {token!r} in row {i + 1}")
        a[i] = _TREATMENT_TOKENS[token]
        y[i] = _parse_float(row[pos[y_col]].strip(), i + 1, y_col)
        for j, col in enumerate(covariates):
            v[i, j] = _parse_float(row[pos[col]].strip(), i + 1, col)
    return Dataset(v, a, y, tuple(covariates))


def write_csv(
    d: Dataset,
    path,
    extra: Mapping[str, Sequence[float]] | None = None,
    treatment: str = "a",
    outcome: str = "y",
) -> None:
    """Write ``d`` with covariates first, then treatment and outcome.

    Floats use ``repr`` so a read-back reproduces every value exactly.
    ``extra`` appends derived columns such as fitted propensities.
    """
    extra = dict(extra or {})
    for name, col in extra.items():
        if len(col) != d.n:
            raise DataError(f"derived column {name!r} has wrong length")
    header = list(d.names) + [treatment, outcome] + list(extra)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(d.n):
            row = [repr(float(x)) for x in d.v[i]]
            row += [str(int(d.a[i])), repr(float(d.y[i]))]
            row += [repr(float(col[i])) for col in extra.values()]
            writer.writerow(row)
