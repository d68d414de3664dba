"""Column-oriented numeric tables with explicit per-cell missingness.

All columns are float64 vectors of equal length. Missingness is carried by a
boolean mask per column (True = observed); missing cells hold NaN in the value
array so an accidental numeric use propagates loudly, but the mask is the
authority. Row order is stable under every subsetting operation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError, UnknownColumnError


def _readonly(arr):
    arr.setflags(write=False)
    return arr


def _coerce_column(name, values):
    """Return (float64 values, observed mask) for one input column."""
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise SchemaError(f"column {name!r} is not one-dimensional")
    if arr.dtype == bool:
        out = arr.astype(np.float64)
        return out, np.ones(arr.shape[0], dtype=bool)
    if np.issubdtype(arr.dtype, np.integer):
        out = arr.astype(np.float64)
        # exactness check: float64 cannot hold integers beyond 2**53
        if not np.array_equal(out.astype(arr.dtype), arr):
            raise SchemaError(f"column {name!r} has integers too large for exact float64")
        return out, np.ones(arr.shape[0], dtype=bool)
    try:
        out = arr.astype(np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"column {name!r} is not numeric: {exc}") from None
    return out, ~np.isnan(out)


@dataclass(frozen=True)
class Dataset:
    """Immutable numeric table. Build with :meth:`from_columns` or :func:`load_csv`."""

    names: tuple
    n_rows: int
    _values: dict = field(repr=False)
    _mask: dict = field(repr=False)

    @classmethod
    def from_columns(cls, columns, mask=None):
        """Build a dataset from a name -> vector mapping.

        NaN entries (and cells flagged False in the optional ``mask`` mapping)
        are treated as missing. Integer and boolean columns are coerced to
        float64 with an exactness check.
        """
        names = []
        values = {}
        observed = {}
        n_rows = None
        for name, col in columns.items():
            name = str(name)
            if not name:
                raise SchemaError("empty column name")
            if name in values:
                raise SchemaError(f"duplicate column name {name!r}")
            vals, obs = _coerce_column(name, col)
            if n_rows is None:
                n_rows = vals.shape[0]
            elif vals.shape[0] != n_rows:
                raise SchemaError(f"column {name!r} has length {vals.shape[0]}, expected {n_rows}")
            if mask is not None and name in mask:
                extra = np.asarray(mask[name], dtype=bool)
                if extra.shape != (n_rows,):
                    raise SchemaError(f"mask for {name!r} has wrong shape")
                obs = obs & extra
            vals = vals.copy()
            vals[~obs] = np.nan
            names.append(name)
            values[name] = _readonly(vals)
            observed[name] = _readonly(obs)
        if n_rows is None:
            raise SchemaError("no columns")
        return cls(tuple(names), int(n_rows), values, observed)

    def __contains__(self, name):
        return name in self._values

    def _require(self, name):
        if name not in self._values:
            raise UnknownColumnError(f"no column named {name!r}")

    def values(self, name):
        """Float64 vector for ``name``; missing cells hold NaN."""
        self._require(name)
        return self._values[name]

    def observed(self, name):
        """Boolean vector, True where ``name`` is observed."""
        self._require(name)
        return self._mask[name]

    def observed_all(self, names):
        """Boolean vector, True where every column in ``names`` is observed."""
        out = np.ones(self.n_rows, dtype=bool)
        for name in names:
            out &= self.observed(name)
        return out

    def take(self, rows):
        """Row subset (indices or boolean mask), preserving order and masks."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            if rows.shape != (self.n_rows,):
                raise SchemaError("boolean row selector has wrong length")
            rows = np.flatnonzero(rows)
        values = {n: _readonly(self._values[n][rows]) for n in self.names}
        mask = {n: _readonly(self._mask[n][rows]) for n in self.names}
        return Dataset(self.names, int(rows.shape[0]), values, mask)


def complete_cases(data, names):
    """Rows of ``data`` where every column in ``names`` is observed.

    With an empty ``names`` this is the identity. Column order and row order
    are preserved.
    """
    for name in names:
        data._require(name)
    return data.take(data.observed_all(names))


def load_csv(path, na_token="NA"):
    """Read an RFC-4180 CSV with a header row into a :class:`Dataset`.

    Cells equal to ``na_token`` (after stripping whitespace) or empty are
    missing. Every other cell must parse as a float; a parse failure names the
    1-indexed data row and the column. A parsed NaN is treated as missing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        names = [h.strip() for h in header]
        if any(not n for n in names):
            raise SchemaError(f"{path}: empty column name in header")
        if len(set(names)) != len(names):
            raise SchemaError(f"{path}: duplicate column names in header")
        cols = [[] for _ in names]
        masks = [[] for _ in names]
        for i, row in enumerate(reader, start=1):
            if len(row) != len(names):
                raise ParseError(i, "<row>", f"expected {len(names)} fields, got {len(row)}")
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell == na_token:
                    cols[j].append(math.nan)
                    masks[j].append(False)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(i, names[j], f"not a number: {cell!r}") from None
                if math.isnan(value):
                    cols[j].append(math.nan)
                    masks[j].append(False)
                else:
                    cols[j].append(value)
                    masks[j].append(True)
    columns = {n: np.asarray(c, dtype=np.float64) for n, c in zip(names, cols)}
    mask = {n: np.asarray(m, dtype=bool) for n, m in zip(names, masks)}
    return Dataset.from_columns(columns, mask)


def write_csv(data, path, na_token="NA"):
    """Write a :class:`Dataset` as CSV; 17 significant digits, NA for missing."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.names)
        values = [data.values(n) for n in data.names]
        masks = [data.observed(n) for n in data.names]
        for i in range(data.n_rows):
            writer.writerow(
                [format(v[i], ".17g") if m[i] else na_token for v, m in zip(values, masks)]
            )
