"""Query encoding as a set of fixed-width segmented feature vectors.

Every element of a query (each table, join, predicate) becomes one vector of
width L = #tables + 3 * #columns + #ops + 1, laid out as consecutive
segments: table one-hot | join-left one-hot | join-right one-hot |
predicate-column one-hot | operator one-hot | normalized literal. Segments
not used by an element's kind stay zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FeaturizationError
from .querymodel import OPS, Query, canonicalize
from .relstore import Schema, schema_hash


@dataclass(frozen=True)
class FeatureSpace:
    """Index maps and segment layout for one schema.

    Tables and qualified columns are indexed in sorted order, operators in
    the fixed order (<, =, >); the layout is therefore identical across runs
    for a given schema, which keeps checkpoints valid.
    """
    schema_hash: str
    table_index: dict[str, int]
    column_index: dict[str, int]
    col_ranges: dict[str, tuple[int, int]]  # non-key columns only

    @property
    def n_tables(self) -> int:
        return len(self.table_index)

    @property
    def n_columns(self) -> int:
        return len(self.column_index)

    @property
    def n_ops(self) -> int:
        return len(OPS)

    @property
    def width(self) -> int:
        return self.n_tables + 3 * self.n_columns + self.n_ops + 1

    # segment offsets
    @property
    def join_left_off(self) -> int:
        return self.n_tables

    @property
    def join_right_off(self) -> int:
        return self.n_tables + self.n_columns

    @property
    def pred_col_off(self) -> int:
        return self.n_tables + 2 * self.n_columns

    @property
    def op_off(self) -> int:
        return self.n_tables + 3 * self.n_columns

    @property
    def value_off(self) -> int:
        return self.n_tables + 3 * self.n_columns + self.n_ops


def build_feature_space(schema: Schema) -> FeatureSpace:
    tables = sorted(t.name for t in schema.tables)
    columns = sorted(f"{t.name}.{c}" for t in schema.tables for c in t.column_names())
    ranges = {f"{t.name}.{c.name}": (c.min, c.max) for t in schema.tables for c in t.cols}
    return FeatureSpace(
        schema_hash=schema_hash(schema),
        table_index={t: i for i, t in enumerate(tables)},
        column_index={c: i for i, c in enumerate(columns)},
        col_ranges=ranges,
    )


def normalize_value(space: FeatureSpace, column: str, v: int) -> float:
    """(v - min) / (max - min) clamped to [0, 1]; 0.5 for a degenerate range."""
    if column not in space.col_ranges:
        raise FeaturizationError(f"no value range for column {column!r}")
    lo, hi = space.col_ranges[column]
    if lo == hi:
        return 0.5
    return float(min(1.0, max(0.0, (v - lo) / (hi - lo))))


def featurize(q: Query, space: FeatureSpace) -> np.ndarray:
    """Encode ``q`` as an (n, L) array with one row per table, join and
    predicate, rows in canonical order (tables, then joins, then predicates).
    """
    q = canonicalize(q)
    L = space.width
    vectors = []
    for t in q.tables:
        if t not in space.table_index:
            raise FeaturizationError(f"unknown table {t!r}")
        v = np.zeros(L)
        v[space.table_index[t]] = 1.0
        vectors.append(v)
    for a, b in q.joins:
        for col in (a, b):
            if col not in space.column_index:
                raise FeaturizationError(f"unknown column {col!r}")
        v = np.zeros(L)
        v[space.join_left_off + space.column_index[a]] = 1.0
        v[space.join_right_off + space.column_index[b]] = 1.0
        vectors.append(v)
    for col, op, val in q.preds:
        if col not in space.column_index:
            raise FeaturizationError(f"unknown column {col!r}")
        v = np.zeros(L)
        v[space.pred_col_off + space.column_index[col]] = 1.0
        v[space.op_off + OPS.index(op)] = 1.0
        v[space.value_off] = normalize_value(space, col, val)
        vectors.append(v)
    return np.asarray(vectors) if vectors else np.zeros((0, L))


def space_to_dict(space: FeatureSpace) -> dict:
    return {
        "schema_hash": space.schema_hash,
        "tables": sorted(space.table_index, key=space.table_index.get),
        "columns": sorted(space.column_index, key=space.column_index.get),
        "col_ranges": {c: list(r) for c, r in sorted(space.col_ranges.items())},
    }


def space_from_dict(d: dict) -> FeatureSpace:
    return FeatureSpace(
        schema_hash=d["schema_hash"],
        table_index={t: i for i, t in enumerate(d["tables"])},
        column_index={c: i for i, c in enumerate(d["columns"])},
        col_ranges={c: (int(lo), int(hi)) for c, (lo, hi) in d["col_ranges"].items()},
    )
