"""Cardinality estimators and the conversions between cardinality and
containment-rate estimation.

Any callable ``Query -> float`` works as a cardinality estimator and any
``(Query, Query) -> float`` as a rate estimator. ``crd2cnt`` turns a
cardinality estimator into a rate estimator through the intersection query;
``estimate_cardinality`` goes the other way using a pool of previously
executed queries with known result sizes. Composing the two around a base
estimator yields its self-improved version.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .qgen import LabeledQuery, connected_table_subsets, induced_joins
from .querymodel import Query, canonicalize, from_key, intersect, make_query
from .querymodel import from_dict as query_from_dict
from .querymodel import to_dict as query_to_dict
from .relstore import Database, cardinality, schema_hash

CardEstimator = Callable[[Query], float]
RateEstimator = Callable[[Query, Query], float]

DEFAULT_EPSILON = 0.01
TRIM_FRACTION = 0.125


class ExactCardinality:
    """Brute-force oracle: executes the query, memoizing result sizes."""

    def __init__(self, db: Database):
        self.db = db
        self._cache: dict[Query, float] = {}

    def __call__(self, q: Query) -> float:
        q = canonicalize(q)
        if q not in self._cache:
            self._cache[q] = float(cardinality(q, self.db))
        return self._cache[q]


class IndependenceCardinality:
    """Textbook baseline assuming independent columns and uncorrelated
    joins: row-count product scaled by per-predicate and per-join
    selectivities, floored at 1."""

    def __init__(self, db: Database):
        self.db = db

    def _pred_selectivity(self, col: str, op: str, val: int) -> float:
        st = self.db.column_stats[col]
        if st.count == 0 or st.distinct == 0:
            return 0.0
        if op == "=":
            return 1.0 / st.distinct
        lo, hi = st.min, st.max
        if hi == lo:
            only = lo
            return 1.0 if (only < val if op == "<" else only > val) else 0.0
        if op == "<":
            frac = (val - lo) / (hi - lo)
        else:
            frac = (hi - val) / (hi - lo)
        return min(max(frac, 0.0), 1.0)

    def _join_selectivity(self, left: str, right: str) -> float:
        sl, sr = self.db.column_stats[left], self.db.column_stats[right]
        if sl.count == 0 or sr.count == 0:
            return 0.0
        return 1.0 / max(sl.distinct, sr.distinct)

    def __call__(self, q: Query) -> float:
        q = canonicalize(q)
        est = 1.0
        for t in q.tables:
            est *= self.db.row_count(t)
        for col, op, val in q.preds:
            est *= self._pred_selectivity(col, op, val)
        for left, right in q.joins:
            est *= self._join_selectivity(left, right)
        return max(est, 1.0)


def crd2cnt(m: CardEstimator) -> RateEstimator:
    """Rate estimator derived from a cardinality estimator: size of the
    intersection query over the size of the first query, 0 when the first
    query is estimated empty. Inexact estimators may emit rates above 1;
    they are passed through unclamped."""

    def rate(q1: Query, q2: Query) -> float:
        denom = m(q1)
        if denom == 0:
            return 0.0
        return m(intersect(q1, q2)) / denom

    return rate


# ---------------------------------------------------------------------------
# final functions

def final_median(ests: list[float]) -> float:
    return float(np.median(ests))


def final_mean(ests: list[float]) -> float:
    return float(np.mean(ests))


def final_trimmed_mean(ests: list[float]) -> float:
    """Mean after dropping ceil(12.5%) of the values from each end; falls
    back to the plain mean when trimming would drop everything."""
    k = math.ceil(TRIM_FRACTION * len(ests))
    kept = sorted(ests)[k:len(ests) - k]
    if not kept:
        return final_mean(ests)
    return float(np.mean(kept))


FINAL_FNS: dict[str, Callable[[list[float]], float]] = {
    "median": final_median,
    "mean": final_mean,
    "trimmed_mean": final_trimmed_mean,
}


def _resolve_final(final) -> Callable[[list[float]], float]:
    if callable(final):
        return final
    try:
        return FINAL_FNS[final]
    except KeyError:
        raise ConfigError(f"unknown final function {final!r}; "
                          f"choose from {sorted(FINAL_FNS)}") from None


# ---------------------------------------------------------------------------
# queries pool

@dataclass
class QueryPool:
    """Previously executed queries with known cardinalities, grouped by
    FROM clause so estimation only ever sees comparable records. epsilon is
    the applicability threshold on the new-in-old containment rate;
    final_fn names how per-record estimates are combined."""
    groups: "OrderedDict[str, list[LabeledQuery]]" = field(default_factory=OrderedDict)
    epsilon: float = DEFAULT_EPSILON
    final_fn: str = "median"
    schema_hash: str | None = None

    def add(self, rec: LabeledQuery) -> None:
        self.groups.setdefault(from_key(rec.query), []).append(rec)

    def records_for(self, q: Query) -> list[LabeledQuery]:
        return self.groups.get(from_key(q), [])

    def records(self) -> list[LabeledQuery]:
        return [rec for group in self.groups.values() for rec in group]

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())


def stratify_records(records: list[LabeledQuery], total: int) -> list[LabeledQuery]:
    """Round-robin selection across FROM groups so bucket sizes differ by
    at most one (as far as group sizes allow)."""
    groups: "OrderedDict[str, list[LabeledQuery]]" = OrderedDict()
    for rec in records:
        groups.setdefault(from_key(rec.query), []).append(rec)
    out: list[LabeledQuery] = []
    depth = 0
    while len(out) < total:
        added = False
        for g in groups.values():
            if depth < len(g) and len(out) < total:
                out.append(g[depth])
                added = True
        if not added:
            break
        depth += 1
    return out


def build_pool(records: list[LabeledQuery],
               epsilon: float = DEFAULT_EPSILON,
               final_fn: str = "median",
               schema_hash: str | None = None,
               coverage_db: Database | None = None,
               stratify_to: int | None = None) -> QueryPool:
    """Index records by FROM clause. With ``coverage_db``, a predicate-free
    query (exact cardinality) is appended for every connected FROM clause of
    its schema that lacks one. ``stratify_to`` caps the pool at that many
    records, spread evenly over FROM groups, before coverage is applied."""
    _resolve_final(final_fn if not callable(final_fn) else "median")
    if stratify_to is not None:
        records = stratify_records(records, stratify_to)
    pool = QueryPool(epsilon=epsilon, final_fn=final_fn, schema_hash=schema_hash)
    for rec in records:
        pool.add(LabeledQuery(canonicalize(rec.query), rec.card))
    if coverage_db is not None:
        schema = coverage_db.schema
        if pool.schema_hash is None:
            pool.schema_hash = schema_hash_of(coverage_db)
        for tables in connected_table_subsets(schema, len(schema.tables)):
            bare = canonicalize(make_query(tables, induced_joins(schema, tables), ()))
            group = pool.groups.get(from_key(bare), [])
            if not any(rec.query == bare for rec in group):
                pool.add(LabeledQuery(bare, cardinality(bare, coverage_db)))
    return pool


def schema_hash_of(db: Database) -> str:
    return schema_hash(db.schema)


def save_pool(path: str | Path, pool: QueryPool) -> None:
    def dump(obj) -> str:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    lines = [dump({"kind": "pool", "format": 1, "epsilon": pool.epsilon,
                   "final_fn": pool.final_fn, "schema_hash": pool.schema_hash,
                   "n_records": len(pool)})]
    for rec in pool.records():
        lines.append(dump({"query": query_to_dict(rec.query), "card": rec.card}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_pool(path: str | Path) -> QueryPool:
    try:
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0]) if lines else {}
        if header.get("kind") != "pool":
            raise DataError(f"pool {path}: missing header line")
        records = [LabeledQuery(query_from_dict(rec["query"]), int(rec["card"]))
                   for rec in map(json.loads, lines[1:])]
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed pool {path}: {exc}") from exc
    if header.get("n_records") != len(records):
        raise DataError(f"pool {path}: header count disagrees with records")
    return build_pool(records,
                      epsilon=float(header.get("epsilon", DEFAULT_EPSILON)),
                      final_fn=header.get("final_fn", "median"),
                      schema_hash=header.get("schema_hash"))


# ---------------------------------------------------------------------------
# rate -> cardinality

def cnt2crd_single(rate_fn: RateEstimator, q_new: Query, rec: LabeledQuery,
                   floor: float = 0.0) -> float | None:
    """One pool record's cardinality estimate for q_new:
    rate(old, new) / rate(new, old) * |old|. Returns None (not applicable)
    when the new-in-old rate does not exceed the floor."""
    y_rate = rate_fn(q_new, rec.query)
    if y_rate <= floor:
        return None
    x_rate = rate_fn(rec.query, q_new)
    return x_rate / y_rate * rec.card


def record_estimates(q: Query, pool: QueryPool, rate_fn: RateEstimator) -> list[float]:
    """Applicable per-record estimates for q, each floored at one row."""
    out = []
    for rec in pool.records_for(q):
        est = cnt2crd_single(rate_fn, q, rec, pool.epsilon)
        if est is not None:
            out.append(max(est, 1.0))
    return out


def estimate_cardinality(q_new: Query, pool: QueryPool, rate_fn: RateEstimator,
                         fallback: CardEstimator | None = None) -> float | None:
    """Pool-based cardinality estimate: combine the applicable per-record
    estimates with the pool's final function. Falls back when no record
    applies; without a fallback, returns None in that case."""
    ests = record_estimates(q_new, pool, rate_fn)
    if not ests:
        return fallback(q_new) if fallback is not None else None
    return _resolve_final(pool.final_fn)(ests)


def pool_estimator(pool: QueryPool, rate_fn: RateEstimator,
                   fallback: CardEstimator | None = None) -> CardEstimator:
    """Bind a pool and rate estimator into a plain cardinality estimator."""

    def estimator(q: Query) -> float:
        est = estimate_cardinality(q, pool, rate_fn, fallback)
        if est is None:
            raise DataError(f"no applicable pool record for {from_key(q)} "
                            "and no fallback estimator")
        return est

    return estimator


def improved_estimator(m: CardEstimator, pool: QueryPool) -> CardEstimator:
    """Self-improvement loop: route the base estimator through rate space
    and back via the pool, keeping the base answer when the pool has no
    applicable record."""
    return pool_estimator(pool, crd2cnt(m), fallback=m)
