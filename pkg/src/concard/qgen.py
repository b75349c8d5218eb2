"""Workload generation: random conjunctive queries, local perturbations,
and labeled same-FROM query pairs for training and evaluation.

Generation runs in three steps. First, initial queries are drawn by picking
a connected subset of tables (joins induced by the schema's edges) and
attaching random predicates on non-key columns. Second, each initial query
is perturbed a few times by flipping an operator, redrawing a constant, or
adding a predicate, which keeps the FROM clause fixed. Third, queries are
paired within a FROM group, labeled with their true containment rate on a
database, and split into train and test portions.
"""

from __future__ import annotations

import itertools
import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import DataError, GenerationError
from .querymodel import OPS, Query, canonicalize, from_key, make_query
from .querymodel import from_dict as query_from_dict
from .querymodel import to_dict as query_to_dict
from .relstore import Database, Schema, execute, schema_hash, validate_query
from .seeding import substream


@dataclass(frozen=True)
class LabeledPair:
    q1: Query
    q2: Query
    rate: float  # fraction of q1's result rows also produced by q2


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    card: int


@dataclass
class GenConfig:
    n_initial: int = 200
    perturbations_per_query: int = 4
    cross_pair_factor: float = 2.0   # extra random same-FROM pairs, per initial query
    max_joins: int = 2
    train_frac: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.n_initial < 1:
            raise ValueError("n_initial must be positive")
        if self.perturbations_per_query < 0 or self.cross_pair_factor < 0:
            raise ValueError("perturbation and cross-pair knobs must be >= 0")
        if self.max_joins < 0:
            raise ValueError("max_joins must be >= 0")
        if not (0.0 < self.train_frac < 1.0):
            raise ValueError("train_frac must lie in (0, 1)")


# ---------------------------------------------------------------------------
# step 1: initial queries

def _table_adjacency(schema: Schema) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {t: set() for t in schema.table_names()}
    for left, right in schema.join_edges:
        lt, rt = left.split(".")[0], right.split(".")[0]
        adj[lt].add(rt)
        adj[rt].add(lt)
    return adj

def _is_connected(tables: tuple[str, ...], adj: dict[str, set[str]]) -> bool:
    seen = {tables[0]}
    frontier = [tables[0]]
    members = set(tables)
    while frontier:
        nxt = frontier.pop()
        for nb in adj[nxt] & members:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    return len(seen) == len(tables)


def induced_joins(schema: Schema, tables: Iterable[str]) -> tuple[tuple[str, str], ...]:
    """All schema join edges whose two tables both appear in ``tables``."""
    members = set(tables)
    out = []
    for left, right in schema.join_edges:
        if left.split(".")[0] in members and right.split(".")[0] in members:
            out.append((left, right))
    return tuple(out)


def connected_table_subsets(schema: Schema, max_tables: int,
                            max_joins: int | None = None) -> list[tuple[str, ...]]:
    """Every connected table subset of size 1..max_tables, sorted. Subsets
    whose induced joins exceed max_joins are dropped (cyclic schemas)."""
    names = schema.table_names()
    adj = _table_adjacency(schema)
    subsets = []
    for size in range(1, min(max_tables, len(names)) + 1):
        for combo in itertools.combinations(names, size):
            if not _is_connected(combo, adj):
                continue
            if max_joins is not None and len(induced_joins(schema, combo)) > max_joins:
                continue
            subsets.append(combo)
    return subsets


def _stored_range(db: Database, qualified: str) -> tuple[int, int] | None:
    st = db.column_stats[qualified]
    if st.count == 0 or st.min is None:
        return None
    return st.min, st.max


def _draw_value(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _random_query(db: Database, subsets: list[tuple[str, ...]],
                  rng: np.random.Generator) -> Query:
    schema = db.schema
    tables = subsets[int(rng.integers(len(subsets)))]
    joins = induced_joins(schema, tables)
    preds = []
    for tname in tables:
        cols = [c for c in schema.non_key_columns(tname)
                if _stored_range(db, f"{tname}.{c.name}") is not None]
        if not cols:
            continue
        k = int(rng.integers(0, len(cols) + 1))
        picked = rng.choice(len(cols), size=k, replace=False)
        for ci in sorted(int(c) for c in picked):
            col = cols[ci]
            lo, hi = _stored_range(db, f"{tname}.{col.name}")
            op = OPS[int(rng.integers(len(OPS)))]
            preds.append((f"{tname}.{col.name}", op, _draw_value(rng, lo, hi)))
    return canonicalize(make_query(tables, joins, preds))


def gen_initial_queries(db: Database, n: int, seed: int,
                        max_joins: int = 2) -> list[Query]:
    """n random queries drawn uniformly over connected FROM clauses with at
    most max_joins joins; predicate constants come from each column's stored
    value range."""
    subsets = connected_table_subsets(db.schema, max_joins + 1, max_joins)
    if not subsets:
        raise GenerationError("schema admits no table subsets under the join limit")
    rng = substream(seed, "gen:init")
    queries = [_random_query(db, subsets, rng) for _ in range(n)]
    for q in queries:
        validate_query(q, db.schema)
    return queries


# ---------------------------------------------------------------------------
# step 2: perturbation

def _perturb_once(q: Query, db: Database, rng: np.random.Generator) -> Query:
    schema = db.schema
    addable = [(t, c) for t in q.tables for c in schema.non_key_columns(t)
               if _stored_range(db, f"{t}.{c.name}") is not None]
    moves = []
    if addable:
        moves.append("add")
    if q.preds:
        moves += ["flip", "redraw"]
    if not moves:
        raise GenerationError(f"query over {from_key(q)} admits no perturbation")
    move = moves[int(rng.integers(len(moves)))]
    preds = list(q.preds)
    if move == "flip":
        i = int(rng.integers(len(preds)))
        col, op, val = preds[i]
        others = [o for o in OPS if o != op]
        preds[i] = (col, others[int(rng.integers(len(others)))], val)
    elif move == "redraw":
        i = int(rng.integers(len(preds)))
        col, op, _ = preds[i]
        lo, hi = _stored_range(db, col) or (0, 0)
        preds[i] = (col, op, _draw_value(rng, lo, hi))
    else:
        t, col = addable[int(rng.integers(len(addable)))]
        lo, hi = _stored_range(db, f"{t}.{col.name}")
        op = OPS[int(rng.integers(len(OPS)))]
        preds.append((f"{t}.{col.name}", op, _draw_value(rng, lo, hi)))
    return canonicalize(replace(q, preds=tuple(preds)))


def perturb(q: Query, db: Database, n: int, rng: np.random.Generator,
            max_tries: int = 64) -> list[Query]:
    """n variants of q sharing its FROM and join clauses, each differing
    from q in at least one predicate. Moves: flip an operator, redraw a
    constant, add a predicate."""
    out = []
    for _ in range(n):
        for _ in range(max_tries):
            p = _perturb_once(q, db, rng)
            if p != q:
                out.append(p)
                break
        else:
            raise GenerationError(f"could not perturb query over {from_key(q)} "
                                  f"after {max_tries} tries")
    return out


def gen_perturbed(queries: list[Query], db: Database, seed: int,
                  per_query: int) -> dict[Query, list[Query]]:
    rng = substream(seed, "gen:perturb")
    return {q: perturb(q, db, per_query, rng) for q in queries}


# ---------------------------------------------------------------------------
# step 3: pairing, labeling, split

def pair_queries(initial: list[Query], perturbed: dict[Query, list[Query]],
                 seed: int, cross_quota: int) -> list[tuple[Query, Query]]:
    """Ordered same-FROM pairs: each initial query with each of its
    perturbations in both directions, then up to ``cross_quota`` random
    same-FROM pairs across the whole set. Duplicates are dropped."""
    pairs: "OrderedDict[tuple[Query, Query], None]" = OrderedDict()
    for q in initial:
        for p in perturbed.get(q, []):
            pairs.setdefault((q, p))
            pairs.setdefault((p, q))

    universe = list(OrderedDict.fromkeys(
        itertools.chain(initial, *(perturbed.get(q, []) for q in initial))))
    rng = substream(seed, "gen:pairs")
    added = 0
    attempts = 0
    max_attempts = max(20 * cross_quota, 100)
    while added < cross_quota and attempts < max_attempts and len(universe) > 1:
        attempts += 1
        i, j = rng.integers(len(universe), size=2)
        a, b = universe[int(i)], universe[int(j)]
        if a == b or from_key(a) != from_key(b):
            continue
        if (a, b) not in pairs:
            pairs.setdefault((a, b))
            added += 1
    return list(pairs)


class ResultCache:
    """LRU over executed result-row sets, keyed by canonical query."""

    def __init__(self, db: Database, cap: int = 1024):
        self.db = db
        self.cap = cap
        self._store: "OrderedDict[Query, frozenset]" = OrderedDict()
        self._cards: dict[Query, int] = {}

    def rows(self, q: Query) -> frozenset:
        if q in self._store:
            self._store.move_to_end(q)
            return self._store[q]
        rows = execute(q, self.db).rows
        self._store[q] = rows
        self._cards[q] = len(rows)
        if len(self._store) > self.cap:
            self._store.popitem(last=False)
        return rows

    def card(self, q: Query) -> int:
        if q not in self._cards:
            self.rows(q)
        return self._cards[q]

    def rate(self, q1: Query, q2: Query) -> float:
        r1 = self.rows(q1)
        if not r1:
            return 0.0
        return len(r1 & self.rows(q2)) / len(r1)


def label_pairs(pairs: list[tuple[Query, Query]], db: Database,
                cache: ResultCache | None = None) -> list[LabeledPair]:
    cache = cache or ResultCache(db)
    # group by FROM so the cache stays warm
    order = sorted(range(len(pairs)), key=lambda i: (from_key(pairs[i][0]), i))
    labeled: list[LabeledPair | None] = [None] * len(pairs)
    for i in order:
        q1, q2 = pairs[i]
        labeled[i] = LabeledPair(q1, q2, cache.rate(q1, q2))
    return labeled  # type: ignore[return-value]


def split_pairs(labeled: list[LabeledPair], seed: int,
                train_frac: float = 0.8) -> tuple[list[LabeledPair], list[LabeledPair]]:
    rng = substream(seed, "gen:split")
    order = rng.permutation(len(labeled))
    shuffled = [labeled[int(i)] for i in order]
    cut = int(len(shuffled) * train_frac)
    return shuffled[:cut], shuffled[cut:]


def label_dataset(pairs: list[tuple[Query, Query]], db: Database, seed: int,
                  train_frac: float = 0.8) -> tuple[list[LabeledPair], list[LabeledPair]]:
    """Label pairs with their true rates on db and split train/validation."""
    return split_pairs(label_pairs(pairs, db), seed, train_frac)


@dataclass
class Workload:
    schema_hash: str
    seed: int | None = None
    train: list[LabeledPair] = field(default_factory=list)
    test: list[LabeledPair] = field(default_factory=list)
    queries: list[LabeledQuery] = field(default_factory=list)  # distinct, with true cards


def generate_workload(db: Database, cfg: GenConfig) -> Workload:
    """Full pipeline: initial queries, perturbations, labeled pair split,
    plus every distinct query labeled with its cardinality."""
    cfg.validate()
    initial = gen_initial_queries(db, cfg.n_initial, cfg.seed, cfg.max_joins)
    perturbed = gen_perturbed(initial, db, cfg.seed, cfg.perturbations_per_query)
    quota = int(cfg.cross_pair_factor * cfg.n_initial)
    pairs = pair_queries(initial, perturbed, cfg.seed, quota)
    cache = ResultCache(db)
    labeled = label_pairs(pairs, db, cache)
    train, test = split_pairs(labeled, cfg.seed, cfg.train_frac)

    distinct = list(OrderedDict.fromkeys(
        itertools.chain(initial, *(perturbed[q] for q in initial))))
    queries = [LabeledQuery(q, cache.card(q)) for q in distinct]
    return Workload(schema_hash(db.schema), cfg.seed, train, test, queries)


# ---------------------------------------------------------------------------
# files: one JSON object per line, header first

def save_workload(path: str | Path, wl: Workload) -> None:
    def dump(obj) -> str:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    lines = [dump({"kind": "workload", "format": 1, "schema_hash": wl.schema_hash,
                   "seed": wl.seed, "n_train": len(wl.train), "n_test": len(wl.test),
                   "n_queries": len(wl.queries)})]
    for split, pairs in (("train", wl.train), ("test", wl.test)):
        for p in pairs:
            lines.append(dump({"kind": "pair", "split": split,
                               "q1": query_to_dict(p.q1), "q2": query_to_dict(p.q2),
                               "rate": p.rate}))
    for lq in wl.queries:
        lines.append(dump({"kind": "query", "query": query_to_dict(lq.query),
                           "card": lq.card}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_workload(path: str | Path) -> Workload:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read workload {path}: {exc}") from exc
    if not lines:
        raise DataError(f"workload {path} is empty")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != "workload":
            raise DataError(f"workload {path}: missing header line")
        wl = Workload(schema_hash=header["schema_hash"], seed=header.get("seed"))
        for line in lines[1:]:
            rec = json.loads(line)
            if rec["kind"] == "pair":
                pair = LabeledPair(query_from_dict(rec["q1"]),
                                   query_from_dict(rec["q2"]), float(rec["rate"]))
                (wl.train if rec["split"] == "train" else wl.test).append(pair)
            elif rec["kind"] == "query":
                wl.queries.append(LabeledQuery(query_from_dict(rec["query"]),
                                               int(rec["card"])))
            else:
                raise DataError(f"workload {path}: unknown record kind {rec['kind']!r}")
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed workload {path}: {exc}") from exc
    if len(wl.train) != header.get("n_train") or len(wl.test) != header.get("n_test"):
        raise DataError(f"workload {path}: header counts disagree with records")
    return wl
