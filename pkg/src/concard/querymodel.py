"""Conjunctive queries as (tables, joins, predicates) triples.

A query is three sets: the tables in its FROM clause, the equi-join clauses
in its WHERE clause, and the column predicates in its WHERE clause. Queries
are immutable values; ``canonicalize`` produces the unique normal form used
for equality, hashing, featurization and file formats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .exceptions import ContainmentDomainError, QueryError

OPS = ("<", "=", ">")


@dataclass(frozen=True)
class Query:
    """Conjunctive SELECT * query.

    tables: table names in the FROM clause.
    joins:  (left_col, right_col) equi-join pairs, columns globally qualified
            as "table.col".
    preds:  (column, op, value) with op in {<, =, >} and integer value.
    """

    tables: tuple[str, ...]
    joins: tuple[tuple[str, str], ...]
    preds: tuple[tuple[str, str, int], ...]

    def join_count(self) -> int:
        return len(self.joins)


def _col_table(col: str) -> str:
    if "." not in col:
        raise QueryError(f"column {col!r} is not table-qualified")
    return col.split(".", 1)[0]


def make_query(tables: Iterable[str], joins: Iterable[tuple[str, str]] = (),
               preds: Iterable[tuple[str, str, int]] = ()) -> Query:
    """Build a canonical Query from loose collections."""
    return canonicalize(Query(tuple(tables), tuple((a, b) for a, b in joins),
                              tuple((c, o, int(v)) for c, o, v in preds)))


def canonicalize(q: Query) -> Query:
    """Deterministic normal form: tables sorted, joins oriented and sorted,
    predicates sorted, duplicates collapsed. Idempotent.

    Join orientation puts the lexicographically smaller qualified column on
    the left; the feature space indexes columns in the same order, so this is
    exactly "lower global column index on the left".
    """
    tables = tuple(sorted(set(q.tables)))
    if not tables:
        raise QueryError("query has no tables")
    joins = set()
    for a, b in q.joins:
        ta, tb = _col_table(a), _col_table(b)
        if ta == tb:
            raise QueryError(f"join ({a}, {b}) does not span two tables")
        if ta not in tables or tb not in tables:
            raise QueryError(f"join ({a}, {b}) references a table outside the FROM clause")
        joins.add((a, b) if a < b else (b, a))
    preds = set()
    for col, op, val in q.preds:
        if op not in OPS:
            raise QueryError(f"unknown predicate operator {op!r}")
        if _col_table(col) not in tables:
            raise QueryError(f"predicate column {col} references a table outside the FROM clause")
        preds.add((col, op, int(val)))
    return Query(tables, tuple(sorted(joins)), tuple(sorted(preds)))


def same_from(q1: Query, q2: Query) -> bool:
    """True iff the two queries have the same FROM clause (table sets)."""
    return set(q1.tables) == set(q2.tables)


def intersect(q1: Query, q2: Query) -> Query:
    """The intersection query: same FROM and joins, conjunction of both
    predicate sets. Defined only for identical FROM clauses and join sets."""
    c1, c2 = canonicalize(q1), canonicalize(q2)
    if c1.tables != c2.tables:
        raise ContainmentDomainError(
            f"FROM clauses differ: {c1.tables} vs {c2.tables}")
    if c1.joins != c2.joins:
        raise ContainmentDomainError("join sets differ; intersection undefined")
    return Query(c1.tables, c1.joins, tuple(sorted(set(c1.preds) | set(c2.preds))))


def from_key(q: Query) -> str:
    """Canonical FROM-clause key, used to index the queries pool."""
    return ",".join(sorted(set(q.tables)))


def to_dict(q: Query) -> dict:
    q = canonicalize(q)
    return {
        "tables": list(q.tables),
        "joins": [[a, b] for a, b in q.joins],
        "preds": [[c, o, v] for c, o, v in q.preds],
    }


def from_dict(d: dict) -> Query:
    try:
        return make_query(d["tables"],
                          [(a, b) for a, b in d.get("joins", [])],
                          [(c, o, v) for c, o, v in d.get("preds", [])])
    except (KeyError, TypeError, ValueError) as exc:
        raise QueryError(f"malformed query object: {exc}") from exc


def to_json(q: Query) -> str:
    return json.dumps(to_dict(q), sort_keys=True, separators=(",", ":"))


def from_json(s: str) -> Query:
    return from_dict(json.loads(s))


def to_sql(q: Query) -> str:
    """Restricted SQL text for human inspection (not parsed back)."""
    q = canonicalize(q)
    conds = [f"{a} = {b}" for a, b in q.joins]
    conds += [f"{c} {o} {v}" for c, o, v in q.preds]
    where = " AND ".join(conds) if conds else "TRUE"
    return f"SELECT * FROM {', '.join(q.tables)} WHERE {where}"
