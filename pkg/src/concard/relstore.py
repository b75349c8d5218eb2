"""In-memory relational engine over synthetic integer schemas.

Holds the ground-truth world: schema definitions, deterministic database
construction, exact query execution (the observable contract is the naive
nested-loop result; internally predicates are pushed down and joins are
hashed), exact cardinalities and exact containment rates.

Synthetic data is deliberately *not* independent-uniform: foreign keys are
drawn with a head-heavy skew and every row carries a latent mixed into its
attribute values and inherited across foreign keys, so attributes correlate
within a row and across joins. A plain independence-assumption estimator is
therefore systematically wrong on multi-join queries, which is the regime
the learned estimator is meant to fix.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ContainmentDomainError, DataError, QueryError, SchemaError
from .querymodel import Query, canonicalize, same_from
from .seeding import substream


@dataclass(frozen=True)
class ColumnDef:
    """Non-key column with a declared inclusive integer value range."""
    name: str
    min: int
    max: int


@dataclass(frozen=True)
class TableDef:
    name: str
    key_cols: tuple[str, ...]
    cols: tuple[ColumnDef, ...]

    def column_names(self) -> tuple[str, ...]:
        """All columns in storage order: keys first, then non-keys."""
        return self.key_cols + tuple(c.name for c in self.cols)


@dataclass(frozen=True)
class Schema:
    """Tables plus declared joinable (parent_key, child_fk) column pairs.

    The first element of a join edge is the referenced key, the second the
    foreign key that draws its values from it during construction. Queries
    may use an edge in either orientation.
    """
    tables: tuple[TableDef, ...]
    join_edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(names) != len(set(names)):
            raise SchemaError("duplicate table names")
        for t in self.tables:
            cols = list(t.column_names())
            if len(cols) != len(set(cols)):
                raise SchemaError(f"duplicate column names in table {t.name}")
            for c in t.cols:
                if c.min > c.max:
                    raise SchemaError(f"column {t.name}.{c.name} has min > max")
        key_cols = {f"{t.name}.{k}" for t in self.tables for k in t.key_cols}
        for a, b in self.join_edges:
            for col in (a, b):
                if col not in key_cols:
                    raise SchemaError(f"join edge column {col} is not a declared key column")
            if a.split(".", 1)[0] == b.split(".", 1)[0]:
                raise SchemaError(f"join edge ({a}, {b}) does not span two tables")

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"unknown table {name!r}")

    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)

    def non_key_columns(self, table: str) -> tuple[ColumnDef, ...]:
        return self.table(table).cols

    def column_def(self, qualified: str) -> ColumnDef:
        """Definition of a non-key column given its "table.column" name."""
        tname, _, cname = qualified.partition(".")
        for col in self.table(tname).cols:
            if col.name == cname:
                return col
        raise SchemaError(f"unknown non-key column {qualified!r}")

    def edge_set(self) -> set[frozenset[str]]:
        return {frozenset(e) for e in self.join_edges}


@dataclass(frozen=True)
class ColumnStats:
    """Exact statistics over the stored rows of one column."""
    count: int
    distinct: int
    min: int | None
    max: int | None


@dataclass
class Database:
    """Immutable after construction; all query operations are read-only."""
    schema: Schema
    rows: dict[str, list[tuple[int, ...]]]
    column_stats: dict[str, ColumnStats] = field(default_factory=dict)

    def __post_init__(self):
        if not self.column_stats:
            self.column_stats = compute_stats(self.schema, self.rows)

    def row_count(self, table: str) -> int:
        return len(self.rows[table])

    def total_rows(self) -> int:
        return sum(len(r) for r in self.rows.values())


def compute_stats(schema: Schema, rows: dict[str, list[tuple[int, ...]]]) -> dict[str, ColumnStats]:
    stats: dict[str, ColumnStats] = {}
    for t in schema.tables:
        data = rows.get(t.name, [])
        for i, col in enumerate(t.column_names()):
            values = [r[i] for r in data]
            if values:
                stats[f"{t.name}.{col}"] = ColumnStats(
                    len(values), len(set(values)), min(values), max(values))
            else:
                stats[f"{t.name}.{col}"] = ColumnStats(0, 0, None, None)
    return stats


# ---------------------------------------------------------------------------
# schema and database files

def schema_to_dict(schema: Schema) -> dict:
    return {
        "tables": [
            {
                "name": t.name,
                "key_cols": list(t.key_cols),
                "cols": [{"name": c.name, "min": c.min, "max": c.max} for c in t.cols],
            }
            for t in schema.tables
        ],
        "join_edges": [[a, b] for a, b in schema.join_edges],
    }


def schema_from_dict(d: dict) -> Schema:
    try:
        tables = tuple(
            TableDef(
                t["name"],
                tuple(t.get("key_cols", [])),
                tuple(ColumnDef(c["name"], int(c["min"]), int(c["max"]))
                      for c in t.get("cols", [])),
            )
            for t in d["tables"]
        )
        edges = tuple((a, b) for a, b in d.get("join_edges", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed schema: {exc}") from exc
    return Schema(tables, edges)


def schema_hash(schema: Schema) -> str:
    blob = json.dumps(schema_to_dict(schema), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_schema(path: str | Path) -> Schema:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"schema file {path} is not valid JSON: {exc}") from exc
    return schema_from_dict(d)


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2, sort_keys=True) + "\n")


def dump_database(db: Database, out_dir: str | Path, meta: dict | None = None) -> None:
    """One JSON-lines file per table plus a manifest; bit-exact round trip."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": 1,
        "schema": schema_to_dict(db.schema),
        "schema_hash": schema_hash(db.schema),
        "row_counts": {t.name: len(db.rows[t.name]) for t in db.schema.tables},
        "tables": {t.name: f"{t.name}.jsonl" for t in db.schema.tables},
    }
    if meta:
        manifest["meta"] = meta
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for t in db.schema.tables:
        with open(out / f"{t.name}.jsonl", "w") as f:
            for row in db.rows[t.name]:
                f.write(json.dumps(list(row), separators=(",", ":")) + "\n")


def load_database(in_dir: str | Path) -> Database:
    """Load a dump; statistics are recomputed and invariants re-checked."""
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    schema = schema_from_dict(manifest["schema"])
    rows: dict[str, list[tuple[int, ...]]] = {}
    for t in schema.tables:
        path = root / manifest["tables"][t.name]
        width = len(t.column_names())
        table_rows: list[tuple[int, ...]] = []
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                values = json.loads(line)
                if len(values) != width:
                    raise DataError(f"{path}:{lineno}: row width {len(values)} != {width}")
                table_rows.append(tuple(int(v) for v in values))
        rows[t.name] = table_rows
    db = Database(schema, rows)
    _check_ranges(db)
    return db


def _check_ranges(db: Database) -> None:
    for t in db.schema.tables:
        offset = len(t.key_cols)
        for j, col in enumerate(t.cols):
            for row in db.rows[t.name]:
                v = row[offset + j]
                if not (col.min <= v <= col.max):
                    raise DataError(
                        f"value {v} of {t.name}.{col.name} outside declared range "
                        f"[{col.min}, {col.max}]")


# ---------------------------------------------------------------------------
# construction

def _topo_order(schema: Schema) -> list[TableDef]:
    """Parents before children along foreign-key edges."""
    parent_of = {}  # table -> set of tables it references
    for t in schema.tables:
        parent_of[t.name] = set()
    for parent, child in schema.join_edges:
        parent_of[child.split(".", 1)[0]].add(parent.split(".", 1)[0])
    order: list[TableDef] = []
    done: set[str] = set()
    remaining = list(schema.tables)
    while remaining:
        progress = [t for t in remaining if parent_of[t.name] <= done]
        if not progress:
            raise SchemaError("foreign-key reference cycle; cannot order construction")
        for t in progress:
            order.append(t)
            done.add(t.name)
        remaining = [t for t in remaining if t.name not in done]
    return order


def build_database(schema: Schema, row_counts: dict[str, int], seed: int, *,
                   fk_skew: float = 2.0, latent_inherit: float = 0.65,
                   beta_range: tuple[float, float] = (0.35, 0.85),
                   fk_domain_factor: float = 1.0) -> Database:
    """Deterministically populate ``schema`` with correlated synthetic rows.

    Every table row carries a hidden latent in [0,1). Root tables take a
    latent that grows with the primary key; children draw a parent with
    probability skewed toward low-latent parents (index = floor(n * u^fk_skew))
    and inherit a mix of that parent's latent. Non-key column values blend
    the row latent with fresh noise, the blend weight drawn per column from
    ``beta_range``. Primary/unreferenced keys are sequential. With
    ``fk_domain_factor`` > 1 foreign keys are drawn over a domain that much
    wider than the referenced key's populated values; draws past the populated
    range become a shared placeholder reference (one value just above the
    referenced maximum) that never joins, the way unmatched keys are often
    coded with a default value in real data.
    """
    if fk_domain_factor < 1.0:
        raise SchemaError("fk_domain_factor must be >= 1")
    for name, n in row_counts.items():
        schema.table(name)
        if n < 0:
            raise SchemaError(f"negative row count for table {name}")
    fk_parent: dict[str, str] = {}  # "t.col" -> "p.col"
    for parent, child in schema.join_edges:
        fk_parent.setdefault(child, parent)

    rows: dict[str, list[tuple[int, ...]]] = {}
    keyvals: dict[str, list[int]] = {}   # populated key column values
    latents: dict[str, np.ndarray] = {}  # per-table row latents

    for t in _topo_order(schema):
        n = int(row_counts.get(t.name, 0))
        rng = substream(seed, f"db:{t.name}")
        fk_cols = [k for k in t.key_cols if f"{t.name}.{k}" in fk_parent]

        if n == 0:
            rows[t.name] = []
            latents[t.name] = np.zeros(0)
            for k in t.key_cols:
                keyvals[f"{t.name}.{k}"] = []
            continue

        key_data: dict[str, np.ndarray] = {}
        if fk_cols:
            first = fk_cols[0]
            parent_col = fk_parent[f"{t.name}.{first}"]
            parent_table = parent_col.split(".", 1)[0]
            pvals = keyvals[parent_col]
            if not pvals:
                raise SchemaError(
                    f"table {t.name} references empty key column {parent_col}")
            u = rng.random(n)
            virt = np.minimum((len(pvals) * fk_domain_factor * u ** fk_skew).astype(np.int64),
                              int(len(pvals) * fk_domain_factor) - 1)
            idx = np.minimum(virt, len(pvals) - 1)
            parr = np.asarray(pvals, dtype=np.int64)
            key_data[first] = np.where(virt < len(pvals), parr[idx], int(parr.max()) + 1)
            z = np.clip(latent_inherit * latents[parent_table][idx]
                        + (1.0 - latent_inherit) * rng.random(n), 0.0, 1.0 - 1e-12)
            for k in fk_cols[1:]:
                pcol = fk_parent[f"{t.name}.{k}"]
                pv = keyvals[pcol]
                if not pv:
                    raise SchemaError(f"table {t.name} references empty key column {pcol}")
                u2 = rng.random(n)
                virt2 = np.minimum((len(pv) * fk_domain_factor * u2 ** fk_skew).astype(np.int64),
                                   int(len(pv) * fk_domain_factor) - 1)
                idx2 = np.minimum(virt2, len(pv) - 1)
                pa = np.asarray(pv, dtype=np.int64)
                key_data[k] = np.where(virt2 < len(pv), pa[idx2], int(pa.max()) + 1)
        else:
            z = np.clip((np.arange(n) + rng.random(n)) / n, 0.0, 1.0 - 1e-12)

        for k in t.key_cols:
            if k not in key_data:
                key_data[k] = np.arange(n, dtype=np.int64)

        col_data: dict[str, np.ndarray] = {}
        for c in t.cols:
            beta = rng.uniform(*beta_range)
            mix = np.clip(beta * z + (1.0 - beta) * rng.random(n), 0.0, 1.0 - 1e-12)
            width = c.max - c.min + 1
            col_data[c.name] = c.min + np.floor(mix * width).astype(np.int64)

        ordered = [key_data[k] for k in t.key_cols] + [col_data[c.name] for c in t.cols]
        matrix = np.stack(ordered, axis=1) if ordered else np.zeros((n, 0), dtype=np.int64)
        rows[t.name] = [tuple(int(v) for v in row) for row in matrix]
        latents[t.name] = z
        for k in t.key_cols:
            keyvals[f"{t.name}.{k}"] = [int(v) for v in key_data[k]]

    return Database(schema, rows)


# ---------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class ResultSet:
    """Distinct full-width result tuples; columns follow ``tables`` order."""
    tables: tuple[str, ...]
    rows: frozenset[tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.rows)


def validate_query(q: Query, schema: Schema) -> Query:
    """Check a query against the schema; returns the canonical form."""
    q = canonicalize(q)
    known = set(schema.table_names())
    for t in q.tables:
        if t not in known:
            raise QueryError(f"unknown table {t!r}")
    edges = schema.edge_set()
    for a, b in q.joins:
        if frozenset((a, b)) not in edges:
            raise QueryError(f"join ({a}, {b}) is not a declared join edge")
    nonkey = {f"{t}.{c.name}" for t in q.tables for c in schema.non_key_columns(t)}
    for col, _, _ in q.preds:
        table = col.split(".", 1)[0]
        if table not in known or col.split(".", 1)[1] not in schema.table(table).column_names():
            raise QueryError(f"unknown column {col!r}")
        if col not in nonkey:
            raise QueryError(f"predicate column {col} is not a non-key column of the FROM clause")
    if len(q.tables) > 1 and not _connected(q):
        raise QueryError("join graph does not connect the FROM clause")
    return q


def _connected(q: Query) -> bool:
    adj: dict[str, set[str]] = {t: set() for t in q.tables}
    for a, b in q.joins:
        ta, tb = a.split(".", 1)[0], b.split(".", 1)[0]
        adj[ta].add(tb)
        adj[tb].add(ta)
    seen = {q.tables[0]}
    frontier = [q.tables[0]]
    while frontier:
        t = frontier.pop()
        for u in adj[t]:
            if u not in seen:
                seen.add(u)
                frontier.append(u)
    return len(seen) == len(q.tables)


def _passes(value: int, op: str, ref: int) -> bool:
    if op == "<":
        return value < ref
    if op == ">":
        return value > ref
    return value == ref


def execute(q: Query, db: Database) -> ResultSet:
    """Exact evaluation of ``q``: cross product of its tables filtered by all
    join equalities and column predicates (SELECT *), as a set of tuples.

    Implemented as pushed-down filters plus hash joins in a connectivity
    order; the result is identical to the naive nested loop.
    """
    q = validate_query(q, db.schema)
    tables = q.tables  # canonical sorted order, also the output column order
    colpos = {}
    for t in tables:
        for i, c in enumerate(db.schema.table(t).column_names()):
            colpos[f"{t}.{c}"] = i

    filtered: dict[str, list[tuple[int, ...]]] = {}
    for t in tables:
        preds = [(colpos[c], op, v) for c, op, v in q.preds if c.split(".", 1)[0] == t]
        data = db.rows[t]
        for pos, op, v in preds:
            data = [r for r in data if _passes(r[pos], op, v)]
        filtered[t] = data

    if len(tables) == 1:
        return ResultSet(tables, frozenset(filtered[tables[0]]))

    # place tables so each new one joins the already-placed prefix
    remaining = list(tables)
    placed = [remaining.pop(0)]
    order_joins: list[list[tuple[str, str]]] = [[]]
    while remaining:
        for i, t in enumerate(remaining):
            conds = [(a, b) for a, b in q.joins
                     if (a.split(".", 1)[0] == t) != (b.split(".", 1)[0] == t)
                     and {a.split(".", 1)[0], b.split(".", 1)[0]} <= set(placed) | {t}]
            if conds:
                placed.append(remaining.pop(i))
                order_joins.append(conds)
                break
        else:  # unreachable for validated queries (join graph connected)
            raise QueryError("join graph does not connect the FROM clause")

    partials: list[tuple[tuple[int, ...], ...]] = [(r,) for r in filtered[placed[0]]]
    for step in range(1, len(placed)):
        t = placed[step]
        conds = order_joins[step]
        new_keys = []   # column positions within t
        old_keys = []   # (placed index, column position) on the probe side
        for a, b in conds:
            if a.split(".", 1)[0] == t:
                mine, other = a, b
            else:
                mine, other = b, a
            new_keys.append(colpos[mine])
            old_keys.append((placed.index(other.split(".", 1)[0]), colpos[other]))
        table_index: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
        for r in filtered[t]:
            table_index.setdefault(tuple(r[k] for k in new_keys), []).append(r)
        next_partials = []
        for p in partials:
            key = tuple(p[i][k] for i, k in old_keys)
            for r in table_index.get(key, ()):
                next_partials.append(p + (r,))
        partials = next_partials
        if not partials:
            break

    out_index = [placed.index(t) for t in tables]
    rows = frozenset(
        tuple(v for i in out_index for v in p[i]) for p in partials)
    return ResultSet(tables, rows)


def cardinality(q: Query, db: Database) -> int:
    """|Q(D)|: the number of distinct result rows."""
    return len(execute(q, db))


def true_containment_rate(q1: Query, q2: Query, db: Database) -> float:
    """Fraction of q1's result rows that also appear in q2's result.

    Defined for identical FROM clauses only; by convention a query with an
    empty result is 0-contained in anything.
    """
    q1, q2 = canonicalize(q1), canonicalize(q2)
    if not same_from(q1, q2):
        raise ContainmentDomainError(
            f"containment undefined for FROM clauses {q1.tables} vs {q2.tables}")
    r1 = execute(q1, db)
    if not r1.rows:
        return 0.0
    r2 = execute(q2, db)
    return len(r1.rows & r2.rows) / len(r1.rows)
