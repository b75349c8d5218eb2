"""Command line front end tying generation, training, and evaluation into
reproducible file-based experiments.

Every subcommand echoes its configuration as JSON to stderr together with a
hash of that configuration, seeds all randomness from one --seed flag, and
records how each artifact was produced (seed, schema hash, config hash)
either inside its output files or in a sibling .meta.json. Reruns with identical flags produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .estimators import (
    DEFAULT_EPSILON,
    ExactCardinality,
    FINAL_FNS,
    IndependenceCardinality,
    build_pool,
    crd2cnt,
    estimate_cardinality,
    load_pool,
    pool_estimator,
    save_pool,
)
from .evaluation import (
    eval_cardinality,
    eval_containment,
    write_samples_csv,
    write_stats_csv,
)
from .exceptions import (
    ConcardError,
    ConfigError,
    ContainmentDomainError,
    DataError,
    FeaturizationError,
    GenerationError,
    NumericError,
    QueryError,
    SchemaError,
    ShapeError,
)
from .featurizer import build_feature_space
from .qgen import (
    GenConfig,
    generate_workload,
    load_workload,
    save_workload,
)
from .querymodel import Query
from .ratenet import (
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_train_report_csv,
)
from .relstore import (
    build_database,
    dump_database,
    load_database,
    load_schema,
    schema_hash,
    true_containment_rate,
)

ERROR_CATEGORIES = {
    ConfigError: "config-error",
    SchemaError: "schema-error",
    QueryError: "query-error",
    ContainmentDomainError: "query-error",
    FeaturizationError: "query-error",
    GenerationError: "generation-error",
    DataError: "data-error",
    ShapeError: "data-error",
    NumericError: "numeric-error",
}


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return 1


def _echo_config(args: argparse.Namespace) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
    print(json.dumps({"config": cfg, "config_hash": digest}, sort_keys=True,
                     default=str), file=sys.stderr)
    return digest


def _write_meta(out_path: str, args: argparse.Namespace, config_hash: str,
                schema_digest: str | None) -> None:
    meta = {"config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "config_hash": config_hash, "schema_hash": schema_digest,
            "seed": getattr(args, "seed", None)}
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":"), default=str) + "\n")


def _parse_rows(pairs: list[str]) -> dict[str, int]:
    counts = {}
    for item in pairs:
        name, _, num = item.partition("=")
        if not num:
            raise ConfigError(f"--rows expects table=count, got {item!r}")
        try:
            counts[name] = int(num)
        except ValueError:
            raise ConfigError(f"row count for {name!r} is not an integer: {num!r}") from None
    if not counts:
        raise ConfigError("at least one --rows table=count is required")
    return counts


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} path does not exist: {path}")
    return p


def _check_same_schema(expected: str | None, actual: str, what: str) -> None:
    if expected is not None and expected != actual:
        raise DataError(f"{what} was built against schema {expected[:12]}..., "
                        f"but the database hashes to {actual[:12]}...")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_db(args) -> int:
    schema = load_schema(_existing(args.schema, "schema"))
    counts = _parse_rows(args.rows)
    db = build_database(schema, counts, args.seed,
                        fk_skew=args.fk_skew, latent_inherit=args.latent_inherit,
                        beta_range=(args.beta_lo, args.beta_hi),
                        fk_domain_factor=args.fk_domain_factor)
    dump_database(db, args.out, meta={"seed": args.seed,
                                      "schema_hash": schema_hash(schema)})
    print(f"wrote database ({db.total_rows()} rows) to {args.out}")
    return 0


def cmd_gen_workload(args) -> int:
    db = load_database(_existing(args.db, "database"))
    cfg = GenConfig(n_initial=args.n, perturbations_per_query=args.perturbations,
                    cross_pair_factor=args.cross_factor, max_joins=args.max_joins,
                    train_frac=args.train_frac, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    wl = generate_workload(db, cfg)
    save_workload(args.out, wl)
    print(f"wrote workload to {args.out}: {len(wl.train)} train pairs, "
          f"{len(wl.test)} test pairs, {len(wl.queries)} labeled queries")
    return 0


def cmd_train(args) -> int:
    db = load_database(_existing(args.db, "database"))
    wl = load_workload(_existing(args.workload, "workload"))
    digest = schema_hash(db.schema)
    _check_same_schema(wl.schema_hash, digest, "workload")
    space = build_feature_space(db.schema)
    cfg = TrainConfig(hidden=args.hidden, batch_size=args.batch_size,
                      learning_rate=args.lr, max_epochs=args.max_epochs,
                      patience=args.patience, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params, report = train(wl.train, wl.test, space, cfg)
    meta = {"seed": args.seed, "hidden": cfg.hidden, "best_epoch": report.best_epoch,
            "best_val_mean_qerror": min(report.val_curve),
            "initial_val_mean_qerror": report.initial_val,
            "n_train": len(wl.train), "n_val": len(wl.test)}
    save_checkpoint(args.out, params, space, meta=meta)
    if args.report:
        write_train_report_csv(args.report, report)
    print(f"trained H={cfg.hidden} for {len(report.val_curve)} epochs; best epoch "
          f"{report.best_epoch} (val mean q-error {min(report.val_curve):.4f}, "
          f"untrained {report.initial_val:.4f}); checkpoint {args.out}")
    return 0


def _rate_model(args, db):
    """(name, rate_fn) for eval-cnt style subcommands."""
    if args.model == "checkpoint":
        if not args.checkpoint:
            raise ConfigError("--model checkpoint requires --checkpoint")
        params, space, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
        if db is not None:
            _check_same_schema(space.schema_hash, schema_hash(db.schema), "checkpoint")

        def rate(q1: Query, q2: Query) -> float:
            return predict(params, space, q1, q2)

        return "crn", rate
    if db is None:
        raise ConfigError(f"--model {args.model} requires --db")
    if args.model == "exact":
        return "exact", lambda q1, q2: true_containment_rate(q1, q2, db)
    if args.model == "independence":
        return "crd2cnt-independence", crd2cnt(IndependenceCardinality(db))
    raise ConfigError(f"unknown rate model {args.model!r}")


def cmd_eval_cnt(args) -> int:
    wl = load_workload(_existing(args.workload, "workload"))
    db = load_database(_existing(args.db, "database")) if args.db else None
    if db is not None:
        _check_same_schema(wl.schema_hash, schema_hash(db.schema), "workload")
    name, rate_fn = _rate_model(args, db)
    pairs = {"train": wl.train, "test": wl.test,
             "all": wl.train + wl.test}[args.split]
    if not pairs:
        raise DataError(f"workload has no pairs in split {args.split!r}")
    report = eval_containment(rate_fn, pairs, eps=args.eps)
    write_stats_csv(args.out, Path(args.workload).stem, name,
                    report.overall, report.by_joins)
    if args.samples:
        write_samples_csv(args.samples, report.samples)
    print(f"containment eval [{name}] on {len(pairs)} pairs: "
          f"median {report.overall.p50:.4f}, mean {report.overall.mean:.4f}")
    return 0


def cmd_build_pool(args) -> int:
    db = load_database(_existing(args.db, "database"))
    wl = load_workload(_existing(args.workload, "workload"))
    digest = schema_hash(db.schema)
    _check_same_schema(wl.schema_hash, digest, "workload")
    if args.final not in FINAL_FNS:
        raise ConfigError(f"unknown final function {args.final!r}; "
                          f"choose from {sorted(FINAL_FNS)}")
    pool = build_pool(wl.queries, epsilon=args.epsilon, final_fn=args.final,
                      schema_hash=digest,
                      coverage_db=db if args.coverage else None,
                      stratify_to=args.size)
    save_pool(args.out, pool)
    print(f"wrote pool with {len(pool)} records over "
          f"{len(pool.groups)} FROM groups to {args.out}")
    return 0


def _card_estimator(args, db, pool):
    if args.estimator == "exact":
        return "exact", ExactCardinality(db)
    if args.estimator == "independence":
        return "independence", IndependenceCardinality(db)
    if args.estimator == "improved-independence":
        if pool is None:
            raise ConfigError("improved-independence requires --pool")
        from .estimators import improved_estimator
        return "improved-independence", improved_estimator(IndependenceCardinality(db), pool)
    if args.estimator == "crn":
        if pool is None:
            raise ConfigError("crn estimation requires --pool")
        name, rate_fn = _rate_model(argparse.Namespace(model="checkpoint",
                                                       checkpoint=args.checkpoint), db)
        fallback = {"independence": IndependenceCardinality(db),
                    "exact": ExactCardinality(db),
                    "none": None}[args.fallback]
        return "cnt2crd-crn", pool_estimator(pool, rate_fn, fallback=fallback)
    raise ConfigError(f"unknown estimator {args.estimator!r}")


def cmd_eval_crd(args) -> int:
    db = load_database(_existing(args.db, "database"))
    wl = load_workload(_existing(args.workload, "workload"))
    digest = schema_hash(db.schema)
    _check_same_schema(wl.schema_hash, digest, "workload")
    pool = None
    if args.pool:
        pool = load_pool(_existing(args.pool, "pool"))
        _check_same_schema(pool.schema_hash, digest, "pool")
    name, estimator = _card_estimator(args, db, pool)
    if not wl.queries:
        raise DataError("workload has no labeled queries")
    report = eval_cardinality(estimator, wl.queries)
    write_stats_csv(args.out, Path(args.workload).stem, name,
                    report.overall, report.by_joins)
    if args.samples:
        write_samples_csv(args.samples, report.samples)
    by = " ".join(f"joins={j}:p50={st.p50:.3g}" for j, st in report.by_joins.items())
    print(f"cardinality eval [{name}] on {len(wl.queries)} queries: "
          f"median {report.overall.p50:.4f}, mean {report.overall.mean:.4f} ({by})")
    return 0


def cmd_sweep_h(args) -> int:
    db = load_database(_existing(args.db, "database"))
    wl = load_workload(_existing(args.workload, "workload"))
    digest = schema_hash(db.schema)
    _check_same_schema(wl.schema_hash, digest, "workload")
    space = build_feature_space(db.schema)
    try:
        hiddens = [int(h) for h in args.hidden.split(",") if h]
    except ValueError:
        raise ConfigError(f"--hidden expects comma-separated integers, got {args.hidden!r}") from None
    if not hiddens:
        raise ConfigError("--hidden list is empty")
    rows = ["hidden,param_count,epochs,best_epoch,val_mean_qerror"]
    for h in hiddens:
        cfg = TrainConfig(hidden=h, batch_size=args.batch_size, learning_rate=args.lr,
                          max_epochs=args.max_epochs, patience=args.patience,
                          seed=args.seed)
        params, report = train(wl.train, wl.test, space, cfg)
        best = min(report.val_curve)
        rows.append(f"{h},{params.count()},{len(report.val_curve)},"
                    f"{report.best_epoch},{best!r}")
        print(f"H={h}: {params.count()} params, best val mean q-error {best:.4f}")
    Path(args.out).write_text("\n".join(rows) + "\n")
    return 0


def cmd_round_trip_check(args) -> int:
    db = load_database(_existing(args.db, "database"))
    from .qgen import gen_initial_queries
    queries = gen_initial_queries(db, args.n, args.seed, args.max_joins)
    exact = ExactCardinality(db)
    rate_fn = crd2cnt(exact)
    pool = build_pool([], schema_hash=schema_hash(db.schema), coverage_db=db)
    checked = skipped = 0
    worst = 0.0
    for q in queries:
        est = estimate_cardinality(q, pool, rate_fn)
        if est is None:
            skipped += 1
            continue
        truth = exact(q)
        checked += 1
        ref = max(truth, 1.0)
        worst = max(worst, abs(est - max(truth, 1.0)) / ref)
    ok = worst <= args.tolerance
    print(json.dumps({"checked": checked, "skipped": skipped,
                      "max_rel_err": worst, "pass": ok}, sort_keys=True))
    if not ok:
        return _fail("numeric-error",
                     f"round trip off by {worst:.3g} (> {args.tolerance})")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concard",
        description="Containment-rate driven cardinality estimation toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-db", help="build a synthetic database from a schema file")
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", action="append", default=[], metavar="TABLE=COUNT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fk-skew", type=float, default=2.0)
    p.add_argument("--latent-inherit", type=float, default=0.65)
    p.add_argument("--beta-lo", type=float, default=0.35)
    p.add_argument("--beta-hi", type=float, default=0.85)
    p.add_argument("--fk-domain-factor", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_db)

    p = sub.add_parser("gen-workload", help="generate labeled pairs and queries")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="number of initial queries")
    p.add_argument("--max-joins", type=int, default=2)
    p.add_argument("--perturbations", type=int, default=4)
    p.add_argument("--cross-factor", type=float, default=2.0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("train", help="train the rate network on a workload")
    p.add_argument("--db", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="per-epoch validation curve CSV")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-cnt", help="evaluate a containment-rate model on pairs")
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", help="per-pair q-error CSV")
    p.add_argument("--model", choices=["checkpoint", "exact", "independence"],
                   default="checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--db", help="needed for exact/independence models")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--eps", type=float, default=1e-3)
    p.set_defaults(func=cmd_eval_cnt)

    p = sub.add_parser("build-pool", help="build a queries pool from a workload")
    p.add_argument("--db", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, help="stratified cap on record count")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--final", default="median")
    p.add_argument("--coverage", action="store_true",
                   help="add a predicate-free record for every FROM clause")
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("eval-crd", help="evaluate a cardinality estimator on queries")
    p.add_argument("--db", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", help="per-query q-error CSV")
    p.add_argument("--pool")
    p.add_argument("--estimator",
                   choices=["exact", "independence", "improved-independence", "crn"],
                   default="independence")
    p.add_argument("--checkpoint")
    p.add_argument("--fallback", choices=["independence", "exact", "none"],
                   default="independence")
    p.set_defaults(func=cmd_eval_crd)

    p = sub.add_parser("sweep-h", help="train across hidden sizes, emit a CSV")
    p.add_argument("--db", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="4,8,16,32,64", metavar="H1,H2,...")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep_h)

    p = sub.add_parser("round-trip-check",
                       help="verify exact-oracle rate estimates invert to exact cardinalities")
    p.add_argument("--db", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--max-joins", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_round_trip_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config_hash = _echo_config(args)
    try:
        status = args.func(args)
    except ConcardError as exc:
        category = ERROR_CATEGORIES.get(type(exc), "data-error")
        return _fail(category, str(exc))
    except OSError as exc:
        return _fail("config-error", str(exc))
    out = getattr(args, "out", None)
    if status == 0 and out is not None and str(out).endswith(".csv"):
        schema_digest = None
        for attr in ("db",):
            path = getattr(args, attr, None)
            if path and Path(path, "manifest.json").exists():
                try:
                    schema_digest = json.loads(
                        Path(path, "manifest.json").read_text()).get("schema_hash")
                except (OSError, json.JSONDecodeError):
                    schema_digest = None
        _write_meta(out, args, config_hash, schema_digest)
    return status


if __name__ == "__main__":
    sys.exit(main())
