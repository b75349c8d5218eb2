#!/usr/bin/env python3
"""End-to-end desk-scale experiment.

Builds a four-table chain database with correlated columns and dangling
foreign keys, generates a labeled containment workload, trains the rate
network, and compares cardinality estimators (independence baseline, its
pool-improved variant, and the trained network routed through the pool)
on multi-join queries. Every artifact lands under --out; rerunning with
the same arguments reproduces the same bytes.

Usage:
    python3 scripts/run_desk_experiment.py --out runs/desk
    python3 scripts/run_desk_experiment.py --out runs/quick --quick
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from concard.cli import main as cli
from concard.relstore import ColumnDef, Schema, TableDef, save_schema


def chain_schema() -> Schema:
    return Schema(
        tables=(
            TableDef("customers", ("id",),
                     (ColumnDef("age", 18, 80), ColumnDef("income", 20, 90),
                      ColumnDef("region", 0, 9))),
            TableDef("orders", ("id", "customer_id"),
                     (ColumnDef("total", 1, 100), ColumnDef("month", 1, 12))),
            TableDef("lineitems", ("id", "order_id"),
                     (ColumnDef("qty", 1, 40), ColumnDef("price", 1, 60))),
            TableDef("shipments", ("id", "lineitem_id"),
                     (ColumnDef("weight", 1, 25), ColumnDef("days", 1, 21))),
        ),
        join_edges=(("customers.id", "orders.customer_id"),
                    ("orders.id", "lineitems.order_id"),
                    ("lineitems.id", "shipments.lineitem_id")),
    )


def run(argv: list[str]) -> None:
    rc = cli(argv)
    if rc != 0:
        raise SystemExit(f"step failed (exit {rc}): {' '.join(argv)}")


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk", help="artifact directory")
    ap.add_argument("--seed", type=int, default=202)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--pool-size", type=int, default=400)
    ap.add_argument("--pool-epsilon", type=float, default=0.08)
    ap.add_argument("--fk-domain-factor", type=float, default=10.0,
                    help="foreign-key domain widening; >1 leaves keys dangling")
    ap.add_argument("--quick", action="store_true",
                    help="tiny row counts and few epochs, for a smoke run")
    return ap.parse_args()


def main() -> None:
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    db_dir = out / "db"
    db_dir.mkdir(exist_ok=True)

    schema_path = out / "schema.json"
    save_schema(chain_schema(), schema_path)

    if args.quick:
        rows = {"customers": 80, "orders": 240, "lineitems": 480, "shipments": 320}
        n_initial, max_epochs = 60, 10
    else:
        rows = {"customers": 400, "orders": 1600,
                "lineitems": 4800, "shipments": 3200}
        n_initial, max_epochs = 620, 200

    run(["gen-db", "--schema", str(schema_path), "--out", str(db_dir),
         "--seed", str(args.seed), "--fk-skew", "4.0",
         "--latent-inherit", "0.9", "--beta-lo", "0.8", "--beta-hi", "0.95",
         "--fk-domain-factor", str(args.fk_domain_factor)]
        + [f"--rows={t}={n}" for t, n in rows.items()])

    train_wl = out / "train_workload.jsonl"
    run(["gen-workload", "--db", str(db_dir), "--out", str(train_wl),
         "--n", str(n_initial), "--max-joins", "2", "--perturbations", "4",
         "--cross-factor", "4.0", "--seed", "77"])

    ckpt = out / "ratenet.json"
    run(["train", "--db", str(db_dir), "--workload", str(train_wl),
         "--out", str(ckpt), "--report", str(out / "train_curve.csv"),
         "--hidden", str(args.hidden), "--batch-size", "128", "--lr", "0.001",
         "--max-epochs", str(max_epochs), "--patience", "15", "--seed", "404"])

    run(["eval-cnt", "--workload", str(train_wl), "--out", str(out / "cnt_stats.csv"),
         "--samples", str(out / "cnt_samples.csv"), "--model", "checkpoint",
         "--checkpoint", str(ckpt), "--split", "test"])

    # the evaluation workload reaches one join deeper than training did
    eval_wl = out / "eval_workload.jsonl"
    run(["gen-workload", "--db", str(db_dir), "--out", str(eval_wl),
         "--n", "400", "--max-joins", "3", "--perturbations", "0",
         "--cross-factor", "0.1", "--seed", "616"])

    pool_wl = out / "pool_workload.jsonl"
    run(["gen-workload", "--db", str(db_dir), "--out", str(pool_wl),
         "--n", "300", "--max-joins", "3", "--perturbations", "0",
         "--cross-factor", "0.1", "--seed", "515"])
    pool_path = out / "pool.jsonl"
    run(["build-pool", "--db", str(db_dir), "--workload", str(pool_wl),
         "--out", str(pool_path), "--size", str(args.pool_size),
         "--epsilon", str(args.pool_epsilon), "--coverage"])

    for estimator, stats_name in (("independence", "crd_independence.csv"),
                                  ("improved-independence", "crd_improved.csv"),
                                  ("crn", "crd_network.csv")):
        run(["eval-crd", "--db", str(db_dir), "--workload", str(eval_wl),
             "--out", str(out / stats_name), "--pool", str(pool_path),
             "--estimator", estimator, "--checkpoint", str(ckpt),
             "--fallback", "independence"])

    print("\nartifacts:")
    for p in sorted(out.glob("*.csv")):
        print(f"  {p}")
    print(json.dumps({"out": str(out), "rows": rows,
                      "fk_domain_factor": args.fk_domain_factor}, indent=2))


if __name__ == "__main__":
    main()
