#!/usr/bin/env python3
"""Hidden-width sweep for the containment-rate network.

Trains one network per hidden size on a shared database and workload and
writes a CSV of parameter counts and best validation q-errors. Reuses
artifacts from a previous run when --db/--workload are given; otherwise
generates a small chain database first.

Usage:
    python3 scripts/sweep_hidden.py --out runs/sweep --hidden 4,8,16,32,64
    python3 scripts/sweep_hidden.py --out runs/sweep --db runs/desk/db \\
        --workload runs/desk/train_workload.jsonl
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from concard.cli import main as cli
from run_desk_experiment import chain_schema

from concard.relstore import save_schema


def run(argv: list[str]) -> None:
    rc = cli(argv)
    if rc != 0:
        raise SystemExit(f"step failed (exit {rc}): {' '.join(argv)}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep", help="artifact directory")
    ap.add_argument("--hidden", default="4,8,16,32,64")
    ap.add_argument("--db", default=None, help="existing database directory")
    ap.add_argument("--workload", default=None, help="existing workload file")
    ap.add_argument("--max-epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=404)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    db_dir, workload = args.db, args.workload
    if db_dir is None or workload is None:
        schema_path = out / "schema.json"
        save_schema(chain_schema(), schema_path)
        db_dir = out / "db"
        Path(db_dir).mkdir(exist_ok=True)
        run(["gen-db", "--schema", str(schema_path), "--out", str(db_dir),
             "--seed", "202", "--fk-skew", "4.0", "--latent-inherit", "0.9",
             "--beta-lo", "0.8", "--beta-hi", "0.95",
             "--fk-domain-factor", "10.0",
             "--rows=customers=150", "--rows=orders=600",
             "--rows=lineitems=1200", "--rows=shipments=800"])
        workload = out / "workload.jsonl"
        run(["gen-workload", "--db", str(db_dir), "--out", str(workload),
             "--n", "150", "--max-joins", "2", "--perturbations", "3",
             "--cross-factor", "2.0", "--seed", "77"])

    csv_path = out / "hidden_sweep.csv"
    run(["sweep-h", "--db", str(db_dir), "--workload", str(workload),
         "--out", str(csv_path), "--hidden", args.hidden,
         "--max-epochs", str(args.max_epochs), "--seed", str(args.seed)])
    print(f"\nwrote {csv_path}:")
    print(csv_path.read_text())


if __name__ == "__main__":
    main()
