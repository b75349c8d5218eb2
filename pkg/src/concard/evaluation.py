"""q-error evaluation for rate and cardinality estimators, with
nearest-rank percentile summaries and deterministic CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .qgen import LabeledPair, LabeledQuery
from .querymodel import Query, to_json

DEFAULT_RATE_EPS = 1e-3

PERCENTILES = (50, 75, 90, 95, 99)


def percentile_nearest_rank(values: Sequence[float], p: float) -> float:
    """The ceil(p/100 * n)-th smallest value. No interpolation, so the
    result is always one of the inputs."""
    if not values:
        raise ValueError("percentile of empty sequence")
    if not (0.0 < p <= 100.0):
        raise ValueError("percentile must lie in (0, 100]")
    rank = max(math.ceil(p / 100.0 * len(values)), 1)
    return sorted(values)[rank - 1]


@dataclass(frozen=True)
class QErrorStats:
    n: int
    mean: float
    p50: float
    p75: float
    p90: float
    p95: float
    p99: float
    max: float

    def row(self) -> dict:
        return {"n": self.n, "mean": self.mean, "p50": self.p50, "p75": self.p75,
                "p90": self.p90, "p95": self.p95, "p99": self.p99, "max": self.max}


def summarize_qerrors(values: Sequence[float]) -> QErrorStats:
    if not values:
        raise ValueError("no q-errors to summarize")
    ps = {f"p{p}": percentile_nearest_rank(values, p) for p in PERCENTILES}
    return QErrorStats(n=len(values), mean=sum(values) / len(values),
                       max=max(values), **ps)


def rate_qerror(truth: float, est: float, eps: float = DEFAULT_RATE_EPS) -> float:
    """Symmetric ratio error for rates; both sides floored at eps so pairs
    with empty results compare as equal when the estimate agrees."""
    t = max(truth, eps)
    e = max(est, eps)
    return e / t if e > t else t / e


def card_qerror(truth: float, est: float) -> float:
    """Symmetric ratio error for cardinalities, both sides floored at 1."""
    t = max(truth, 1.0)
    e = max(est, 1.0)
    return e / t if e > t else t / e


@dataclass
class RateEvalReport:
    overall: QErrorStats
    by_joins: dict[int, QErrorStats]
    samples: list[dict] = field(default_factory=list)


@dataclass
class CardEvalReport:
    overall: QErrorStats
    by_joins: dict[int, QErrorStats]
    samples: list[dict] = field(default_factory=list)


def _grouped_stats(samples: list[dict]) -> dict[int, QErrorStats]:
    groups: dict[int, list[float]] = {}
    for s in samples:
        groups.setdefault(s["joins"], []).append(s["qerror"])
    return {j: summarize_qerrors(v) for j, v in sorted(groups.items())}


def eval_containment(rate_fn: Callable[[Query, Query], float],
                     pairs: Sequence[LabeledPair],
                     eps: float = DEFAULT_RATE_EPS) -> RateEvalReport:
    if not pairs:
        raise ValueError("no pairs to evaluate")
    samples = []
    for p in pairs:
        est = rate_fn(p.q1, p.q2)
        samples.append({"q1": to_json(p.q1), "q2": to_json(p.q2),
                        "joins": p.q1.join_count(), "truth": p.rate,
                        "est": est, "qerror": rate_qerror(p.rate, est, eps)})
    qs = [s["qerror"] for s in samples]
    return RateEvalReport(summarize_qerrors(qs), _grouped_stats(samples), samples)


def eval_cardinality(estimator: Callable[[Query], float],
                     queries: Sequence[LabeledQuery]) -> CardEvalReport:
    if not queries:
        raise ValueError("no queries to evaluate")
    samples = []
    for lq in queries:
        est = estimator(lq.query)
        samples.append({"query": to_json(lq.query), "joins": lq.query.join_count(),
                        "truth": lq.card, "est": est,
                        "qerror": card_qerror(lq.card, est)})
    qs = [s["qerror"] for s in samples]
    return CardEvalReport(summarize_qerrors(qs), _grouped_stats(samples), samples)


# ---------------------------------------------------------------------------
# CSV output (repr-formatted floats; byte-stable across runs)

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_samples_csv(path: str | Path, samples: list[dict]) -> None:
    if not samples:
        raise ValueError("no samples to write")
    fields = list(samples[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for s in samples:
            writer.writerow([_fmt(s[f]) for f in fields])


STATS_CSV_FIELDS = ["workload", "model", "joins",
                    "p50", "p75", "p90", "p95", "p99", "max", "mean", "n"]


def write_stats_csv(path: str | Path, workload: str, model: str,
                    overall: QErrorStats,
                    by_joins: dict[int, QErrorStats] | None = None) -> None:
    """One row for the whole workload (joins column "all") and one per
    join-count slice."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATS_CSV_FIELDS)
        rows = [("all", overall)] + [(str(j), st) for j, st in (by_joins or {}).items()]
        for joins, st in rows:
            writer.writerow([workload, model, joins]
                            + [_fmt(st.row()[f]) for f in STATS_CSV_FIELDS[3:]])
