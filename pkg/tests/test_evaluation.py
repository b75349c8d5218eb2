"""Q-error metrics, nearest-rank percentiles and report/CSV writers."""

from __future__ import annotations

import pytest

from concard.estimators import ExactCardinality, crd2cnt
from concard.evaluation import (DEFAULT_RATE_EPS, STATS_CSV_FIELDS,
                                card_qerror, eval_cardinality,
                                eval_containment, percentile_nearest_rank,
                                rate_qerror, summarize_qerrors,
                                write_samples_csv, write_stats_csv)
from concard.qgen import (GenConfig, LabeledPair, LabeledQuery,
                          generate_workload)
from concard.querymodel import make_query
from concard.relstore import cardinality


def test_percentile_nearest_rank_hand_cases():
    vals = [9.0, 1.0, 4.0, 7.0]  # sorted: 1 4 7 9
    assert percentile_nearest_rank(vals, 50) == 4.0
    assert percentile_nearest_rank(vals, 51) == 7.0
    assert percentile_nearest_rank(vals, 75) == 7.0
    assert percentile_nearest_rank(vals, 100) == 9.0
    assert percentile_nearest_rank(vals, 1) == 1.0
    assert percentile_nearest_rank([5.0], 99) == 5.0


def test_percentile_rejects_bad_inputs():
    with pytest.raises(ValueError):
        percentile_nearest_rank([], 50)
    for p in (0.0, -3.0, 100.5):
        with pytest.raises(ValueError):
            percentile_nearest_rank([1.0], p)


def test_summarize_matches_percentiles():
    vals = [float(v) for v in (3, 1, 4, 1, 5, 9, 2, 6)]
    st = summarize_qerrors(vals)
    assert st.n == 8
    assert st.mean == pytest.approx(sum(vals) / 8)
    assert st.max == 9.0
    for p in (50, 75, 90, 95, 99):
        assert getattr(st, f"p{p}") == percentile_nearest_rank(vals, p)
    with pytest.raises(ValueError):
        summarize_qerrors([])


def test_rate_qerror_floors():
    assert rate_qerror(0.0, 0.0) == 1.0
    assert rate_qerror(0.0, 1.0) == pytest.approx(1.0 / DEFAULT_RATE_EPS)
    assert rate_qerror(0.5, 0.25) == pytest.approx(2.0)
    assert rate_qerror(0.25, 0.5) == pytest.approx(2.0)
    assert rate_qerror(0.0, 0.0005) == 1.0  # both under the floor
    assert rate_qerror(0.2, 0.4, eps=0.5) == 1.0  # custom floor


def test_card_qerror_floors():
    assert card_qerror(0.0, 0.0) == 1.0
    assert card_qerror(0.0, 10.0) == 10.0
    assert card_qerror(10.0, 0.5) == 10.0
    assert card_qerror(400.0, 100.0) == 4.0
    assert card_qerror(100.0, 400.0) == 4.0


def test_eval_containment_grouping(small_db):
    rate = crd2cnt(ExactCardinality(small_db))
    wl = generate_workload(small_db, GenConfig(
        n_initial=10, perturbations_per_query=1, cross_pair_factor=0.5,
        max_joins=2, seed=14))
    pairs = (wl.train + wl.test)[:60]
    rep = eval_containment(rate, pairs)
    assert rep.overall.n == len(pairs)
    assert sum(st.n for st in rep.by_joins.values()) == len(pairs)
    assert set(rep.by_joins) == {p.q1.join_count() for p in pairs}
    # the exact estimator scores a perfect 1.0 everywhere
    assert rep.overall.max == 1.0
    assert len(rep.samples) == len(pairs)
    assert {"q1", "q2", "joins", "truth", "est", "qerror"} <= rep.samples[0].keys()
    with pytest.raises(ValueError):
        eval_containment(rate, [])


def test_eval_cardinality_grouping(small_db):
    queries = [LabeledQuery(q, cardinality(q, small_db)) for q in
               (lq.query for lq in generate_workload(
                   small_db, GenConfig(n_initial=12, perturbations_per_query=0,
                                       cross_pair_factor=0.1, max_joins=2,
                                       seed=25)).queries)]
    rep = eval_cardinality(lambda q: 2.0 * cardinality(q, small_db), queries)
    assert rep.overall.n == len(queries)
    nonzero = [lq for lq in queries if lq.card >= 1]
    assert any(s["qerror"] == pytest.approx(2.0) for s in rep.samples
               if s["truth"] >= 1)
    assert all(s["qerror"] <= 2.0 for s in rep.samples)
    assert len(nonzero) > 0
    with pytest.raises(ValueError):
        eval_cardinality(lambda q: 1.0, [])


def test_samples_csv_bytes_stable(tmp_path):
    samples = [{"query": "q0", "joins": 1, "truth": 7, "est": 6.999999999999999,
                "qerror": 1.0000000000000002},
               {"query": "q1", "joins": 0, "truth": 2, "est": 4.0, "qerror": 2.0}]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_samples_csv(p1, samples)
    write_samples_csv(p2, samples)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "query,joins,truth,est,qerror"
    assert lines[1] == "q0,1,7,6.999999999999999,1.0000000000000002"
    with pytest.raises(ValueError):
        write_samples_csv(tmp_path / "c.csv", [])


def test_stats_csv_layout(tmp_path):
    vals = [1.0, 2.0, 4.0]
    st = summarize_qerrors(vals)
    path = tmp_path / "stats.csv"
    write_stats_csv(path, "wl0", "exact", st, {0: st, 2: st})
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(STATS_CSV_FIELDS)
    assert len(lines) == 4  # header + "all" + two join slices
    assert lines[1].startswith("wl0,exact,all,")
    assert lines[2].startswith("wl0,exact,0,")
    assert lines[3].startswith("wl0,exact,2,")
    cells = lines[1].split(",")
    assert cells[3] == repr(st.p50)
    assert cells[-1] == "3"
