"""
test_metrics.py — Recency / popularity scoring and the six path-quality metrics.

  Layer 1 — EWMA scoring   : IR and EP recurrences, normalisation, oracle
  Layer 2 — List metrics   : worked values and error cases
  Layer 3 — Properties     : randomised oracle, ranges, permutation invariance

Run:  python test_metrics.py
"""

from __future__ import annotations

import math

import numpy as np

from harness import build_graph, run_layers
from kg.errors import MetricInputError, UndefinedMetricError
from kg.store import Direction, Hop, InteractionLog, ReasoningPath
from quality.metrics import (
    MetricContext,
    PopularityTable,
    RecencyTable,
    build_recency_table,
    entity_popularity,
    evaluate_metric,
    interaction_recency,
    lid,
    lir,
    path_quality,
    popularity_scores,
    ptc,
    ptd,
    sed,
    sep,
)

F, B = Direction.FORWARD, Direction.BACKWARD
FEEDBACK = 99


def _path(linked: int, shared: int, ptype: int, terminal: int, origin: int = 0) -> ReasoningPath:
    return ReasoningPath(origin, (
        Hop(FEEDBACK, F, linked),
        Hop(ptype, B, shared),
        Hop(ptype, F, terminal),
    ))


def _close(a: float, b: float, tol: float = 1e-12) -> bool:
    return abs(a - b) <= tol


# ── Layer 1 — EWMA scoring ───────────────────────────────────────────────────

def test_constant_timestamps_normalise_to_one():
    """timestamps [5,5,5] → [1,1,1]"""
    assert interaction_recency([(1, 5), (2, 5), (3, 5)], 0.3) == [1.0, 1.0, 1.0]


def test_single_interaction_is_one():
    assert interaction_recency([(1, 42)], 0.3) == [1.0]


def test_two_timestamps_half_decay():
    """timestamps [0,100], β=0.5 → raw [0,50] → [0,1]"""
    assert interaction_recency([(1, 0), (2, 100)], 0.5) == [0.0, 1.0]


def test_recency_errors():
    for bad in ([], [(1, 10), (2, 5)]):
        try:
            interaction_recency(bad, 0.3)
        except MetricInputError:
            continue
        raise AssertionError(f"expected MetricInputError for {bad}")
    try:
        interaction_recency([(1, 1)], 0.0)
    except MetricInputError:
        pass
    else:
        raise AssertionError("β=0 must be rejected")


def test_recency_table_uses_latest_repeat():
    log = InteractionLog.from_rows([(0, 7, 0), (0, 8, 50), (0, 7, 100)])
    table = build_recency_table(log, 1.0)
    assert table.score(0, 7) == 1.0
    assert table.score(0, 8) == 0.5


def test_popularity_two_directors():
    """in-degrees [2, 20], β=1 → [0, 1]"""
    entities = [("u", "user"), ("d_small", "director"), ("d_big", "director")]
    entities += [(f"m{i}", "product") for i in range(20)]
    triples = [("d_small", "directed", f"m{i}") for i in range(2)]
    triples += [("d_big", "directed", f"m{i}") for i in range(20)]
    g = build_graph(entities, triples)
    table = entity_popularity(g, 1.0)
    assert table.in_degree[g.entity_id("d_small")] == 2
    assert table.in_degree[g.entity_id("d_big")] == 20
    assert table.score(g.entity_id("d_small")) == 0.0
    assert table.score(g.entity_id("d_big")) == 1.0


def test_popularity_equal_degrees():
    scores, _ = popularity_scores({1: 3, 2: 3, 3: 3}, 0.3)
    assert set(scores.values()) == {1.0}


def test_popularity_half_decay():
    """in-degrees [1,2,4], β=0.5 → raw [1,1.5,2.75] → [0, 0.2857, 1]"""
    scores, raw = popularity_scores({10: 1, 11: 2, 12: 4}, 0.5)
    assert [raw[10], raw[11], raw[12]] == [1.0, 1.5, 2.75]
    assert scores[10] == 0.0 and scores[12] == 1.0
    assert _close(scores[11], 0.5 / 1.75)


def test_single_entity_type_scores_one():
    scores, _ = popularity_scores({5: 17}, 0.3)
    assert scores == {5: 1.0}


def test_ewma_oracle_and_monotone():
    """random sorted series: recurrence oracle, monotone, β=1 equals min-max"""
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 201))
        stamps = np.sort(rng.integers(0, 10**6, size=n)).tolist()
        for beta in (0.1, 0.3, 0.5, 1.0):
            got = interaction_recency([(i, t) for i, t in enumerate(stamps)], beta)
            raw = []
            for i, t in enumerate(stamps):
                raw.append(float(t) if i == 0 else (1 - beta) * raw[-1] + beta * t)
            lo, hi = min(raw), max(raw)
            ref = [1.0] * n if hi == lo else [(r - lo) / (hi - lo) for r in raw]
            assert all(_close(a, b) for a, b in zip(got, ref))
            assert all(b >= a - 1e-12 for a, b in zip(got, got[1:]))
            if beta == 1.0:
                tlo, thi = min(stamps), max(stamps)
                exact = [1.0] * n if thi == tlo else [(t - tlo) / (thi - tlo) for t in stamps]
                assert all(_close(a, b) for a, b in zip(got, exact))


# ── Layer 2 — List metrics ───────────────────────────────────────────────────

def _recency(scores: dict[int, float]) -> RecencyTable:
    return RecencyTable(beta=0.3, scores={0: scores}, raw={0: dict(scores)})


def _popularity(scores: dict[int, float]) -> PopularityTable:
    return PopularityTable(beta=0.3, scores=scores, raw=dict(scores), in_degree={e: 1 for e in scores})


def test_lir_values():
    rec = _recency({1: 0.0, 2: 1.0})
    assert lir([_path(2, 10, 0, 100), _path(2, 11, 0, 101)], rec) == 1.0
    assert lir([_path(1, 10, 0, 100)], rec) == 0.0
    assert lir([_path(1, 10, 0, 100), _path(2, 11, 0, 101)], rec) == 0.5


def test_lid_values():
    ten_distinct = [_path(1 + i, 50, 0, 100 + i) for i in range(10)]
    ten_same = [_path(1, 50 + i, 0, 100 + i) for i in range(10)]
    assert lid(ten_distinct) == 1.0
    assert lid(ten_same) == 0.1
    five = [_path(e, 50 + i, 0, 100 + i) for i, e in enumerate([1, 1, 2, 3, 3])]
    assert lid(five) == 0.6


def test_sep_values():
    pop = _popularity({10: 1.0, 11: 0.0, 12: 0.2, 13: 0.8})
    assert sep([_path(1, 10, 0, 100)], pop) == 1.0
    assert sep([_path(1, 11, 0, 100)], pop) == 0.0
    assert _close(sep([_path(1, 12, 0, 100), _path(2, 13, 0, 101)], pop), 0.5)


def test_sep_missing_entity():
    try:
        sep([_path(1, 77, 0, 100)], _popularity({10: 1.0}))
    except MetricInputError as exc:
        assert "77" in str(exc)
    else:
        raise AssertionError("expected MetricInputError")


def test_sed_values():
    assert sed([_path(1, 10 + i, 0, 100 + i) for i in range(10)]) == 1.0
    assert sed([_path(1 + i, 10, 0, 100 + i) for i in range(10)]) == 0.1
    assert _close(sed([_path(1, 10, 0, 100), _path(2, 10, 0, 101), _path(3, 11, 0, 102)]), 2 / 3)


def test_ptd_values():
    same = [_path(1 + i, 10, 0, 100 + i) for i in range(10)]
    distinct = [_path(1 + i, 10, i, 100 + i) for i in range(10)]
    four = [_path(1 + i, 10, i % 4, 100 + i) for i in range(10)]
    assert ptd(same, 10) == 0.1
    assert ptd(distinct, 10) == 1.0
    assert ptd(four, 12) == 0.4


def test_ptc_values():
    same = [_path(1 + i, 10, 0, 100 + i) for i in range(10)]
    distinct = [_path(1 + i, 10, i, 100 + i) for i in range(10)]
    halves = [_path(1 + i, 10, i % 2, 100 + i) for i in range(10)]
    assert ptc(same) == 0.0
    assert ptc(distinct) == 1.0
    assert _close(ptc(halves), 5 / 9)


def test_empty_and_short_lists():
    for fn in (lid, sed):
        try:
            fn([])
        except UndefinedMetricError:
            continue
        raise AssertionError(f"{fn.__name__} accepted an empty list")
    try:
        ptc([_path(1, 10, 0, 100)])
    except UndefinedMetricError:
        pass
    else:
        raise AssertionError("ptc accepted a single path")


def test_path_quality_reports_missing_ptc():
    ctx = MetricContext(_recency({1: 1.0}), _popularity({10: 0.5}), num_relation_types=4)
    q = path_quality([_path(1, 10, 0, 100)], ctx)
    assert q["ptc"] is None
    assert q["lir"] == 1.0 and q["sep"] == 0.5 and q["ptd"] == 1.0


def test_unknown_metric_name():
    ctx = MetricContext(_recency({}), _popularity({}), num_relation_types=1)
    try:
        evaluate_metric("nope", [], ctx)
    except MetricInputError:
        pass
    else:
        raise AssertionError("expected MetricInputError")


# ── Layer 3 — Properties ─────────────────────────────────────────────────────

def _oracle(paths, rec_scores, pop_scores, n_rel):
    n = len(paths)
    out = {
        "lir": sum(rec_scores[p.hops[0].entity] for p in paths) / n,
        "lid": len({p.hops[0].entity for p in paths}) / n,
        "sep": sum(pop_scores[p.hops[1].entity] for p in paths) / n,
        "sed": len({p.hops[1].entity for p in paths}) / n,
        "ptd": len({p.hops[-1].relation for p in paths}) / min(n, n_rel),
    }
    if n >= 2:
        same = sum(
            1 for i in range(n) for j in range(n)
            if i != j and paths[i].hops[-1].relation == paths[j].hops[-1].relation
        )
        out["ptc"] = 1 - same / (n * (n - 1))
    else:
        out["ptc"] = None
    return out


def test_random_lists_match_oracle():
    """1000 random lists: oracle within 1e-12, ranges, permutation invariance"""
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(1, 101))
        n_rel = int(rng.integers(1, 15))
        rec_scores = {p: float(rng.random()) for p in range(1, 11)}
        pop_scores = {e: float(rng.random()) for e in range(11, 31)}
        paths = [
            _path(int(rng.integers(1, 11)), int(rng.integers(11, 31)), int(rng.integers(0, n_rel)), 1000 + i)
            for i in range(n)
        ]
        ctx = MetricContext(_recency(rec_scores), _popularity(pop_scores), n_rel)
        got = path_quality(paths, ctx)
        ref = _oracle(paths, rec_scores, pop_scores, n_rel)
        for name, value in ref.items():
            if value is None:
                assert got[name] is None
                continue
            assert _close(got[name], value), (name, got[name], value)
            assert 0.0 <= got[name] <= 1.0
        for name in ("lid", "sed"):
            assert _close(got[name] * n, round(got[name] * n))
        shuffled = [paths[i] for i in rng.permutation(n)]
        again = path_quality(shuffled, ctx)
        for name in ref:
            if ref[name] is not None:
                assert _close(again[name], got[name])
        assert math.isfinite(got["lir"])


if __name__ == "__main__":
    run_layers([
        ("LAYER 1 — EWMA scoring", [
            test_constant_timestamps_normalise_to_one, test_single_interaction_is_one,
            test_two_timestamps_half_decay, test_recency_errors, test_recency_table_uses_latest_repeat,
            test_popularity_two_directors, test_popularity_equal_degrees, test_popularity_half_decay,
            test_single_entity_type_scores_one, test_ewma_oracle_and_monotone,
        ]),
        ("LAYER 2 — List metrics", [
            test_lir_values, test_lid_values, test_sep_values, test_sep_missing_entity,
            test_sed_values, test_ptd_values, test_ptc_values, test_empty_and_short_lists,
            test_path_quality_reports_missing_ptc, test_unknown_metric_name,
        ]),
        ("LAYER 3 — Properties", [test_random_lists_match_oracle]),
    ])
