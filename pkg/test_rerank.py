"""
test_rerank.py — Greedy marginal-relevance re-ranking.

  Layer 1 — Hand cases  : α=0, α=1 recency, diversity swap, exclusion
  Layer 2 — Oracles     : α=0 against top-n, brute-force greedy, α=1 lifts the metric

Run:  python test_rerank.py
"""

from __future__ import annotations

import numpy as np
from pydantic import ValidationError

from harness import run_layers
from kg.store import Direction, Hop, ReasoningPath
from models.sampler import Candidate, CandidateSet, select_best_paths, top_n
from quality.metrics import METRIC_NAMES, MetricContext, PopularityTable, RecencyTable, evaluate_metric
from quality.rerank import RerankConfig, marginal_gain, q_scores, rerank

F, B = Direction.FORWARD, Direction.BACKWARD


def _cand(linked: int, shared: int, product: int, prob: float, rel: float, ptype: int = 1) -> Candidate:
    path = ReasoningPath(0, (Hop(0, F, linked), Hop(ptype, B, shared), Hop(ptype, F, product)))
    return Candidate(path, prob, rel)


def _ctx(recency: dict[int, float], popularity: dict[int, float], n_rel: int = 4) -> MetricContext:
    return MetricContext(
        recency=RecencyTable(beta=0.3, scores={0: recency}, raw={0: dict(recency)}),
        popularity=PopularityTable(beta=0.3, scores=popularity, raw=dict(popularity),
                                   in_degree={e: 1 for e in popularity}),
        num_relation_types=n_rel,
    )


def _random_pool(rng):
    n_rel = int(rng.integers(1, 6))
    recency = {e: float(rng.random()) for e in range(1, 6)}
    popularity = {e: float(rng.random()) for e in range(10, 21)}
    products = list(range(100, 100 + int(rng.integers(1, 16))))
    product_rel = {p: float(rng.normal()) for p in products}
    cands = []
    for p in products:
        for _ in range(int(rng.integers(1, 4))):
            cands.append(_cand(
                int(rng.integers(1, 6)), int(rng.integers(10, 21)), p,
                float(rng.random()), product_rel[p], int(rng.integers(0, n_rel)),
            ))
    # distinct path ids only
    uniq = {c.path.path_id: c for c in cands}
    return CandidateSet.of(0, list(uniq.values())), _ctx(recency, popularity, n_rel)


# ── Layer 1 — Hand cases ─────────────────────────────────────────────────────

def test_alpha_zero_is_relevance_order():
    cands = CandidateSet.of(0, [
        _cand(1, 10, 100, 0.3, 0.2), _cand(2, 11, 101, 0.1, 0.9), _cand(1, 12, 101, 0.6, 0.9),
    ])
    ranked = rerank(cands, RerankConfig(alpha=0.0, metrics=("lir",), n=5), _ctx({1: 0.0, 2: 1.0}, {}))
    assert ranked.products == [101, 100]
    assert ranked.items[0].prob == 0.6
    assert ranked.short


def test_alpha_one_picks_most_recent_link():
    cands = CandidateSet.of(0, [
        _cand(1, 10, 100, 0.9, 5.0), _cand(2, 11, 101, 0.1, -3.0), _cand(3, 12, 102, 0.5, 1.0),
    ])
    ctx = _ctx({1: 0.2, 2: 0.9, 3: 0.5}, {})
    ranked = rerank(cands, RerankConfig(alpha=1.0, metrics=("lir",), n=1), ctx)
    assert ranked.products == [101] and not ranked.short


def test_diversity_swaps_second_pick():
    cands = CandidateSet.of(0, [
        _cand(1, 20, 100, 0.5, 0.9), _cand(2, 20, 101, 0.5, 0.8), _cand(3, 21, 102, 0.5, 0.1),
    ])
    ctx = _ctx({}, {})
    assert rerank(cands, RerankConfig(alpha=0.0, n=2), ctx).products == [100, 101]
    assert rerank(cands, RerankConfig(alpha=1.0, metrics=("sed",), n=2), ctx).products == [100, 102]


def test_marginal_gain_edges():
    ctx = _ctx({1: 0.4}, {20: 0.6})
    a, b = _cand(1, 20, 100, 0.5, 0.0).path, _cand(1, 20, 101, 0.5, 0.0, ptype=2).path
    assert marginal_gain("lir", [], a, ctx) == 0.4
    assert marginal_gain("sep", [a], b, ctx) == 0.0
    assert marginal_gain("ptc", [a], b, ctx) == 0.0
    c = _cand(1, 20, 102, 0.5, 0.0, ptype=3).path
    assert marginal_gain("ptc", [a, b], c, ctx) == 0.0
    assert marginal_gain("lid", [a], b, ctx) == -0.5


def test_q_mixes_raw_relevance():
    """relevance enters Q unscaled, even outside [0, 1]"""
    ctx = _ctx({1: 0.4, 2: 0.1}, {20: 0.6})
    pool = [_cand(1, 20, 100, 0.5, 7.0), _cand(2, 20, 101, 0.5, -3.0)]
    got = q_scores(pool, [], RerankConfig(alpha=0.5, metrics=("lir",), n=2), ctx)
    assert abs(got[0] - (0.5 * 7.0 + 0.5 * 0.4)) < 1e-12
    assert abs(got[1] - (0.5 * -3.0 + 0.5 * 0.1)) < 1e-12


def test_excluded_products_never_returned():
    cands = CandidateSet.of(0, [_cand(1, 10, 100, 0.5, 0.9), _cand(1, 11, 101, 0.5, 0.1)])
    ranked = rerank(cands, RerankConfig(alpha=0.5, metrics=("sed",), n=2), _ctx({}, {}),
                    exclude=frozenset({100}))
    assert ranked.products == [101] and ranked.short


def test_config_validation():
    for bad in ({"alpha": 1.2}, {"metrics": ("nope",)}, {"n": 0}):
        try:
            RerankConfig(**bad)
        except ValidationError:
            continue
        raise AssertionError(f"accepted {bad}")


# ── Layer 2 — Oracles ────────────────────────────────────────────────────────

def test_alpha_zero_matches_top_n():
    rng = np.random.default_rng(41)
    for _ in range(300):
        cands, ctx = _random_pool(rng)
        n = int(rng.integers(1, 12))
        expected = top_n(select_best_paths(cands), n=n)
        got = rerank(cands, RerankConfig(alpha=0.0, metrics=("lir", "sed"), n=n), ctx)
        assert got == expected


def _greedy_oracle(cands: CandidateSet, config: RerankConfig, ctx: MetricContext) -> list[Candidate]:
    pool = cands.candidates()
    chosen: list[Candidate] = []
    while pool and len(chosen) < config.n:
        prefix = [c.path for c in chosen]
        best, best_key = None, None
        for c in pool:
            gain = 0.0
            for m in config.metrics:
                after = evaluate_metric(m, prefix + [c.path], ctx) if (m != "ptc" or len(prefix) >= 2) else 0.0
                before = evaluate_metric(m, prefix, ctx) if (prefix and (m != "ptc" or len(prefix) >= 2)) else 0.0
                gain += after - before
            q = (1 - config.alpha) * c.relevance + config.alpha * gain
            key = (-q, -c.relevance, -c.prob, c.path.path_id)
            if best_key is None or key < best_key:
                best, best_key = c, key
        chosen.append(best)
        pool = [c for c in pool if c.product != best.product]
    return chosen


def test_greedy_matches_brute_force():
    rng = np.random.default_rng(43)
    for _ in range(300):
        cands, ctx = _random_pool(rng)
        k = int(rng.integers(1, 4))
        metrics = tuple(rng.choice(METRIC_NAMES, size=k, replace=False).tolist())
        config = RerankConfig(alpha=float(rng.choice([0.25, 0.5, 0.75, 1.0])), metrics=metrics,
                              n=int(rng.integers(1, 12)))
        got = rerank(cands, config, ctx)
        expected = _greedy_oracle(cands, config, ctx)
        assert list(got.items) == expected
        assert len(set(got.products)) == len(got.products)
        assert got.short == (len(got.items) < config.n)
        assert len(got.items) == min(config.n, len({c.product for c in cands.candidates()}))


def test_alpha_one_raises_target_metric():
    rng = np.random.default_rng(47)
    pools = [_random_pool(rng) for _ in range(150)]
    for metric in ("lir", "sep", "ptd"):
        low, high = [], []
        for cands, ctx in pools:
            for alpha, out in ((0.0, low), (1.0, high)):
                ranked = rerank(cands, RerankConfig(alpha=alpha, metrics=(metric,), n=10), ctx)
                out.append(evaluate_metric(metric, ranked.paths, ctx))
            if metric != "ptd":
                # greedy on a mean over one path per product is optimal
                assert high[-1] >= low[-1] - 1e-9
        assert np.mean(high) >= np.mean(low) - 1e-12, f"{metric}: {np.mean(high):.3f} < {np.mean(low):.3f}"


if __name__ == "__main__":
    run_layers([
        ("LAYER 1 — Hand cases", [
            test_alpha_zero_is_relevance_order, test_alpha_one_picks_most_recent_link,
            test_diversity_swaps_second_pick, test_marginal_gain_edges, test_q_mixes_raw_relevance,
            test_excluded_products_never_returned, test_config_validation,
        ]),
        ("LAYER 2 — Oracles", [
            test_alpha_zero_matches_top_n, test_greedy_matches_brute_force,
            test_alpha_one_raises_target_metric,
        ]),
    ])
