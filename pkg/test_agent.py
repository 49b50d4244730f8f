"""
test_agent.py — Path-reasoning MDP, explanation-augmented scoring and REINFORCE.

  Layer 1 — MDP            : initial state, transitions, action spaces
  Layer 2 — Scoring        : action scores by hand, pruning oracle, terminal reward
  Layer 3 — Policy         : distributions, checkpoints, determinism
  Layer 4 — Learning       : two-armed bandit, single rewarded path

Run:  python test_agent.py
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
import torch
from pydantic import ValidationError

from harness import build_graph, movie_graph, random_graph, run_layers
from kg.errors import PathStructureError, UnknownEntityError
from kg.store import Direction, Hop, exclusion_token
from models.agent import (
    AgentState,
    ExplorationContext,
    PolicyModel,
    RewardConfig,
    action_space,
    initial_state,
    load_policy,
    prune_action_space,
    reward,
    save_policy,
    score_action,
    train_policy,
    transition,
)
from models.embeddings import EmbeddingTable, init_table, relevance
from quality.metrics import PopularityTable, RecencyTable

F, B = Direction.FORWARD, Direction.BACKWARD


def _movie_fixture():
    g = movie_graph()
    u, m1, m2, d = (g.entity_id(n) for n in ("user_1", "movie_1", "movie_2", "director_1"))
    vectors = np.zeros((g.num_entities, 2))
    vectors[u] = [1.0, 0.0]
    vectors[m1] = [1.0, 1.0]
    vectors[m2] = [0.0, 2.0]
    vectors[d] = [0.5, 0.0]
    table = EmbeddingTable(
        entity_vectors=vectors,
        relation_vectors=np.ones((g.num_relations, 2)),
        entity_bias=np.zeros(g.num_entities),
    )
    ctx = ExplorationContext(
        recency=RecencyTable(beta=0.3, scores={u: {m1: 0.7}}, raw={u: {m1: 0.7}}),
        popularity=PopularityTable(
            beta=0.3,
            scores={u: 1.0, m1: 0.2, m2: 0.9, d: 0.4},
            raw={u: 1.0, m1: 0.2, m2: 0.9, d: 0.4},
            in_degree={u: 1, m1: 2, m2: 1, d: 2},
        ),
    )
    return g, table, ctx, (u, m1, m2, d)


def _empty_ctx() -> ExplorationContext:
    return ExplorationContext(
        recency=RecencyTable(beta=0.3, scores={}, raw={}),
        popularity=PopularityTable(beta=0.3, scores={}, raw={}, in_degree={}),
    )


def _walk(g, u, m1, d, m2):
    watched, directed = g.relation_id("watched"), g.relation_id("directed")
    s0 = initial_state(u, g)
    s1 = transition(s0, Hop(watched, F, m1))
    s2 = transition(s1, Hop(directed, B, d))
    s3 = transition(s2, Hop(directed, F, m2))
    return s0, s1, s2, s3


def _random_states(rng, graph, steps: int = 3):
    """Random walks through the unpruned action space from every user."""
    for user in sorted(graph.users):
        state = initial_state(user, graph)
        yield state
        for _ in range(steps):
            actions = action_space(state, graph)
            if not actions:
                break
            state = transition(state, actions[int(rng.integers(len(actions)))])
            yield state


# ── Layer 1 — MDP ────────────────────────────────────────────────────────────

def test_initial_state():
    g, _, _, (u, m1, _, _) = _movie_fixture()
    s = initial_state(u, g)
    assert (s.user, s.current, s.history, s.step) == (u, u, (), 0)
    try:
        initial_state(m1, g)
    except UnknownEntityError:
        pass
    else:
        raise AssertionError("a product is not a valid start")


def test_movie_walk_action_spaces():
    g, _, _, (u, m1, m2, d) = _movie_fixture()
    s0, s1, s2, s3 = _walk(g, u, m1, d, m2)
    watched, directed = g.relation_id("watched"), g.relation_id("directed")
    assert action_space(s0, g) == (Hop(watched, F, m1),)
    assert action_space(s1, g) == (Hop(directed, B, d),)
    assert action_space(s2, g) == (Hop(directed, F, m2),)
    assert s3.path().entities == (u, m1, d, m2)


def test_relation_exclusion_modes():
    g, _, _, (u, m1, m2, d) = _movie_fixture()
    _, _, s2, _ = _walk(g, u, m1, d, m2)
    # `directed` was already used backward, so "relation" blocks the forward hop
    assert action_space(s2, g, "relation") == ()
    assert len(action_space(s2, g, "none")) == 1


def test_action_space_properties():
    rng = np.random.default_rng(21)
    for _ in range(100):
        graph, _ = random_graph(rng)
        for state in _random_states(rng, graph):
            actions = action_space(state, graph)
            visited = set(state.path().entities) if state.history else {state.user}
            used = {exclusion_token(h, "directed") for h in state.history}
            keys = [(a.relation, a.entity, a.direction.value) for a in actions]
            assert keys == sorted(keys)
            for a in actions:
                assert graph.has_edge(state.current, a)
                assert a.entity not in visited
                assert exclusion_token(a, "directed") not in used
            if state.history:
                assert graph.is_valid_path(state.path())


# ── Layer 2 — Scoring ────────────────────────────────────────────────────────

def test_score_action_alpha_zero_is_relevance():
    g, table, ctx, (u, m1, m2, d) = _movie_fixture()
    s0, s1, s2, _ = _walk(g, u, m1, d, m2)
    cfg = RewardConfig(alpha=0.0, metrics=("lir", "sep", "ptd"))
    for state in (s0, s1, s2):
        a = action_space(state, g)[0]
        assert score_action(state, a, g, table, cfg, ctx) == relevance(table, state.current, a.entity)


def test_score_action_first_hop_uses_linking_recency():
    g, table, ctx, (u, m1, _, _) = _movie_fixture()
    s0 = initial_state(u, g)
    a = action_space(s0, g)[0]
    assert score_action(s0, a, g, table, RewardConfig(alpha=1.0, metrics=("lir",)), ctx) == 0.7
    assert score_action(s0, a, g, table, RewardConfig(alpha=1.0, metrics=("sep", "ptd")), ctx) == 0.0


def test_score_action_later_hops():
    g, table, ctx, (u, m1, m2, d) = _movie_fixture()
    _, s1, s2, _ = _walk(g, u, m1, d, m2)
    full = RewardConfig(alpha=1.0, metrics=("lir", "sep", "ptd"))
    half = RewardConfig(alpha=0.5, metrics=("lir", "sep", "ptd"))
    a1 = action_space(s1, g)[0]
    # shared entity is the director reached by this hop
    assert math.isclose(score_action(s1, a1, g, table, full, ctx), 0.7 + 0.4 + 1.0)
    assert math.isclose(score_action(s1, a1, g, table, half, ctx), 0.5 * 0.5 + 0.5 * 2.1)
    a2 = action_space(s2, g)[0]
    assert math.isclose(score_action(s2, a2, g, table, full, ctx), 2.1)
    ctx.mark_seen(u, g.relation_id("directed"))
    assert math.isclose(score_action(s2, a2, g, table, full, ctx), 1.1)
    ctx.reset()
    assert ctx.ptd_bonus(u, g.relation_id("directed")) == 1.0


def test_score_action_rejects_unavailable():
    g, table, ctx, (u, _, m2, _) = _movie_fixture()
    s0 = initial_state(u, g)
    try:
        score_action(s0, Hop(g.relation_id("watched"), F, m2), g, table, RewardConfig(), ctx)
    except PathStructureError:
        pass
    else:
        raise AssertionError("expected PathStructureError")


def test_prune_keeps_top_scores():
    rng = np.random.default_rng(8)
    for trial in range(60):
        graph, log = random_graph(rng)
        table = init_table(graph.num_entities, graph.num_relations, 4, trial)
        ctx = ExplorationContext(
            recency=RecencyTable(
                beta=0.3,
                scores={u: {it.product: float(rng.random()) for it in log.get(u)} for u in log.users()},
                raw={},
            ),
            popularity=PopularityTable(
                beta=0.3,
                scores={e: float(rng.random()) for e in range(graph.num_entities)},
                raw={}, in_degree={},
            ),
        )
        z = int(rng.integers(1, 4))
        cfg = RewardConfig(alpha=float(rng.choice([0.0, 0.5, 1.0])), metrics=("lir", "sep", "ptd"),
                           prune_sizes=(z, z, z))
        for state in _random_states(rng, graph):
            full = action_space(state, graph)
            kept = prune_action_space(state, graph, table, cfg, ctx)
            assert len(kept) == min(z, len(full))
            assert set(kept) <= set(full)
            score = {a: score_action(state, a, graph, table, cfg, ctx) for a in full}
            kept_scores = [score[a] for a in kept]
            assert all(b <= a + 1e-9 for a, b in zip(kept_scores, kept_scores[1:]))
            dropped = [score[a] for a in full if a not in kept]
            if kept and dropped:
                assert min(kept_scores) >= max(dropped) - 1e-9


def test_reward_cases():
    g, table, ctx, (u, m1, m2, d) = _movie_fixture()
    _, s1, s2, s3 = _walk(g, u, m1, d, m2)
    plain = RewardConfig(alpha=0.0)
    full = RewardConfig(alpha=1.0, metrics=("lir", "sep", "ptd"))
    assert reward(s3, g, table, plain, ctx) == relevance(table, u, m2)
    assert math.isclose(reward(s3, g, table, full, ctx), 0.7 + 0.4 + 1.0)
    # wrong length or a non-product terminal earns nothing
    assert reward(s2, g, table, full, ctx) == 0.0
    assert reward(s1, g, table, RewardConfig(alpha=0.0, hop_count=1, prune_sizes=(5,)), ctx) == relevance(table, u, m1)
    short = RewardConfig(alpha=0.0, hop_count=2, prune_sizes=(5, 5))
    assert reward(s2, g, table, short, ctx) == 0.0


def test_reward_config_validation():
    for bad in ({"alpha": 1.5}, {"alpha": -0.1}, {"prune_sizes": (5, 5)}, {"prune_sizes": (5, 0, 5)},
                {"metrics": ("lid",)}):
        try:
            RewardConfig(**bad)
        except ValidationError:
            continue
        raise AssertionError(f"accepted {bad}")


# ── Layer 3 — Policy ─────────────────────────────────────────────────────────

def test_distribution_sums_to_one():
    rng = np.random.default_rng(3)
    for trial in range(30):
        graph, _ = random_graph(rng)
        table = init_table(graph.num_entities, graph.num_relations, 6, trial)
        torch.manual_seed(trial)
        model = PolicyModel(table, hidden_size=16)
        for state in _random_states(rng, graph):
            actions = action_space(state, graph)
            probs = model.action_distribution(state, actions)
            assert probs.shape == (len(actions),)
            if actions:
                assert abs(float(probs.sum()) - 1.0) < 1e-9
                assert bool((probs > 0).all())


def test_zero_learning_rate_keeps_init():
    g, table, _, _ = _movie_fixture()
    cfg = RewardConfig(prune_sizes=(5, 5, 5))
    trained = train_policy(g, table, cfg, _empty_ctx(), episodes=40, lr=0.0, seed=9, batch_size=4, hidden_size=8)
    torch.manual_seed(9)
    fresh = PolicyModel(table, hidden_size=8)
    assert torch.equal(trained.parameter_vector(), fresh.parameter_vector())


def test_same_seed_same_policy():
    rng = np.random.default_rng(4)
    graph, _ = random_graph(rng)
    table = init_table(graph.num_entities, graph.num_relations, 6, 0)
    cfg = RewardConfig(prune_sizes=(5, 5, 5))
    kwargs = dict(episodes=64, lr=0.01, batch_size=8, hidden_size=16)
    a = train_policy(graph, table, cfg, _empty_ctx(), seed=1, **kwargs)
    b = train_policy(graph, table, cfg, _empty_ctx(), seed=1, **kwargs)
    assert torch.equal(a.parameter_vector(), b.parameter_vector())


def test_policy_checkpoint():
    g, table, _, (u, _, _, _) = _movie_fixture()
    torch.manual_seed(2)
    model = PolicyModel(table, hidden_size=8)
    cfg = RewardConfig(alpha=0.4, metrics=("lir", "sep"), prune_sizes=(5, 3, 3))
    with tempfile.TemporaryDirectory() as tmp:
        bare, tagged = Path(tmp) / "policy.pt", Path(tmp) / "tagged.pt"
        save_policy(model, bare, extra={"seed": 2})
        save_policy(model, tagged, extra={"reward_config": cfg.model_dump(mode="json")})
        loaded = load_policy(bare, table)
        restored = load_policy(tagged, table)
    assert torch.equal(model.parameter_vector(), loaded.parameter_vector())
    assert loaded.reward_config is None
    assert restored.reward_config == cfg
    s0 = initial_state(u, g)
    actions = action_space(s0, g)
    assert torch.equal(model.action_distribution(s0, actions), loaded.action_distribution(s0, actions))


# ── Layer 4 — Learning ───────────────────────────────────────────────────────

def _greedy(model, graph, table, cfg, ctx, user) -> AgentState:
    state = initial_state(user, graph)
    with torch.no_grad():
        for _ in range(cfg.hop_count):
            actions = prune_action_space(state, graph, table, cfg, ctx)
            if not actions:
                break
            probs = model.action_distribution(state, actions)
            state = transition(state, actions[int(torch.argmax(probs))])
    return state


def test_bandit_prefers_rewarded_arm():
    """hop_count=1 with two products: the rewarded arm ends above 0.9"""
    g = build_graph(
        [("u", "user"), ("p1", "product"), ("p2", "product")],
        [("u", "interacted", "p1"), ("u", "interacted", "p2")],
    )
    u, p1 = g.entity_id("u"), g.entity_id("p1")
    table = init_table(g.num_entities, g.num_relations, 8, 0)
    cfg = RewardConfig(hop_count=1, prune_sizes=(2,))
    model = train_policy(
        g, table, cfg, _empty_ctx(), episodes=500, lr=0.05, seed=0, batch_size=1,
        hidden_size=16, reward_fn=lambda s: 1.0 if s.current == p1 else 0.0,
    )
    s0 = initial_state(u, g)
    actions = action_space(s0, g)
    with torch.no_grad():
        probs = model.action_distribution(s0, actions)
    assert float(probs[[a.entity for a in actions].index(p1)]) > 0.9


def test_single_rewarded_path_is_found():
    """22 candidate paths, one rewarded: greedy decoding finds it in 9 of 10 seeds"""
    entities = [("u", "user"), ("p0", "product"), ("p1", "product")]
    entities += [(f"a{j}", "attr") for j in range(22)]
    entities += [(f"q{j}", "product") for j in range(22)]
    triples = [("u", "interacted", "p0"), ("u", "interacted", "p1")]
    triples += [(f"p{j // 11}", "has", f"a{j}") for j in range(22)]
    triples += [(f"q{j}", "has", f"a{j}") for j in range(22)]
    g = build_graph(entities, triples)
    u, target = g.entity_id("u"), g.entity_id("q15")
    cfg = RewardConfig(hop_count=3, prune_sizes=(50, 50, 50))

    s0 = initial_state(u, g)
    paths = 0
    for a0 in action_space(s0, g):
        s1 = transition(s0, a0)
        for a1 in action_space(s1, g):
            paths += len(action_space(transition(s1, a1), g))
    assert paths == 22

    found = 0
    for seed in range(10):
        table = init_table(g.num_entities, g.num_relations, 8, seed)
        ctx = _empty_ctx()
        model = train_policy(
            g, table, cfg, ctx, episodes=2000, lr=0.01, seed=seed, batch_size=1,
            hidden_size=32, reward_fn=lambda s: 1.0 if s.current == target else 0.0,
        )
        if _greedy(model, g, table, cfg, ctx, u).current == target:
            found += 1
    assert found >= 9, found


if __name__ == "__main__":
    run_layers([
        ("LAYER 1 — MDP", [
            test_initial_state, test_movie_walk_action_spaces,
            test_relation_exclusion_modes, test_action_space_properties,
        ]),
        ("LAYER 2 — Scoring", [
            test_score_action_alpha_zero_is_relevance, test_score_action_first_hop_uses_linking_recency,
            test_score_action_later_hops, test_score_action_rejects_unavailable,
            test_prune_keeps_top_scores, test_reward_cases, test_reward_config_validation,
        ]),
        ("LAYER 3 — Policy", [
            test_distribution_sums_to_one, test_zero_learning_rate_keeps_init,
            test_same_seed_same_policy, test_policy_checkpoint,
        ]),
        ("LAYER 4 — Learning", [test_bandit_prefers_rewarded_arm, test_single_rewarded_path_is_found]),
    ])
