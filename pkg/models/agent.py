"""
models/agent.py — Path-reasoning MDP and REINFORCE policy training.

  state         (user, current entity, history of hops)
  actions       outgoing edges of the current entity, excluding visited entities
                and already-used relation tokens
  action score  (1 - α) relevance(current, e) + α Σ quality terms of the
                partial path; each action space is pruned to its top-scoring actions
  reward        (1 - α) relevance(user, product) + α Σ quality terms, paid
                on terminal product states only
  policy        MLP over [user, current, mean(history)] scored against each
                action's [±relation, entity] vector, softmaxed over the action set
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator
from torch import nn

from kg.errors import PathStructureError, UnknownEntityError
from kg.store import (
    Direction,
    Hop,
    KnowledgeGraph,
    ReasoningPath,
    RelationExclusion,
    exclusion_token,
    path_type,
)
from models.embeddings import EmbeddingTable, relevance, relevance_many
from quality.metrics import PopularityTable, RecencyTable

logger = logging.getLogger(__name__)

POLICY_FORMAT_VERSION = 1

AgentMetric = Literal["lir", "sep", "ptd"]


class RewardConfig(BaseModel):
    alpha: float = Field(0.0, ge=0.0, le=1.0)
    metrics: tuple[AgentMetric, ...] = ()
    hop_count: int = Field(3, ge=1)
    prune_sizes: tuple[int, ...] = (20, 10, 10)
    relation_exclusion: RelationExclusion = "directed"

    @model_validator(mode="after")
    def _check_prune_sizes(self) -> "RewardConfig":
        if len(self.prune_sizes) != self.hop_count:
            raise ValueError(
                f"need one prune size per hop: {len(self.prune_sizes)} != {self.hop_count}"
            )
        if any(z < 1 for z in self.prune_sizes):
            raise ValueError("prune sizes must be >= 1")
        return self


@dataclass(frozen=True)
class AgentState:
    user: int
    current: int
    history: tuple[Hop, ...] = ()

    @property
    def step(self) -> int:
        return len(self.history)

    def path(self) -> ReasoningPath:
        return ReasoningPath(self.user, self.history)


@dataclass
class ExplorationContext:
    """
    Tables the quality terms read, plus the per-user path types already
    produced in the current training epoch.
    """

    recency: RecencyTable
    popularity: PopularityTable
    seen_types: dict[int, set[int]] = field(default_factory=dict)

    def ptd_bonus(self, user: int, relation: int) -> float:
        return 0.0 if relation in self.seen_types.get(user, ()) else 1.0

    def mark_seen(self, user: int, relation: int) -> None:
        self.seen_types.setdefault(user, set()).add(relation)

    def reset(self) -> None:
        self.seen_types.clear()


def initial_state(user: int, graph: KnowledgeGraph) -> AgentState:
    if not graph.is_user(user):
        raise UnknownEntityError(f"entity {user} is not a user")
    return AgentState(user=user, current=user)


def transition(state: AgentState, action: Hop) -> AgentState:
    return AgentState(state.user, action.entity, (*state.history, action))


def action_space(
    state: AgentState,
    graph: KnowledgeGraph,
    relation_exclusion: RelationExclusion = "directed",
) -> tuple[Hop, ...]:
    visited = {state.user, *(h.entity for h in state.history)}
    used = {exclusion_token(h, relation_exclusion) for h in state.history}
    actions = []
    for edge in graph.edges(state.current):
        if edge.neighbor in visited:
            continue
        hop = Hop(edge.relation, edge.direction, edge.neighbor)
        token = exclusion_token(hop, relation_exclusion)
        if token is not None and token in used:
            continue
        actions.append(hop)
    return tuple(sorted(actions, key=_action_order))


def _action_order(hop: Hop) -> tuple[int, int, str]:
    return (hop.relation, hop.entity, hop.direction.value)


# ── Explanation-augmented scoring ─────────────────────────────────────────────

def _quality_terms(
    state: AgentState, action: Hop, config: RewardConfig, ctx: ExplorationContext
) -> float:
    if not config.metrics:
        return 0.0
    k = config.hop_count
    total = 0.0
    if state.step == 0:
        # only the linking interaction is known yet
        if "lir" in config.metrics:
            total += ctx.recency.get(state.user, action.entity)
        return total
    if "lir" in config.metrics:
        total += ctx.recency.get(state.user, state.history[0].entity)
    if "sep" in config.metrics:
        shared = action.entity if state.step + 1 <= k - 1 else state.current
        total += ctx.popularity.get(shared)
    if "ptd" in config.metrics:
        total += ctx.ptd_bonus(state.user, action.relation)
    return total


def _action_scores(
    state: AgentState,
    actions: Sequence[Hop],
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
) -> np.ndarray:
    rel = relevance_many(table, state.current, [a.entity for a in actions])
    if config.alpha == 0.0:
        return rel
    quality = np.array([_quality_terms(state, a, config, ctx) for a in actions])
    return (1.0 - config.alpha) * rel + config.alpha * quality


def score_action(
    state: AgentState,
    action: Hop,
    graph: KnowledgeGraph,
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
) -> float:
    if action not in action_space(state, graph, config.relation_exclusion):
        raise PathStructureError(f"action {action} is not available from {state}")
    base = relevance(table, state.current, action.entity)
    if config.alpha == 0.0:
        return base
    return (1.0 - config.alpha) * base + config.alpha * _quality_terms(state, action, config, ctx)


def prune_action_space(
    state: AgentState,
    graph: KnowledgeGraph,
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
) -> tuple[Hop, ...]:
    """Highest-scoring actions for this step, descending; ties by (relation, entity)."""
    actions = action_space(state, graph, config.relation_exclusion)
    if not actions:
        return ()
    scores = _action_scores(state, actions, table, config, ctx)
    limit = config.prune_sizes[min(state.step, len(config.prune_sizes) - 1)]
    ranked = sorted(
        zip(scores.tolist(), actions),
        key=lambda sa: (-sa[0], *_action_order(sa[1])),
    )
    return tuple(a for _, a in ranked[:limit])


def reward(
    final_state: AgentState,
    graph: KnowledgeGraph,
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
) -> float:
    if final_state.step != config.hop_count or not graph.is_product(final_state.current):
        return 0.0
    base = relevance(table, final_state.user, final_state.current)
    if config.alpha == 0.0:
        return base
    path = final_state.path()
    terms = 0.0
    if "lir" in config.metrics:
        terms += ctx.recency.get(path.origin, path.linked_entity)
    if "sep" in config.metrics:
        terms += ctx.popularity.get(path.shared_entity)
    if "ptd" in config.metrics:
        terms += ctx.ptd_bonus(path.origin, path_type(path))
    return (1.0 - config.alpha) * base + config.alpha * terms


# ── Policy network ────────────────────────────────────────────────────────────

class PolicyModel(nn.Module):
    def __init__(self, table: EmbeddingTable, hidden_size: int = 128) -> None:
        super().__init__()
        self.table = table
        self.hidden_size = hidden_size
        # pruning the policy was trained under, restored from checkpoints
        self.reward_config: RewardConfig | None = None
        d = table.dim
        self.register_buffer("entity_emb", torch.from_numpy(table.entity_vectors.copy()))
        self.register_buffer("relation_emb", torch.from_numpy(table.relation_vectors.copy()))
        self.l1 = nn.Linear(3 * d, hidden_size)
        self.l2 = nn.Linear(hidden_size, hidden_size)
        self.out = nn.Linear(hidden_size, 2 * d)
        self.double()

    def encode_state(self, state: AgentState) -> torch.Tensor:
        user = self.entity_emb[state.user]
        current = self.entity_emb[state.current]
        if state.history:
            ents = self.entity_emb[[h.entity for h in state.history]]
            rels = self.relation_emb[[h.relation for h in state.history]]
            summary = torch.cat([ents, rels]).mean(0)
        else:
            summary = torch.zeros_like(user)
        return torch.cat([user, current, summary])

    def encode_actions(self, actions: Sequence[Hop]) -> torch.Tensor:
        sign = torch.tensor(
            [1.0 if a.direction is Direction.FORWARD else -1.0 for a in actions],
            dtype=self.relation_emb.dtype,
        ).unsqueeze(1)
        rels = self.relation_emb[[a.relation for a in actions]] * sign
        ents = self.entity_emb[[a.entity for a in actions]]
        return torch.cat([rels, ents], dim=1)

    def action_distribution(self, state: AgentState, actions: Sequence[Hop]) -> torch.Tensor:
        """Softmax over exactly the given action set."""
        if not actions:
            return torch.zeros(0, dtype=self.entity_emb.dtype)
        x = torch.relu(self.l1(self.encode_state(state)))
        x = torch.relu(self.l2(x))
        logits = self.encode_actions(actions) @ self.out(x)
        return torch.softmax(logits, dim=0)

    def parameter_vector(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])


def save_policy(model: PolicyModel, path: str | Path, extra: dict | None = None) -> None:
    torch.save(
        {
            "format_version": POLICY_FORMAT_VERSION,
            "hidden_size": model.hidden_size,
            "state_dict": {k: v for k, v in model.state_dict().items() if not k.endswith("_emb")},
            "extra": extra or {},
        },
        Path(path),
    )


def load_policy(path: str | Path, table: EmbeddingTable) -> PolicyModel:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != POLICY_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported policy format {payload.get('format_version')}")
    model = PolicyModel(table, hidden_size=payload["hidden_size"])
    model.load_state_dict(payload["state_dict"], strict=False)
    trained_with = payload.get("extra", {}).get("reward_config")
    if trained_with is not None:
        model.reward_config = RewardConfig.model_validate(trained_with)
    model.eval()
    return model


# ── REINFORCE ─────────────────────────────────────────────────────────────────

RewardFn = Callable[[AgentState], float]


def _rollout(
    user: int,
    model: PolicyModel,
    graph: KnowledgeGraph,
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
    rng: np.random.Generator,
) -> tuple[AgentState, list[torch.Tensor]]:
    state = initial_state(user, graph)
    log_probs: list[torch.Tensor] = []
    for _ in range(config.hop_count):
        actions = prune_action_space(state, graph, table, config, ctx)
        if not actions:
            break
        probs = model.action_distribution(state, actions)
        p = probs.detach().numpy()
        idx = int(rng.choice(len(actions), p=p / p.sum()))
        log_probs.append(torch.log(probs[idx]))
        state = transition(state, actions[idx])
    return state, log_probs


def train_policy(
    graph: KnowledgeGraph,
    table: EmbeddingTable,
    config: RewardConfig,
    ctx: ExplorationContext,
    episodes: int,
    lr: float = 1e-3,
    discount: float = 0.99,
    seed: int = 0,
    batch_size: int = 32,
    hidden_size: int = 128,
    baseline_decay: float = 0.9,
    reward_fn: RewardFn | None = None,
    log_every: int = 500,
) -> PolicyModel:
    """
    Users are sampled uniformly per episode; the gradient of
    -log π(a_t) (G_t - b) is applied once per batch of episodes, with b a
    moving average of terminal rewards.
    """
    users = sorted(graph.users)
    if not users:
        raise UnknownEntityError("graph has no users to train on")

    torch.manual_seed(seed)
    model = PolicyModel(table, hidden_size=hidden_size)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    baseline = 0.0
    epoch_len = len(users)
    ctx.reset()

    pending: list[torch.Tensor] = []
    window: list[float] = []
    for episode in range(1, episodes + 1):
        if (episode - 1) % epoch_len == 0:
            ctx.reset()
        user = users[int(rng.integers(len(users)))]
        state, log_probs = _rollout(user, model, graph, table, config, ctx, rng)

        complete = state.step == config.hop_count and graph.is_product(state.current)
        if reward_fn is not None:
            final = reward_fn(state) if complete else 0.0
        else:
            final = reward(state, graph, table, config, ctx)
        if complete:
            ctx.mark_seen(user, path_type(state.path()))

        steps = len(log_probs)
        for t, lp in enumerate(log_probs):
            ret = (discount ** (steps - 1 - t)) * final
            pending.append(-lp * (ret - baseline))
        baseline = baseline_decay * baseline + (1.0 - baseline_decay) * final
        window.append(final)

        if episode % batch_size == 0 or episode == episodes:
            if pending:
                loss = torch.stack(pending).sum() / batch_size
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            pending = []

        if episode % log_every == 0:
            logger.info(
                "policy episode %d/%d  avg_reward=%.4f  baseline=%.4f",
                episode, episodes, float(np.mean(window)), baseline,
            )
            window = []

    model.reward_config = config
    model.eval()
    return model
