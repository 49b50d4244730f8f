"""
models/sampler.py — Policy-guided beam search over user→product paths.

For every hop the beam expands each partial path by its most probable actions,
up to that hop's beam size. Given a reward config, the actions a node may take
are the pruned set the policy was trained on; without one, the complete action
space. Probabilities multiply along the path and only paths ending in a
product survive the last hop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple, Sequence

import torch

from kg.errors import PathStructureError
from kg.store import KnowledgeGraph, ReasoningPath, RelationExclusion
from models.agent import (
    AgentState,
    ExplorationContext,
    PolicyModel,
    RewardConfig,
    action_space,
    initial_state,
    prune_action_space,
    transition,
)
from models.embeddings import relevance_many

logger = logging.getLogger(__name__)


class Candidate(NamedTuple):
    path: ReasoningPath
    prob: float
    relevance: float

    @property
    def product(self) -> int:
        return self.path.terminal

    def to_json(self) -> dict[str, Any]:
        return {**self.path.to_json(), "prob": self.prob, "relevance": self.relevance}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Candidate":
        return cls(ReasoningPath.from_json(data), float(data["prob"]), float(data["relevance"]))


def ranking_key(c: Candidate, score: float | None = None) -> tuple:
    """Score desc, relevance desc, probability desc, path id asc."""
    primary = c.relevance if score is None else score
    return (-primary, -c.relevance, -c.prob, c.path.path_id)


@dataclass(frozen=True)
class CandidateSet:
    user: int
    paths: tuple[ReasoningPath, ...]
    probs: tuple[float, ...]
    relevance: tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.paths) == len(self.probs) == len(self.relevance):
            raise PathStructureError("paths, probs and relevance must be parallel")

    def __len__(self) -> int:
        return len(self.paths)

    def candidates(self) -> list[Candidate]:
        return [Candidate(p, s, f) for p, s, f in zip(self.paths, self.probs, self.relevance)]

    def without_products(self, products: frozenset[int]) -> "CandidateSet":
        return CandidateSet.of(self.user, [c for c in self.candidates() if c.product not in products])

    @classmethod
    def of(cls, user: int, candidates: Sequence[Candidate]) -> "CandidateSet":
        return cls(
            user=user,
            paths=tuple(c.path for c in candidates),
            probs=tuple(c.prob for c in candidates),
            relevance=tuple(c.relevance for c in candidates),
        )


class RankedList(NamedTuple):
    items: tuple[Candidate, ...]
    short: bool

    @property
    def products(self) -> list[int]:
        return [c.product for c in self.items]

    @property
    def paths(self) -> list[ReasoningPath]:
        return [c.path for c in self.items]


def _beam_order(item: tuple[float, Any]) -> tuple:
    prob, hop = item
    return (-prob, hop.relation, hop.entity, hop.direction.value)


@torch.no_grad()
def sample_candidates(
    user: int,
    policy: PolicyModel,
    graph: KnowledgeGraph,
    hop_count: int = 3,
    beam_sizes: Sequence[int | None] | None = (20, 10, 10),
    relation_exclusion: RelationExclusion = "directed",
    dedup: bool = True,
    reward_config: RewardConfig | None = None,
    exploration: ExplorationContext | None = None,
) -> CandidateSet:
    """
    `beam_sizes=None` (or a None entry) keeps every action at that level.
    With `dedup`, beam nodes sharing (entity, set of hops) are merged keeping
    the higher probability.

    With `reward_config` (and the `exploration` tables it scores with), each
    node expands over `prune_action_space` and the policy distribution is
    taken over that pruned set; the config's relation exclusion applies.
    """
    sizes = list(beam_sizes) if beam_sizes is not None else [None] * hop_count
    if len(sizes) != hop_count:
        raise ValueError(f"need {hop_count} beam sizes, got {len(sizes)}")
    if reward_config is not None:
        if exploration is None:
            raise ValueError("pruned sampling needs an exploration context")
        if reward_config.hop_count != hop_count:
            raise ValueError(
                f"reward config walks {reward_config.hop_count} hops, sampler {hop_count}"
            )

    def expand(state: AgentState) -> tuple:
        if reward_config is None:
            return action_space(state, graph, relation_exclusion)
        return prune_action_space(state, graph, policy.table, reward_config, exploration)

    beam: list[tuple[AgentState, float]] = [(initial_state(user, graph), 1.0)]
    for level in range(hop_count):
        nxt: dict[Any, tuple[AgentState, float]] = {}
        order: list[Any] = []
        for state, prob in beam:
            actions = expand(state)
            if not actions:
                continue
            dist = policy.action_distribution(state, actions).tolist()
            ranked = sorted(zip(dist, actions), key=_beam_order)
            if sizes[level] is not None:
                ranked = ranked[: sizes[level]]
            for p, action in ranked:
                child = transition(state, action)
                key = (child.current, frozenset(child.history)) if dedup else child.history
                score = prob * p
                if key not in nxt:
                    order.append(key)
                    nxt[key] = (child, score)
                elif score > nxt[key][1]:
                    nxt[key] = (child, score)
        beam = [nxt[k] for k in order]
        if not beam:
            break

    finals = [
        (s, p) for s, p in beam
        if s.step == hop_count and graph.is_product(s.current)
    ]
    if not finals:
        logger.debug("user %d: no candidate paths", user)
        return CandidateSet(user, (), (), ())
    finals.sort(key=lambda sp: sp[0].path().path_id)
    rel = relevance_many(policy.table, user, [s.current for s, _ in finals]).tolist()
    return CandidateSet(
        user=user,
        paths=tuple(s.path() for s, _ in finals),
        probs=tuple(p for _, p in finals),
        relevance=tuple(float(r) for r in rel),
    )


def select_best_paths(cands: CandidateSet) -> dict[int, Candidate]:
    """Per terminal product, the candidate with the highest probability."""
    best: dict[int, Candidate] = {}
    for c in cands.candidates():
        cur = best.get(c.product)
        if cur is None or (-c.prob, c.path.path_id) < (-cur.prob, cur.path.path_id):
            best[c.product] = c
    return best


def top_n(
    selected: Mapping[int, Candidate],
    n: int = 10,
    exclude: frozenset[int] = frozenset(),
) -> RankedList:
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = [c for p, c in selected.items() if p not in exclude]
    pool.sort(key=ranking_key)
    items = tuple(pool[:n])
    return RankedList(items=items, short=len(items) < n)
