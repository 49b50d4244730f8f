"""
quality/metrics.py — Reasoning-path quality metrics.

Per-element scores:
  interaction_recency()  IR — EWMA over a user's sorted timestamps
  entity_popularity()    EP — EWMA over per-type in-degrees sorted ascending
Both are min-max normalised per list; a constant or singleton list maps to 1.0.

List-level metrics over a user's selected paths:
  lir / lid   recency and diversity of linking interactions (e_1)
  sep / sed   popularity and diversity of shared entities (e_{k-1})
  ptd / ptc   diversity and inverse-Simpson concentration of path types (r_k)
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from kg.errors import MetricInputError, UndefinedMetricError
from kg.store import InteractionLog, KnowledgeGraph, ReasoningPath, path_type

METRIC_NAMES = ("lir", "lid", "sep", "sed", "ptd", "ptc")


# ── EWMA scoring ──────────────────────────────────────────────────────────────

def _check_beta(beta: float) -> None:
    if not 0 < beta <= 1:
        raise MetricInputError(f"decay must lie in (0, 1], got {beta}")


def ewma(values: Sequence[float], beta: float) -> np.ndarray:
    """x_1 = v_1; x_i = (1 - beta) x_{i-1} + beta v_i."""
    out = np.empty(len(values), dtype=np.float64)
    prev = 0.0
    for i, v in enumerate(values):
        prev = float(v) if i == 0 else (1.0 - beta) * prev + beta * float(v)
        out[i] = prev
    return out


def min_max(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def interaction_recency(
    sorted_interactions: Sequence[tuple[int, int]], beta: float
) -> list[float]:
    """Normalised IR for a user's (product, timestamp) list in ascending time."""
    _check_beta(beta)
    if not sorted_interactions:
        raise MetricInputError("interaction list is empty")
    stamps = [ts for _, ts in sorted_interactions]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        raise MetricInputError("timestamps must be ascending")
    return min_max(ewma(stamps, beta)).tolist()


@dataclass(frozen=True)
class RecencyTable:
    beta: float
    scores: Mapping[int, Mapping[int, float]]
    raw: Mapping[int, Mapping[int, float]]

    def score(self, user: int, product: int) -> float:
        try:
            return self.scores[user][product]
        except KeyError:
            raise MetricInputError(
                f"product {product} is not a recorded interaction of user {user}"
            ) from None

    def get(self, user: int, product: int, default: float = 0.0) -> float:
        return self.scores.get(user, {}).get(product, default)

    def rows(self) -> Iterator[tuple[int, int, float, float]]:
        for user in sorted(self.scores):
            for product, norm in self.scores[user].items():
                yield user, product, self.raw[user][product], norm


def build_recency_table(log: InteractionLog, beta: float) -> RecencyTable:
    """
    IR per (user, product). A product interacted with more than once keeps
    the score of its latest interaction.
    """
    _check_beta(beta)
    scores: dict[int, dict[int, float]] = {}
    raw: dict[int, dict[int, float]] = {}
    for user in log.users():
        items = log.get(user)
        if not items:
            continue
        raw_vals = ewma([it.timestamp for it in items], beta)
        norm_vals = min_max(raw_vals)
        scores[user] = {it.product: float(n) for it, n in zip(items, norm_vals)}
        raw[user] = {it.product: float(r) for it, r in zip(items, raw_vals)}
    return RecencyTable(beta=beta, scores=scores, raw=raw)


@dataclass(frozen=True)
class PopularityTable:
    beta: float
    scores: Mapping[int, float]
    raw: Mapping[int, float]
    in_degree: Mapping[int, int]

    def score(self, entity: int) -> float:
        try:
            return self.scores[entity]
        except KeyError:
            raise MetricInputError(f"entity {entity} missing from popularity table") from None

    def get(self, entity: int, default: float = 0.0) -> float:
        return self.scores.get(entity, default)

    def rows(self) -> Iterator[tuple[int, int, float, float]]:
        for entity in sorted(self.scores):
            yield entity, self.in_degree[entity], self.raw[entity], self.scores[entity]


def popularity_scores(
    degrees: Mapping[int, int], beta: float
) -> tuple[dict[int, float], dict[int, float]]:
    """EP for one entity type: sort by (in-degree, id), EWMA, normalise."""
    order = sorted(degrees, key=lambda e: (degrees[e], e))
    raw_vals = ewma([degrees[e] for e in order], beta)
    norm_vals = min_max(raw_vals)
    return (
        {e: float(n) for e, n in zip(order, norm_vals)},
        {e: float(r) for e, r in zip(order, raw_vals)},
    )


def entity_popularity(graph: KnowledgeGraph, beta: float) -> PopularityTable:
    _check_beta(beta)
    by_type: dict[int, dict[int, int]] = {}
    for entity in range(graph.num_entities):
        by_type.setdefault(graph.entity_types[entity], {})[entity] = graph.in_degree(entity)
    scores: dict[int, float] = {}
    raw: dict[int, float] = {}
    degrees: dict[int, int] = {}
    for members in by_type.values():
        s, r = popularity_scores(members, beta)
        scores.update(s)
        raw.update(r)
        degrees.update(members)
    return PopularityTable(beta=beta, scores=scores, raw=raw, in_degree=degrees)


def write_table_tsv(rows: Iterable[tuple[str, float, float]], path: str | Path) -> None:
    """Export `id<TAB>raw<TAB>normalized` rows."""
    lines = [f"{ident}\t{raw!r}\t{norm!r}\n" for ident, raw, norm in rows]
    Path(path).write_text("".join(lines), encoding="utf-8")


# ── List-level metrics ────────────────────────────────────────────────────────

def _require(paths: Sequence[ReasoningPath], minimum: int = 1) -> None:
    if len(paths) < minimum:
        raise UndefinedMetricError(
            f"metric needs at least {minimum} path(s), got {len(paths)}"
        )


def lir(paths: Sequence[ReasoningPath], recency: RecencyTable) -> float:
    _require(paths)
    return sum(recency.score(p.origin, p.linked_entity) for p in paths) / len(paths)


def lid(paths: Sequence[ReasoningPath]) -> float:
    _require(paths)
    return len({p.linked_entity for p in paths}) / len(paths)


def sep(paths: Sequence[ReasoningPath], popularity: PopularityTable) -> float:
    _require(paths)
    return sum(popularity.score(p.shared_entity) for p in paths) / len(paths)


def sed(paths: Sequence[ReasoningPath]) -> float:
    _require(paths)
    return len({p.shared_entity for p in paths}) / len(paths)


def ptd(paths: Sequence[ReasoningPath], num_relation_types: int) -> float:
    _require(paths)
    if num_relation_types < 1:
        raise MetricInputError("num_relation_types must be >= 1")
    return len({path_type(p) for p in paths}) / min(len(paths), num_relation_types)


def ptc(paths: Sequence[ReasoningPath]) -> float:
    # undefined below two paths
    _require(paths, 2)
    n = len(paths)
    counts = Counter(path_type(p) for p in paths)
    return 1.0 - sum(c * (c - 1) for c in counts.values()) / (n * (n - 1))


@dataclass(frozen=True)
class MetricContext:
    """The tables list-level metrics read from."""

    recency: RecencyTable
    popularity: PopularityTable
    num_relation_types: int

    @classmethod
    def build(
        cls, graph: KnowledgeGraph, train: InteractionLog, beta_ir: float, beta_ep: float
    ) -> "MetricContext":
        return cls(
            recency=build_recency_table(train, beta_ir),
            popularity=entity_popularity(graph, beta_ep),
            num_relation_types=graph.num_relations,
        )


_DISPATCH: dict[str, Callable[[Sequence[ReasoningPath], MetricContext], float]] = {
    "lir": lambda paths, ctx: lir(paths, ctx.recency),
    "lid": lambda paths, ctx: lid(paths),
    "sep": lambda paths, ctx: sep(paths, ctx.popularity),
    "sed": lambda paths, ctx: sed(paths),
    "ptd": lambda paths, ctx: ptd(paths, ctx.num_relation_types),
    "ptc": lambda paths, ctx: ptc(paths),
}


def evaluate_metric(name: str, paths: Sequence[ReasoningPath], ctx: MetricContext) -> float:
    try:
        fn = _DISPATCH[name]
    except KeyError:
        raise MetricInputError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}") from None
    return fn(paths, ctx)


def path_quality(paths: Sequence[ReasoningPath], ctx: MetricContext) -> dict[str, float | None]:
    """All six metrics; a metric undefined for this list is reported as None."""
    out: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        try:
            out[name] = evaluate_metric(name, paths, ctx)
        except UndefinedMetricError:
            out[name] = None
    return out
