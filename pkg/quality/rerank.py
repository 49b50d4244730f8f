"""
quality/rerank.py — Greedy marginal-relevance re-ranking of candidate paths.

Each position takes the remaining path maximising
    (1 - α) · relevance + α · Σ_metric [metric(prefix + path) - metric(prefix)]
and then drops every other candidate path to the same product.
"""

from __future__ import annotations

import logging
from typing import Sequence

from pydantic import BaseModel, Field, field_validator

from kg.store import ReasoningPath
from models.sampler import Candidate, CandidateSet, RankedList, ranking_key
from quality.metrics import METRIC_NAMES, MetricContext, evaluate_metric

logger = logging.getLogger(__name__)


class RerankConfig(BaseModel):
    alpha: float = Field(0.0, ge=0.0, le=1.0)
    metrics: tuple[str, ...] = ()
    n: int = Field(10, ge=1)

    @field_validator("metrics")
    @classmethod
    def _known_metrics(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        unknown = [m for m in v if m not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"unknown metrics {unknown}; expected a subset of {METRIC_NAMES}")
        return v


def _metric_or_zero(name: str, paths: Sequence[ReasoningPath], ctx: MetricContext) -> float:
    if not paths:
        return 0.0
    return evaluate_metric(name, paths, ctx)


def marginal_gain(
    name: str,
    prefix: Sequence[ReasoningPath],
    path: ReasoningPath,
    ctx: MetricContext,
) -> float:
    if name == "ptc" and len(prefix) < 2:
        return 0.0
    return _metric_or_zero(name, [*prefix, path], ctx) - _metric_or_zero(name, prefix, ctx)


def rerank(
    cands: CandidateSet,
    config: RerankConfig,
    ctx: MetricContext,
    exclude: frozenset[int] = frozenset(),
) -> RankedList:
    pool: list[Candidate] = [c for c in cands.candidates() if c.product not in exclude]
    chosen: list[Candidate] = []
    prefix: list[ReasoningPath] = []

    while pool and len(chosen) < config.n:
        if config.alpha == 0.0 or not config.metrics:
            best = min(pool, key=ranking_key)
        else:
            scores = q_scores(pool, prefix, config, ctx)
            best = min(zip(pool, scores), key=lambda cs: ranking_key(*cs))[0]
        chosen.append(best)
        prefix.append(best.path)
        pool = [c for c in pool if c.product != best.product]

    short = len(chosen) < config.n
    if short:
        logger.debug("user %d: re-ranked list has %d/%d items", cands.user, len(chosen), config.n)
    return RankedList(items=tuple(chosen), short=short)


def q_scores(
    pool: Sequence[Candidate],
    prefix: Sequence[ReasoningPath],
    config: RerankConfig,
    ctx: MetricContext,
) -> list[float]:
    """Q for every candidate in `pool` against a fixed prefix."""
    out = []
    for c in pool:
        gain = sum(marginal_gain(m, prefix, c.path, ctx) for m in config.metrics)
        out.append((1.0 - config.alpha) * c.relevance + config.alpha * gain)
    return out
