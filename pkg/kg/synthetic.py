"""
kg/synthetic.py — Seeded synthetic recommendation datasets.

Products fall into clusters; attribute entities belong to clusters too and
products mostly link to attributes of their own cluster. Users favour one
cluster, so relevance is learnable and paths through shared attributes exist.

Knobs:
  relation_imbalance  attribute relation i is attached with probability (i+1)^-imbalance
  popularity_skew     Zipf exponent over attribute and product choice (in-degree skew)
  gap_range           per-user log-uniform mean gap between interactions, seconds
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

DAY = 86_400


class AttributeSpec(BaseModel):
    type_name: str
    relation: str
    phrase: str
    count: int = Field(ge=1)
    links_per_product: int = Field(1, ge=1)


def _default_attributes() -> list[AttributeSpec]:
    return [
        AttributeSpec(type_name="category", relation="belongs_to", phrase="categorized", count=16),
        AttributeSpec(type_name="brand", relation="produced_by", phrase="produced", count=40),
        AttributeSpec(type_name="feature", relation="described_by", phrase="described", count=60, links_per_product=2),
    ]


class SyntheticSpec(BaseModel):
    users: int = Field(200, ge=1)
    products: int = Field(300, ge=2)
    clusters: int = Field(6, ge=1)
    attributes: list[AttributeSpec] = Field(default_factory=_default_attributes, min_length=1)
    interactions_per_user: tuple[int, int] = (6, 24)
    cluster_affinity: float = Field(0.8, ge=0.0, le=1.0)
    relation_imbalance: float = Field(0.0, ge=0.0)
    popularity_skew: float = Field(1.0, ge=0.0)
    gap_range: tuple[float, float] = (600.0, 400.0 * DAY)
    start_timestamp: int = 1_500_000_000
    feedback_relation: str = "interacted"
    feedback_phrase: str = "interacted with"
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "SyntheticSpec":
        lo, hi = self.interactions_per_user
        if not 1 <= lo <= hi:
            raise ValueError(f"interactions_per_user must satisfy 1 <= lo <= hi, got {lo}, {hi}")
        if hi > self.products:
            raise ValueError("interactions_per_user upper bound exceeds the product count")
        if not 0 < self.gap_range[0] <= self.gap_range[1]:
            raise ValueError("gap_range must be positive and ordered")
        return self


def _zipf_weights(n: int, skew: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** (-skew)
    return w / w.sum()


def _pick(rng: np.random.Generator, pool: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    """Weighted sample without replacement; `weights` is aligned with `pool`."""
    size = min(size, len(pool))
    if size <= 0:
        return np.empty(0, dtype=np.int64)
    p = weights / weights.sum()
    return rng.choice(pool, size=size, replace=False, p=p)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write entities.tsv, kg.tsv, relations.tsv and interactions.tsv."""
    rng = np.random.default_rng(spec.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    product_cluster = rng.integers(0, spec.clusters, size=spec.products)
    # popularity rank per product: a random permutation so rank and cluster are independent
    product_rank = rng.permutation(spec.products)

    entities = [f"user_{u}\tuser\tuser_{u}" for u in range(spec.users)]
    entities += [f"product_{p}\tproduct\tproduct_{p}" for p in range(spec.products)]
    triples: list[tuple[str, str, str]] = []

    for i, attr in enumerate(spec.attributes):
        entities += [
            f"{attr.type_name}_{a}\t{attr.type_name}\t{attr.type_name}_{a}"
            for a in range(attr.count)
        ]
        attach_p = (i + 1) ** (-spec.relation_imbalance)
        attr_cluster = np.arange(attr.count) % spec.clusters
        weights = _zipf_weights(attr.count, spec.popularity_skew)
        for p in range(spec.products):
            if i > 0 and rng.random() >= attach_p:
                continue
            own = np.flatnonzero(attr_cluster == product_cluster[p])
            pool = own if own.size and rng.random() < spec.cluster_affinity else np.arange(attr.count)
            for a in sorted(_pick(rng, pool, weights[pool], attr.links_per_product).tolist()):
                triples.append((f"product_{p}", attr.relation, f"{attr.type_name}_{a}"))

    prod_weights = _zipf_weights(spec.products, spec.popularity_skew)[product_rank]
    lo, hi = spec.interactions_per_user
    log_lo, log_hi = np.log(spec.gap_range[0]), np.log(spec.gap_range[1])
    interactions: list[str] = []
    for u in range(spec.users):
        home = int(rng.integers(0, spec.clusters))
        count = int(rng.integers(lo, hi + 1))
        in_home = np.flatnonzero(product_cluster == home)
        n_home = min(int(rng.binomial(count, spec.cluster_affinity)), in_home.size)
        chosen = set(_pick(rng, in_home, prod_weights[in_home], n_home).tolist())
        rest = np.array([p for p in range(spec.products) if p not in chosen], dtype=np.int64)
        chosen |= set(_pick(rng, rest, prod_weights[rest], count - len(chosen)).tolist())
        order = rng.permutation(sorted(chosen))

        mean_gap = float(np.exp(rng.uniform(log_lo, log_hi)))
        gaps = rng.exponential(mean_gap, size=len(order)).astype(np.int64)
        stamps = spec.start_timestamp + np.cumsum(gaps)
        interactions += [f"user_{u}\tproduct_{p}\t{t}" for p, t in zip(order.tolist(), stamps.tolist())]

    phrases = [f"{spec.feedback_relation}\t{spec.feedback_phrase}"]
    phrases += [f"{a.relation}\t{a.phrase}" for a in spec.attributes]

    paths = {
        "entities": out / "entities.tsv",
        "kg": out / "kg.tsv",
        "relations": out / "relations.tsv",
        "interactions": out / "interactions.tsv",
    }
    paths["entities"].write_text("\n".join(entities) + "\n", encoding="utf-8")
    paths["kg"].write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples), encoding="utf-8")
    paths["relations"].write_text("\n".join(phrases) + "\n", encoding="utf-8")
    paths["interactions"].write_text("\n".join(interactions) + "\n", encoding="utf-8")
    logger.info(
        "Synthetic dataset: %d users, %d products, %d triples, %d interactions → %s",
        spec.users, spec.products, len(triples), len(interactions), out,
    )
    return paths
