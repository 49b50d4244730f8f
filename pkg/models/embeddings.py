"""
models/embeddings.py — Translational entity/relation embeddings.

Triple score     s(h, r, t) = <e_h + w_r, e_t> + b_t
Relevance        rel(h, t)  = <e_h, e_t> + b_t
Training         margin loss max(0, margin - s(h,r,t) + s(h,r,t')) over random
                 tail corruptions t' with (h, r, t') absent from the graph.

Checkpoint (TSV):
  d  |E|  |R|
  |E| rows of entity vectors
  |R| rows of relation vectors
  1 row of |E| entity biases
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from pydantic import BaseModel, Field

from kg.errors import DatasetError, UnknownEntityError
from kg.store import KnowledgeGraph, Triple

logger = logging.getLogger(__name__)

_MAX_RESAMPLE = 100


class EmbeddingConfig(BaseModel):
    dim: int = Field(64, ge=2)
    epochs: int = Field(30, ge=0)
    lr: float = Field(0.01, ge=0)
    negatives_per_positive: int = Field(1, ge=1)
    margin: float = Field(1.0, gt=0)
    batch_size: int = Field(256, ge=1)


@dataclass(frozen=True)
class EmbeddingTable:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray
    entity_bias: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.entity_vectors.shape[1])

    @property
    def num_entities(self) -> int:
        return int(self.entity_vectors.shape[0])

    @property
    def num_relations(self) -> int:
        return int(self.relation_vectors.shape[0])

    def check(self, entity: int) -> None:
        if not 0 <= entity < self.num_entities:
            raise UnknownEntityError(f"entity id {entity} outside embedding table")

    def equals(self, other: "EmbeddingTable") -> bool:
        return (
            np.array_equal(self.entity_vectors, other.entity_vectors)
            and np.array_equal(self.relation_vectors, other.relation_vectors)
            and np.array_equal(self.entity_bias, other.entity_bias)
        )


def relevance(table: EmbeddingTable, head: int, tail: int) -> float:
    table.check(head)
    table.check(tail)
    return float(
        np.dot(table.entity_vectors[head], table.entity_vectors[tail])
        + table.entity_bias[tail]
    )


def relevance_many(table: EmbeddingTable, head: int, tails: Sequence[int]) -> np.ndarray:
    table.check(head)
    idx = np.asarray(tails, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.num_entities):
        raise UnknownEntityError("tail id outside embedding table")
    return table.entity_vectors[idx] @ table.entity_vectors[head] + table.entity_bias[idx]


def triple_score(
    entity: torch.Tensor,
    relation: torch.Tensor,
    bias: torch.Tensor,
    heads: torch.Tensor,
    rels: torch.Tensor,
    tails: torch.Tensor,
) -> torch.Tensor:
    return ((entity[heads] + relation[rels]) * entity[tails]).sum(-1) + bias[tails]


def margin_loss(
    entity: torch.Tensor,
    relation: torch.Tensor,
    bias: torch.Tensor,
    heads: torch.Tensor,
    rels: torch.Tensor,
    tails: torch.Tensor,
    neg_tails: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    """Mean hinge loss; `neg_tails` has shape (batch, negatives)."""
    pos = triple_score(entity, relation, bias, heads, rels, tails)
    n_neg = neg_tails.shape[1]
    neg = triple_score(
        entity, relation, bias,
        heads.repeat_interleave(n_neg), rels.repeat_interleave(n_neg),
        neg_tails.reshape(-1),
    ).reshape(-1, n_neg)
    return torch.relu(margin - pos.unsqueeze(1) + neg).mean()


def init_table(
    num_entities: int, num_relations: int, dim: int, seed: int
) -> EmbeddingTable:
    gen = torch.Generator().manual_seed(seed)
    bound = 6.0 / math.sqrt(dim)
    ent = (torch.rand(num_entities, dim, generator=gen, dtype=torch.float64) * 2 - 1) * bound
    rel = (torch.rand(num_relations, dim, generator=gen, dtype=torch.float64) * 2 - 1) * bound
    return EmbeddingTable(
        entity_vectors=ent.numpy(),
        relation_vectors=rel.numpy(),
        entity_bias=np.zeros(num_entities, dtype=np.float64),
    )


def _corrupt_tails(
    batch: np.ndarray,
    negatives: int,
    num_entities: int,
    known: frozenset[Triple],
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Random tails with (h, r, t') absent from `known`. Heads whose random draws
    keep hitting known triples fall back to drawing from the explicit list of
    absent tails; a head linked to every entity keeps a known tail, logged.
    """
    out = rng.integers(0, num_entities, size=(len(batch), negatives))
    for i, (h, r, _) in enumerate(batch):
        for j in range(negatives):
            tries = 0
            while Triple(int(h), int(r), int(out[i, j])) in known and tries < _MAX_RESAMPLE:
                out[i, j] = rng.integers(0, num_entities)
                tries += 1
            if Triple(int(h), int(r), int(out[i, j])) not in known:
                continue
            absent = [t for t in range(num_entities) if Triple(int(h), int(r), t) not in known]
            if absent:
                out[i, j] = absent[int(rng.integers(len(absent)))]
            else:
                logger.warning("no corrupted tail exists for (%d, %d); using a known triple", h, r)
    return out


def train_embeddings(
    graph: KnowledgeGraph, config: EmbeddingConfig, seed: int = 0
) -> EmbeddingTable:
    if not graph.triples:
        raise DatasetError("cannot train embeddings on a graph without triples")

    init = init_table(graph.num_entities, graph.num_relations, config.dim, seed)
    if config.epochs == 0:
        return init

    rng = np.random.default_rng(seed)
    entity = torch.tensor(init.entity_vectors, requires_grad=True)
    relation = torch.tensor(init.relation_vectors, requires_grad=True)
    bias = torch.tensor(init.entity_bias, requires_grad=True)
    optimizer = torch.optim.Adam([entity, relation, bias], lr=config.lr)

    triples = np.asarray(graph.triples, dtype=np.int64)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(triples))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = triples[order[start:start + config.batch_size]]
            neg = _corrupt_tails(
                batch, config.negatives_per_positive, graph.num_entities,
                graph.triple_set, rng,
            )
            loss = margin_loss(
                entity, relation, bias,
                torch.from_numpy(batch[:, 0]), torch.from_numpy(batch[:, 1]),
                torch.from_numpy(batch[:, 2]), torch.from_numpy(neg),
                config.margin,
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.item())
            batches += 1
        logger.info("embeddings epoch %d/%d  loss=%.5f", epoch, config.epochs, total / batches)

    return EmbeddingTable(
        entity_vectors=entity.detach().numpy().copy(),
        relation_vectors=relation.detach().numpy().copy(),
        entity_bias=bias.detach().numpy().copy(),
    )


# ── Checkpoint I/O ────────────────────────────────────────────────────────────

def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{table.dim}\t{table.num_entities}\t{table.num_relations}\n")
        np.savetxt(fh, table.entity_vectors, fmt="%.17g", delimiter="\t")
        np.savetxt(fh, table.relation_vectors, fmt="%.17g", delimiter="\t")
        np.savetxt(fh, table.entity_bias.reshape(1, -1), fmt="%.17g", delimiter="\t")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with Path(path).open(encoding="utf-8") as fh:
        dim, n_ent, n_rel = (int(x) for x in fh.readline().split("\t"))
        rows = [
            np.array(line.rstrip("\n").split("\t"), dtype=np.float64)
            for line in fh if line.strip()
        ]
    if len(rows) != n_ent + n_rel + 1:
        raise DatasetError(f"{path}: expected {n_ent + n_rel + 1} rows, got {len(rows)}")
    ent = np.vstack(rows[:n_ent]) if n_ent else np.zeros((0, dim))
    rel = np.vstack(rows[n_ent:n_ent + n_rel]) if n_rel else np.zeros((0, dim))
    bias = rows[-1]
    if ent.shape[1] != dim or rel.shape[1] != dim or bias.shape[0] != n_ent:
        raise DatasetError(f"{path}: row widths do not match header {dim}/{n_ent}/{n_rel}")
    return EmbeddingTable(entity_vectors=ent, relation_vectors=rel, entity_bias=bias)
