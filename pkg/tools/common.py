"""
tools/common.py — Shared plumbing for the pipeline stage tools.

  _timed_stage()     stage_log row with .done(summary) / .error(msg)
  artifact_paths()   fixed file layout under settings.workdir
  publish()          config sidecar + artifact registry entry
  write_records() / read_records()   JSON-lines recommendation records
  load_* helpers     read upstream artifacts or fail naming the stage
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from config import Settings
from database import finish_stage_call, log_stage_call, register_artifact
from kg.errors import ArtifactMissingError, DatasetError
from kg.store import InteractionLog, KnowledgeGraph, load_dataset, read_interactions
from models.embeddings import EmbeddingTable, load_embeddings
from models.sampler import Candidate, CandidateSet, RankedList
from quality.evaluation import UserRecommendation

RECORD_FORMAT_VERSION = 1


# ── Stage log helper ──────────────────────────────────────────────────────────

async def _timed_stage(name: str, settings: Settings | None = None):
    log_id = await log_stage_call(name, settings.resolved() if settings else None)
    start = time.monotonic()

    class _Ctx:
        id = log_id
        t0 = start
        stage = name

        async def done(self, summary: str) -> None:
            ms = int((time.monotonic() - self.t0) * 1000)
            await finish_stage_call(self.id, ms, summary)

        async def error(self, msg: str) -> None:
            ms = int((time.monotonic() - self.t0) * 1000)
            await finish_stage_call(self.id, ms, msg, status="error")

    return _Ctx()


# ── Artifact layout ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ArtifactPaths:
    root: Path

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def split(self) -> Path:
        return self.root / "split"

    def split_file(self, part: str) -> Path:
        return self.split / f"{part}.tsv"

    @property
    def flagged(self) -> Path:
        return self.split / "flagged.txt"

    @property
    def embeddings(self) -> Path:
        return self.root / "embeddings.tsv"

    @property
    def policy(self) -> Path:
        return self.root / "policy.pt"

    @property
    def recommendations(self) -> Path:
        return self.root / "recommendations.jsonl"

    @property
    def reranked(self) -> Path:
        return self.root / "reranked.jsonl"

    @property
    def explained(self) -> Path:
        return self.root / "explained.jsonl"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def stats(self) -> Path:
        return self.root / "stats"


def artifact_paths(settings: Settings) -> ArtifactPaths:
    return ArtifactPaths(settings.workdir)


def write_sidecar(path: str | Path, settings: Settings, stage: str) -> Path:
    sidecar = Path(f"{path}.config.json")
    sidecar.write_text(
        json.dumps({"stage": stage, "config": settings.resolved()}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return sidecar


async def publish(
    path: str | Path,
    stage: str,
    settings: Settings,
    format_version: int = 1,
    sidecar: bool = True,
) -> str:
    if sidecar:
        write_sidecar(path, settings, stage)
    return await register_artifact(path, stage, format_version, settings.resolved())


def require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ArtifactMissingError(stage, path)
    return path


# ── Upstream loaders ──────────────────────────────────────────────────────────

def load_ingested(settings: Settings) -> tuple[KnowledgeGraph, InteractionLog]:
    ds = artifact_paths(settings).dataset
    for name in ("entities.tsv", "kg.tsv", "interactions.tsv"):
        require(ds / name, "ingest")
    relations = ds / "relations.tsv"
    return load_dataset(
        ds / "interactions.tsv",
        ds / "kg.tsv",
        ds / "entities.tsv",
        feedback_relation=settings.feedback_relation,
        relations_file=relations if relations.exists() else None,
    )


def load_split_part(settings: Settings, graph: KnowledgeGraph, part: str) -> InteractionLog:
    return read_interactions(require(artifact_paths(settings).split_file(part), "split"), graph)


def load_training_graph(settings: Settings) -> tuple[KnowledgeGraph, InteractionLog]:
    """Ingested graph plus feedback triples for training interactions only."""
    graph, _ = load_ingested(settings)
    train = load_split_part(settings, graph, "train")
    return graph.with_feedback(train), train


def load_table(settings: Settings, graph: KnowledgeGraph) -> EmbeddingTable:
    table = load_embeddings(require(artifact_paths(settings).embeddings, "train-embeddings"))
    if table.num_entities != graph.num_entities or table.num_relations != graph.num_relations:
        raise DatasetError(
            "embedding table does not match the ingested graph; rerun `train-embeddings`"
        )
    return table


# ── Recommendation records ────────────────────────────────────────────────────

def _item_json(rank: int, c: Candidate, graph: KnowledgeGraph) -> dict[str, Any]:
    return {
        "rank": rank,
        "product": graph.entity_names[c.product],
        "product_id": c.product,
        "path": graph.path_names(c.path),
        "path_ids": c.path.to_json(),
        "prob": c.prob,
        "relevance": c.relevance,
    }


def make_record(
    ranked: RankedList,
    cands: CandidateSet,
    graph: KnowledgeGraph,
    stage: str,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    return {
        "format_version": RECORD_FORMAT_VERSION,
        "stage": stage,
        "user": graph.entity_names[cands.user],
        "user_id": cands.user,
        "short": ranked.short,
        "recommendations": [
            _item_json(i, c, graph) for i, c in enumerate(ranked.items, start=1)
        ],
        "candidates": [c.to_json() for c in cands.candidates()],
        **(extra or {}),
    }


def record_candidates(record: dict[str, Any]) -> CandidateSet:
    return CandidateSet.of(
        int(record["user_id"]), [Candidate.from_json(c) for c in record["candidates"]]
    )


def record_ranked(record: dict[str, Any]) -> RankedList:
    items = tuple(
        Candidate.from_json({**it["path_ids"], "prob": it["prob"], "relevance": it["relevance"]})
        for it in record["recommendations"]
    )
    return RankedList(items=items, short=bool(record["short"]))


def record_recommendation(record: dict[str, Any]) -> UserRecommendation:
    ranked = record_ranked(record)
    return UserRecommendation(products=tuple(ranked.products), paths=tuple(ranked.paths))


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    rows = sorted(records, key=lambda r: r["user_id"])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8"
    )
    return len(rows)


def read_records(path: str | Path, stage: str = "recommend") -> list[dict[str, Any]]:
    path = require(Path(path), stage)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("format_version") != RECORD_FORMAT_VERSION:
                raise DatasetError(f"{path}:{line_no}: unsupported record format")
            records.append(record)
    return records
