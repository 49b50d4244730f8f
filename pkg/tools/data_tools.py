"""
tools/data_tools.py — Dataset stages.

  ingest()   raw TSV files → filtered dataset under workdir/dataset
  split()    chronological train/valid/test split under workdir/split
  stats()    recency buckets, degree summaries, relation frequencies, EP/IR tables
  synth()    synthetic dataset generation
"""

from __future__ import annotations

import asyncio
import logging
from pathlib import Path
from typing import Any

from config import Settings
from kg.store import chronological_split, load_dataset, save_dataset, write_interactions
from kg.synthetic import SyntheticSpec, generate_synthetic
from quality.evaluation import dataset_stats
from quality.metrics import build_recency_table, entity_popularity, write_table_tsv
from tools.common import (
    _timed_stage,
    artifact_paths,
    load_ingested,
    load_split_part,
    publish,
    require,
)

logger = logging.getLogger(__name__)


async def ingest(settings: Settings, dataset_dir: str | Path | None = None) -> dict[str, Any]:
    """
    Load interactions.tsv / kg.tsv / entities.tsv (and relations.tsv when
    present) from `dataset_dir`, filter, and store the result.
    """
    ctx = await _timed_stage("ingest", settings)
    try:
        src = Path(dataset_dir or settings.dataset_dir)
        relations = src / "relations.tsv"
        graph, log = await asyncio.to_thread(
            load_dataset,
            require(src / "interactions.tsv", "synth"),
            require(src / "kg.tsv", "synth"),
            require(src / "entities.tsv", "synth"),
            settings.min_relation_count,
            settings.feedback_relation,
            relations if relations.exists() else None,
        )
        paths = save_dataset(graph, log, artifact_paths(settings).dataset)
        for p in paths.values():
            await publish(p, "ingest", settings, sidecar=False)

        summary = (
            f"{graph.num_entities} entities, {graph.num_relations} relations, "
            f"{len(graph.triples)} triples, {len(log)} interactions"
        )
        await ctx.done(summary)
        return {
            "stage": "ingest",
            "entities": graph.num_entities,
            "relations": graph.num_relations,
            "triples": len(graph.triples),
            "users": len(log.by_user),
            "interactions": len(log),
            "paths": {k: str(v) for k, v in paths.items()},
        }

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("ingest failed")
        raise


async def split(settings: Settings) -> dict[str, Any]:
    ctx = await _timed_stage("split", settings)
    try:
        graph, log = load_ingested(settings)
        parts = chronological_split(log, settings.train_frac, settings.valid_frac)
        layout = artifact_paths(settings)
        layout.split.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            path = layout.split_file(name)
            write_interactions(getattr(parts, name), graph, path)
            await publish(path, "split", settings, sidecar=False)
        layout.flagged.write_text(
            "".join(graph.entity_names[u] + "\n" for u in sorted(parts.flagged)),
            encoding="utf-8",
        )

        counts = {name: len(getattr(parts, name)) for name in ("train", "valid", "test")}
        await ctx.done(f"{counts} flagged={len(parts.flagged)}")
        return {"stage": "split", **counts, "flagged": len(parts.flagged)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("split failed")
        raise


async def stats(settings: Settings, out_dir: str | Path | None = None) -> dict[str, Any]:
    """
    Dataset statistics on the ingested graph; recency and popularity tables are
    exported from the training split when it exists.
    """
    ctx = await _timed_stage("stats", settings)
    try:
        graph, log = load_ingested(settings)
        out = Path(out_dir) if out_dir else artifact_paths(settings).stats
        report = dataset_stats(graph, log)
        paths = report.write(out)

        if artifact_paths(settings).split_file("train").exists():
            train = load_split_part(settings, graph, "train")
            fb = graph.with_feedback(train)
            popularity = entity_popularity(fb, settings.beta_ep)
            write_table_tsv(
                ((fb.entity_names[e], raw, norm) for e, _, raw, norm in popularity.rows()),
                out / "entity_popularity.tsv",
            )
            recency = build_recency_table(train, settings.beta_ir)
            write_table_tsv(
                (
                    (f"{fb.entity_names[u]}:{fb.entity_names[p]}", raw, norm)
                    for u, p, raw, norm in recency.rows()
                ),
                out / "interaction_recency.tsv",
            )
            paths["popularity"] = out / "entity_popularity.tsv"
            paths["recency_table"] = out / "interaction_recency.tsv"

        await ctx.done(f"{len(paths)} tables → {out}")
        return {
            "stage": "stats",
            "recency_buckets": report.recency_buckets,
            "relation_frequency": {r: pct for r, (_, pct) in report.relation_frequency.items()},
            "paths": {k: str(v) for k, v in paths.items()},
        }

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("stats failed")
        raise


async def synth(settings: Settings, spec: SyntheticSpec, out_dir: str | Path | None = None) -> dict[str, Any]:
    ctx = await _timed_stage("synth", settings)
    try:
        out = Path(out_dir or settings.dataset_dir)
        paths = await asyncio.to_thread(generate_synthetic, spec, out)
        await ctx.done(f"{spec.users} users, {spec.products} products → {out}")
        return {"stage": "synth", "paths": {k: str(v) for k, v in paths.items()}}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("synth failed")
        raise
