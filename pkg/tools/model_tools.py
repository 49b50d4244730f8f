"""
tools/model_tools.py — Training stages.

  train_embeddings_stage()  embeddings over the training graph → embeddings.tsv
  train_agent_stage()       REINFORCE policy → policy.pt
"""

from __future__ import annotations

import asyncio
import logging
from typing import Any

from config import Settings
from models.agent import (
    POLICY_FORMAT_VERSION,
    ExplorationContext,
    save_policy,
    train_policy,
)
from models.embeddings import save_embeddings, train_embeddings
from quality.metrics import build_recency_table, entity_popularity
from tools.common import _timed_stage, artifact_paths, load_table, load_training_graph, publish

logger = logging.getLogger(__name__)


async def train_embeddings_stage(settings: Settings) -> dict[str, Any]:
    ctx = await _timed_stage("train-embeddings", settings)
    try:
        graph, _ = load_training_graph(settings)
        config = settings.embedding_config()
        table = await asyncio.to_thread(train_embeddings, graph, config, settings.seed)
        path = artifact_paths(settings).embeddings
        path.parent.mkdir(parents=True, exist_ok=True)
        save_embeddings(table, path)
        await publish(path, "train-embeddings", settings)

        await ctx.done(f"d={table.dim} |E|={table.num_entities} |R|={table.num_relations}")
        return {
            "stage": "train-embeddings",
            "dim": table.dim,
            "entities": table.num_entities,
            "relations": table.num_relations,
            "path": str(path),
        }

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("train-embeddings failed")
        raise


async def train_agent_stage(settings: Settings) -> dict[str, Any]:
    ctx = await _timed_stage("train-agent", settings)
    try:
        graph, train = load_training_graph(settings)
        table = load_table(settings, graph)
        reward_config = settings.reward_config()
        exploration = ExplorationContext(
            recency=build_recency_table(train, settings.beta_ir),
            popularity=entity_popularity(graph, settings.beta_ep),
        )
        model = await asyncio.to_thread(
            train_policy,
            graph,
            table,
            reward_config,
            exploration,
            settings.agent_episodes,
            lr=settings.agent_lr,
            discount=settings.discount,
            seed=settings.seed,
            batch_size=settings.agent_batch_size,
            hidden_size=settings.hidden_size,
            baseline_decay=settings.baseline_decay,
        )
        path = artifact_paths(settings).policy
        save_policy(model, path, extra={"reward_config": reward_config.model_dump(mode="json")})
        await publish(path, "train-agent", settings, format_version=POLICY_FORMAT_VERSION)

        summary = (
            f"{settings.agent_episodes} episodes α={reward_config.alpha} "
            f"metrics={','.join(reward_config.metrics) or '-'}"
        )
        await ctx.done(summary)
        return {
            "stage": "train-agent",
            "episodes": settings.agent_episodes,
            "alpha": reward_config.alpha,
            "metrics": list(reward_config.metrics),
            "path": str(path),
        }

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("train-agent failed")
        raise
