"""
tools/pipeline_tools.py — Multi-stage orchestration.

  run_pipeline()  ingest → split → embeddings → agent → recommend
                  → rerank (skipped at α=0) → explain → evaluate → stats
  sweep()         re-rank one recommendation run over alpha_grid and pick α
                  per metric under the NDCG budget
"""

from __future__ import annotations

import asyncio
import json
import logging
from typing import Any, Literal

from config import Settings
from quality.evaluation import select_alpha
from tools.common import (
    _timed_stage,
    artifact_paths,
    load_split_part,
    load_training_graph,
    publish,
    read_records,
)
from tools.data_tools import ingest, split, stats
from tools.model_tools import train_agent_stage, train_embeddings_stage
from tools.recommend_tools import (
    evaluate_records,
    evaluate_stage,
    explain_stage,
    metric_context,
    recommend,
    rerank_records,
    rerank_stage,
)

logger = logging.getLogger(__name__)


async def run_pipeline(settings: Settings) -> dict[str, Any]:
    layout = artifact_paths(settings)
    results: dict[str, Any] = {}
    results["ingest"] = await ingest(settings)
    results["split"] = await split(settings)
    results["train-embeddings"] = await train_embeddings_stage(settings)
    results["train-agent"] = await train_agent_stage(settings)
    results["recommend"] = await recommend(settings)

    if settings.rerank_alpha > 0:
        results["rerank"] = await rerank_stage(settings)
        explain_in = layout.reranked
    else:
        logger.info("rerank_alpha is 0; explaining the recommend output directly")
        explain_in = layout.recommendations

    results["explain"] = await explain_stage(settings, in_path=explain_in)
    results["evaluate"] = await evaluate_stage(settings, run_path=layout.explained)
    results["stats"] = await stats(settings)
    return results


async def sweep(
    settings: Settings,
    split_name: Literal["valid", "test"] = "valid",
) -> dict[str, Any]:
    ctx = await _timed_stage("sweep", settings)
    try:
        layout = artifact_paths(settings)
        graph, train = load_training_graph(settings)
        truth = load_split_part(settings, graph, split_name)
        mctx = metric_context(settings, graph, train)
        records = read_records(layout.recommendations, "recommend")

        def _run() -> dict[str, dict[float, dict[str, float | None]]]:
            table: dict[str, dict[float, dict[str, float | None]]] = {}
            for metric in settings.rerank_metrics:
                table[metric] = {}
                for alpha in settings.alpha_grid:
                    config = settings.rerank_config(alpha).model_copy(update={"metrics": (metric,)})
                    reranked = rerank_records(records, graph, mctx, config)
                    table[metric][alpha] = evaluate_records(reranked, truth, mctx, settings.top_n).aggregate
                    logger.info("sweep %s α=%.2f ndcg=%s %s=%s", metric, alpha,
                                table[metric][alpha]["ndcg"], metric, table[metric][alpha][metric])
            return table

        table = await asyncio.to_thread(_run)
        best = {}
        for metric, rows in table.items():
            alpha, row = select_alpha(rows, metric, settings.ndcg_budget)
            best[metric] = {"alpha": alpha, "ndcg": row["ndcg"], metric: row[metric]}

        layout.reports.mkdir(parents=True, exist_ok=True)
        js = layout.reports / f"sweep.{split_name}.json"
        js.write_text(json.dumps({
            "split": split_name,
            "budget": settings.ndcg_budget,
            "best": best,
            "grid": {m: {str(a): row for a, row in rows.items()} for m, rows in table.items()},
        }, indent=2, sort_keys=True), encoding="utf-8")
        tsv = layout.reports / f"sweep.{split_name}.tsv"
        tsv.write_text("metric\talpha\tndcg\tmrr\tvalue\n" + "".join(
            f"{m}\t{a!r}\t{row['ndcg']!r}\t{row['mrr']!r}\t{row[m]!r}\n"
            for m, rows in table.items() for a, row in rows.items()
        ), encoding="utf-8")
        for p in (js, tsv):
            await publish(p, "sweep", settings, sidecar=False)

        await ctx.done(", ".join(f"{m}: α={b['alpha']}" for m, b in best.items()))
        return {"stage": "sweep", "split": split_name, "best": best, "json": str(js)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("sweep failed")
        raise
