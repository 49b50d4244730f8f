"""
tools/recommend_tools.py — Recommendation, post-processing and reporting stages.

  recommend()       beam-search candidates per user → top-n records (JSON lines)
  rerank_stage()    marginal-relevance re-ranking of stored candidates
  explain_stage()   adds an `explanation` string to every recommendation
  evaluate_stage()  NDCG/MRR and path-quality report (TSV + JSON)
"""

from __future__ import annotations

import asyncio
import logging
from pathlib import Path
from typing import Any, Sequence

from config import Settings
from kg.store import InteractionLog, KnowledgeGraph, ReasoningPath, read_interactions
from models.agent import ExplorationContext, PolicyModel, load_policy
from models.sampler import sample_candidates, select_best_paths, top_n
from quality.evaluation import RunReport, evaluate_run
from quality.explain import ExplanationTemplate, names_from_graph, render
from quality.metrics import MetricContext, build_recency_table, entity_popularity
from quality.rerank import RerankConfig, rerank
from tools.common import (
    _timed_stage,
    artifact_paths,
    load_table,
    load_training_graph,
    make_record,
    publish,
    read_records,
    record_candidates,
    record_recommendation,
    require,
    write_records,
)

logger = logging.getLogger(__name__)


def metric_context(settings: Settings, graph: KnowledgeGraph, train: InteractionLog) -> MetricContext:
    return MetricContext.build(graph, train, settings.beta_ir, settings.beta_ep)


# ── Recommend ────────────────────────────────────────────────────────────────

def recommend_records(
    settings: Settings,
    graph: KnowledgeGraph,
    train: InteractionLog,
    policy: PolicyModel,
    users: Sequence[int],
) -> list[dict[str, Any]]:
    # sample within the action sets the policy was trained on
    reward_config = policy.reward_config if policy.reward_config is not None else settings.reward_config()
    exploration = ExplorationContext(
        recency=build_recency_table(train, settings.beta_ir),
        popularity=entity_popularity(graph, settings.beta_ep),
    )
    records = []
    short = 0
    for user in users:
        cands = sample_candidates(
            user, policy, graph,
            hop_count=reward_config.hop_count,
            beam_sizes=reward_config.prune_sizes,
            reward_config=reward_config,
            exploration=exploration,
        ).without_products(train.products_of(user))
        ranked = top_n(select_best_paths(cands), settings.top_n)
        short += ranked.short
        records.append(make_record(ranked, cands, graph, "recommend"))
    if short:
        logger.warning("%d/%d users received fewer than %d recommendations", short, len(users), settings.top_n)
    return records


async def recommend(
    settings: Settings,
    users: Sequence[str] | None = None,
    out_path: str | Path | None = None,
) -> dict[str, Any]:
    ctx = await _timed_stage("recommend", settings)
    try:
        graph, train = load_training_graph(settings)
        table = load_table(settings, graph)
        policy = load_policy(require(artifact_paths(settings).policy, "train-agent"), table)
        ids = [graph.entity_id(u) for u in users] if users else [u for u in train.users() if train.get(u)]

        records = await asyncio.to_thread(recommend_records, settings, graph, train, policy, ids)
        out = Path(out_path or artifact_paths(settings).recommendations)
        count = write_records(out, records)
        await publish(out, "recommend", settings)

        await ctx.done(f"{count} users → {out.name}")
        return {"stage": "recommend", "users": count, "path": str(out)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("recommend failed")
        raise


# ── Re-rank ───────────────────────────────────────────────────────────────────

def rerank_records(
    records: Sequence[dict[str, Any]],
    graph: KnowledgeGraph,
    mctx: MetricContext,
    config: RerankConfig,
) -> list[dict[str, Any]]:
    out = []
    for record in records:
        cands = record_candidates(record)
        ranked = rerank(cands, config, mctx)
        out.append(make_record(
            ranked, cands, graph, "rerank",
            extra={"alpha": config.alpha, "metrics": list(config.metrics)},
        ))
    return out


async def rerank_stage(
    settings: Settings,
    in_path: str | Path | None = None,
    out_path: str | Path | None = None,
) -> dict[str, Any]:
    ctx = await _timed_stage("rerank", settings)
    try:
        layout = artifact_paths(settings)
        graph, train = load_training_graph(settings)
        config = settings.rerank_config()
        records = read_records(in_path or layout.recommendations, "recommend")

        reranked = await asyncio.to_thread(
            rerank_records, records, graph, metric_context(settings, graph, train), config
        )
        out = Path(out_path or layout.reranked)
        count = write_records(out, reranked)
        await publish(out, "rerank", settings)

        await ctx.done(f"{count} users α={config.alpha} metrics={','.join(config.metrics)}")
        return {"stage": "rerank", "users": count, "alpha": config.alpha, "path": str(out)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("rerank failed")
        raise


# ── Explain ───────────────────────────────────────────────────────────────────

async def explain_stage(
    settings: Settings,
    in_path: str | Path | None = None,
    out_path: str | Path | None = None,
) -> dict[str, Any]:
    ctx = await _timed_stage("explain", settings)
    try:
        layout = artifact_paths(settings)
        graph, _ = load_training_graph(settings)
        names = names_from_graph(graph)
        template = ExplanationTemplate(settings.explanation_template)
        records = read_records(in_path or layout.reranked, "rerank")

        rendered = 0
        for record in records:
            for item in record["recommendations"]:
                path = ReasoningPath.from_json(item["path_ids"])
                item["explanation"] = render(path, template, names)
                rendered += 1
        out = Path(out_path or layout.explained)
        write_records(out, records)
        await publish(out, "explain", settings)

        await ctx.done(f"{rendered} explanations → {out.name}")
        return {"stage": "explain", "explanations": rendered, "path": str(out)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("explain failed")
        raise


# ── Evaluate ─────────────────────────────────────────────────────────────────

def evaluate_records(
    records: Sequence[dict[str, Any]],
    truth: InteractionLog,
    mctx: MetricContext,
    n: int,
) -> RunReport:
    recs = {int(r["user_id"]): record_recommendation(r) for r in records}
    return evaluate_run(recs, truth, mctx, n)


async def evaluate_stage(
    settings: Settings,
    run_path: str | Path | None = None,
    truth_path: str | Path | None = None,
) -> dict[str, Any]:
    ctx = await _timed_stage("evaluate", settings)
    try:
        layout = artifact_paths(settings)
        graph, train = load_training_graph(settings)
        run = Path(run_path or layout.explained)
        truth_file = Path(truth_path) if truth_path else require(layout.split_file("test"), "split")
        truth = read_interactions(require(truth_file, "split"), graph)

        report = evaluate_records(
            read_records(run, "explain"), truth, metric_context(settings, graph, train), settings.top_n,
        )
        layout.reports.mkdir(parents=True, exist_ok=True)
        tsv = layout.reports / f"{run.stem}.report.tsv"
        js = layout.reports / f"{run.stem}.report.json"
        report.write(tsv, js, names=graph.entity_names)
        for p in (tsv, js):
            await publish(p, "evaluate", settings, sidecar=False)

        agg = report.aggregate
        await ctx.done(f"ndcg={agg['ndcg']} mrr={agg['mrr']} over {len(report.per_user)} users")
        return {"stage": "evaluate", "aggregate": agg, "tsv": str(tsv), "json": str(js)}

    except Exception as exc:
        await ctx.error(str(exc))
        logger.exception("evaluate failed")
        raise
