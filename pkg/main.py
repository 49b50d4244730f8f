"""
main.py — pathrec command line.

Usage:
  python main.py [--config run.env] <command> [options]

Commands:
  synth             write a synthetic dataset
  ingest            load + filter a dataset into the workdir
  split             chronological train / valid / test split
  train-embeddings  relation-aware entity embeddings
  train-agent       REINFORCE path-reasoning policy
  recommend         beam-search candidates and top-n lists
  rerank            marginal-relevance post-processing
  explain           template explanations for every recommendation
  evaluate          NDCG / MRR and path-quality report
  stats             dataset distribution tables
  pipeline          every stage in order
  sweep             α grid over post-processing on a split
  log               recent stage runs from the registry

Exit status 0 on success; 1 with a single-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from typing import Any

from pydantic import ValidationError

from config import Settings, load_settings
from database import clear_registry, get_stage_log, init_db, list_artifacts, set_db_path
from kg.errors import PathRecError
from kg.synthetic import SyntheticSpec
from tools.data_tools import ingest, split, stats, synth
from tools.model_tools import train_agent_stage, train_embeddings_stage
from tools.pipeline_tools import run_pipeline, sweep
from tools.recommend_tools import evaluate_stage, explain_stage, recommend, rerank_stage

logger = logging.getLogger(__name__)


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="pathrec", description="Explainable path-reasoning recommender")
    p.add_argument("--config", help="KEY=value config file")
    p.add_argument("--workdir")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", help="output directory (default: dataset_dir)")
    s.add_argument("--spec", help="JSON file with a full synthetic spec")
    s.add_argument("--users", type=int)
    s.add_argument("--products", type=int)
    s.add_argument("--clusters", type=int)
    s.add_argument("--relation-imbalance", type=float)
    s.add_argument("--popularity-skew", type=float)
    s.add_argument("--single-relation", action="store_true",
                   help="one attribute relation instead of the default three")

    s = sub.add_parser("ingest", help="load and filter a dataset")
    s.add_argument("--dataset", dest="dataset_dir")
    s.add_argument("--min-relation-count", type=int)

    s = sub.add_parser("split", help="chronological split")
    s.add_argument("--train-frac", type=float)
    s.add_argument("--valid-frac", type=float)

    s = sub.add_parser("train-embeddings", help="train entity/relation embeddings")
    s.add_argument("--dim", dest="embedding_dim", type=int)
    s.add_argument("--epochs", dest="embedding_epochs", type=int)

    s = sub.add_parser("train-agent", help="train the path-reasoning policy")
    s.add_argument("--alpha", dest="agent_alpha", type=float)
    s.add_argument("--metrics", dest="agent_metrics", help="e.g. lir,sep,ptd")
    s.add_argument("--episodes", dest="agent_episodes", type=int)

    s = sub.add_parser("recommend", help="top-n recommendations with paths")
    who = s.add_mutually_exclusive_group()
    who.add_argument("--user", action="append", help="user id (repeatable)")
    who.add_argument("--all", action="store_true", help="every user with training data (default)")
    s.add_argument("--n", dest="top_n", type=int)
    s.add_argument("--out")

    s = sub.add_parser("rerank", help="post-processing re-ranking")
    s.add_argument("--alpha", dest="rerank_alpha", type=float)
    s.add_argument("--metric", dest="rerank_metrics", help="lir|lid|sep|sed|ptd|ptc")
    s.add_argument("--n", dest="top_n", type=int)
    s.add_argument("--in", dest="in_path")
    s.add_argument("--out")

    s = sub.add_parser("explain", help="attach explanations")
    s.add_argument("--in", dest="in_path")
    s.add_argument("--out")

    s = sub.add_parser("evaluate", help="evaluation report")
    s.add_argument("--run")
    s.add_argument("--test")
    s.add_argument("--n", dest="top_n", type=int)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("--dataset", dest="dataset_dir", help="raw dataset to ingest first")
    s.add_argument("--out")

    sub.add_parser("pipeline", help="run every stage")

    s = sub.add_parser("sweep", help="α grid for post-processing")
    s.add_argument("--split", choices=["valid", "test"], default="valid")
    s.add_argument("--metric", dest="rerank_metrics")

    s = sub.add_parser("log", help="recent stage runs")
    s.add_argument("--limit", type=int, default=20)
    s.add_argument("--stage")
    s.add_argument("--artifacts", action="store_true", help="list registered artifacts instead")
    s.add_argument("--clear", action="store_true", help="forget registry entries (all, or --stage)")

    return p.parse_args(argv)


_SETTING_KEYS = (
    "workdir", "seed", "log_level", "dataset_dir", "min_relation_count",
    "train_frac", "valid_frac", "embedding_dim", "embedding_epochs",
    "agent_alpha", "agent_metrics", "agent_episodes", "top_n",
    "rerank_alpha", "rerank_metrics",
)


def _settings_from(args: argparse.Namespace) -> Settings:
    overrides = {k: getattr(args, k, None) for k in _SETTING_KEYS}
    return load_settings(args.config, **overrides)


def _synthetic_spec(args: argparse.Namespace, settings: Settings) -> SyntheticSpec:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = SyntheticSpec.model_validate_json(fh.read())
    else:
        spec = SyntheticSpec(seed=settings.seed, feedback_relation=settings.feedback_relation)
    updates: dict[str, Any] = {
        k: v for k, v in {
            "users": args.users,
            "products": args.products,
            "clusters": args.clusters,
            "relation_imbalance": args.relation_imbalance,
            "popularity_skew": args.popularity_skew,
        }.items() if v is not None
    }
    if args.single_relation:
        updates["attributes"] = [spec.attributes[0].model_dump()]
    return SyntheticSpec.model_validate({**spec.model_dump(), **updates})


async def _dispatch(args: argparse.Namespace, settings: Settings) -> Any:
    cmd = args.command
    if cmd == "synth":
        return await synth(settings, _synthetic_spec(args, settings), args.out)
    if cmd == "ingest":
        return await ingest(settings)
    if cmd == "split":
        return await split(settings)
    if cmd == "train-embeddings":
        return await train_embeddings_stage(settings)
    if cmd == "train-agent":
        return await train_agent_stage(settings)
    if cmd == "recommend":
        return await recommend(settings, users=args.user, out_path=args.out)
    if cmd == "rerank":
        return await rerank_stage(settings, in_path=args.in_path, out_path=args.out)
    if cmd == "explain":
        return await explain_stage(settings, in_path=args.in_path, out_path=args.out)
    if cmd == "evaluate":
        return await evaluate_stage(settings, run_path=args.run, truth_path=args.test)
    if cmd == "stats":
        if args.dataset_dir:
            await ingest(settings)
        return await stats(settings, out_dir=args.out)
    if cmd == "pipeline":
        return await run_pipeline(settings)
    if cmd == "sweep":
        return await sweep(settings, split_name=args.split)
    if cmd == "log":
        if args.clear:
            return {"cleared": await clear_registry(args.stage)}
        if args.artifacts:
            return await list_artifacts(args.stage)
        return await get_stage_log(limit=args.limit, stage=args.stage)
    raise ValueError(f"unknown command {cmd}")


async def _run(args: argparse.Namespace, settings: Settings) -> Any:
    settings.workdir.mkdir(parents=True, exist_ok=True)
    set_db_path(settings.database_path)
    await init_db()
    return await _dispatch(args, settings)


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    try:
        settings = _settings_from(args)
        settings.configure_logging()
        result = asyncio.run(_run(args, settings))
    except (PathRecError, ValidationError, OSError, ValueError) as exc:
        message = " ".join(str(exc).split())
        print(
            json.dumps({"error": type(exc).__name__, "stage": args.command, "message": message}),
            file=sys.stderr,
        )
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
