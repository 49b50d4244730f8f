"""
quality/evaluation.py — Ranking utility, aggregate path quality, dataset statistics.

evaluate_run()   per-user NDCG@n / MRR@n plus the six path metrics, macro-averaged
dataset_stats()  recency buckets, per-type in-degree summaries, relation frequencies
select_alpha()   best α for a metric under a relative NDCG loss budget
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from kg.store import InteractionLog, KnowledgeGraph, ReasoningPath
from quality.metrics import METRIC_NAMES, MetricContext, path_quality

logger = logging.getLogger(__name__)

DAY = 86_400
TIME_BUCKETS: tuple[tuple[str, float], ...] = (
    ("<=1D", DAY),
    ("<=1M", 30 * DAY),
    ("<=1Y", 365 * DAY),
    (">1Y", math.inf),
)
REPORT_COLUMNS = ("ndcg", "mrr", *METRIC_NAMES)


# ── Ranking utility ───────────────────────────────────────────────────────────

def ndcg_at_k(ranked: Sequence[int], relevant: set[int] | frozenset[int], n: int = 10) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not relevant:
        return 0.0
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, item in enumerate(ranked[:n], start=1)
        if item in relevant
    )
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(relevant), n) + 1))
    return dcg / ideal


def mrr_at_k(ranked: Sequence[int], relevant: set[int] | frozenset[int], n: int = 10) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    for rank, item in enumerate(ranked[:n], start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


# ── Run evaluation ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class UserRecommendation:
    products: tuple[int, ...]
    paths: tuple[ReasoningPath, ...]


@dataclass
class RunReport:
    n: int
    per_user: dict[int, dict[str, float | None]] = field(default_factory=dict)

    @property
    def aggregate(self) -> dict[str, float | None]:
        """Macro averages; users with an undefined value are left out of that column."""
        out: dict[str, float | None] = {"users": float(len(self.per_user))}
        for col in REPORT_COLUMNS:
            vals = [row[col] for row in self.per_user.values() if row[col] is not None]
            out[col] = float(np.mean(vals)) if vals else None
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "aggregate": self.aggregate,
            "per_user": {str(u): row for u, row in sorted(self.per_user.items())},
        }

    def write(self, tsv_path: str | Path, json_path: str | Path, names: Sequence[str] | None = None) -> None:
        header = "user\t" + "\t".join(REPORT_COLUMNS) + "\n"
        lines = []
        for user, row in sorted(self.per_user.items()):
            label = names[user] if names is not None else str(user)
            cells = ["" if row[c] is None else repr(row[c]) for c in REPORT_COLUMNS]
            lines.append(label + "\t" + "\t".join(cells) + "\n")
        agg = self.aggregate
        lines.append("ALL\t" + "\t".join("" if agg[c] is None else repr(agg[c]) for c in REPORT_COLUMNS) + "\n")
        Path(tsv_path).write_text(header + "".join(lines), encoding="utf-8")
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")


def evaluate_run(
    recommendations: Mapping[int, UserRecommendation],
    test: InteractionLog,
    ctx: MetricContext,
    n: int = 10,
) -> RunReport:
    """
    Every user with test interactions is scored. A user without any
    recommendation gets 0 utility and no path metrics.
    """
    report = RunReport(n=n)
    for user in test.users():
        relevant = test.products_of(user)
        if not relevant:
            continue
        rec = recommendations.get(user, UserRecommendation((), ()))
        row: dict[str, float | None] = {
            "ndcg": ndcg_at_k(rec.products, relevant, n),
            "mrr": mrr_at_k(rec.products, relevant, n),
        }
        if rec.paths:
            row.update(path_quality(list(rec.paths[:n]), ctx))
        else:
            row.update({m: None for m in METRIC_NAMES})
        report.per_user[user] = row
    logger.info("Evaluated %d users: %s", len(report.per_user), report.aggregate)
    return report


def select_alpha(
    results: Mapping[float, Mapping[str, float | None]],
    metric: str,
    budget: float = 0.1,
) -> tuple[float, Mapping[str, float | None]]:
    """
    Among α values whose NDCG is at least (1 - budget) of the α=0 NDCG,
    the one with the highest `metric` (ties → smaller α).
    """
    if 0.0 not in results:
        raise ValueError("results must include alpha=0 as the reference run")
    floor = (1.0 - budget) * (results[0.0]["ndcg"] or 0.0)
    eligible = [
        a for a, row in results.items()
        if (row["ndcg"] or 0.0) >= floor and row.get(metric) is not None
    ]
    if not eligible:
        return 0.0, results[0.0]
    best = min(eligible, key=lambda a: (-results[a][metric], a))
    return best, results[best]


# ── Dataset statistics ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DatasetStats:
    recency_buckets: dict[str, float]
    degree_summary: dict[str, dict[str, float]]
    relation_frequency: dict[str, tuple[int, float]]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "recency": out / "recency_buckets.tsv",
            "degrees": out / "degree_summary.tsv",
            "relations": out / "relation_frequency.tsv",
        }
        paths["recency"].write_text(
            "bucket\tpercent_users\n"
            + "".join(f"{b}\t{p!r}\n" for b, p in self.recency_buckets.items()),
            encoding="utf-8",
        )
        cols = ("count", "min", "p25", "median", "p75", "p90", "max", "mean")
        paths["degrees"].write_text(
            "type\t" + "\t".join(cols) + "\n"
            + "".join(
                t + "\t" + "\t".join(repr(s[c]) for c in cols) + "\n"
                for t, s in self.degree_summary.items()
            ),
            encoding="utf-8",
        )
        paths["relations"].write_text(
            "relation\tcount\tpercent\n"
            + "".join(f"{r}\t{c}\t{p!r}\n" for r, (c, p) in self.relation_frequency.items()),
            encoding="utf-8",
        )
        return paths


def time_bucket(seconds: float) -> str:
    for label, bound in TIME_BUCKETS:
        if seconds <= bound:
            return label
    return TIME_BUCKETS[-1][0]


def dataset_stats(graph: KnowledgeGraph, log: InteractionLog) -> DatasetStats:
    counts = Counter({label: 0 for label, _ in TIME_BUCKETS})
    users = [u for u in log.users() if log.get(u)]
    for user in users:
        stamps = np.array([it.timestamp for it in log.get(user)], dtype=np.float64)
        counts[time_bucket(float(np.mean(stamps[-1] - stamps)))] += 1
    buckets = {
        label: (100.0 * counts[label] / len(users) if users else 0.0)
        for label, _ in TIME_BUCKETS
    }

    summary: dict[str, dict[str, float]] = {}
    for tname in graph.type_names:
        degs = np.array([graph.in_degree(e) for e in graph.entities_of_type(tname)], dtype=np.float64)
        if degs.size == 0:
            continue
        p25, med, p75, p90 = np.percentile(degs, [25, 50, 75, 90])
        summary[tname] = {
            "count": float(degs.size), "min": float(degs.min()), "p25": float(p25),
            "median": float(med), "p75": float(p75), "p90": float(p90),
            "max": float(degs.max()), "mean": float(degs.mean()),
        }

    rel_counts = Counter(t.relation for t in graph.triples)
    total = sum(rel_counts.values())
    freq = {
        graph.relation_names[r]: (c, 100.0 * c / total)
        for r, c in sorted(rel_counts.items(), key=lambda rc: (-rc[1], rc[0]))
    }
    return DatasetStats(recency_buckets=buckets, degree_summary=summary, relation_frequency=freq)
