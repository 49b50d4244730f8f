"""
harness.py — Shared helpers for the test scripts.

  ok / fail / section / subsection   coloured report lines
  run_layers()                       run test functions layer by layer, print a summary
  build_graph() / hop_path()         small named graphs and paths for fixtures
  movie_graph() / music_graph()      the two worked examples used across tests
  random_graph()                     seeded random typed graph for property tests
"""

from __future__ import annotations

import sys
import traceback
from typing import Callable, Iterable, Sequence

import numpy as np

from kg.store import Direction, Hop, InteractionLog, KnowledgeGraph, ReasoningPath

# ── Colour helpers ────────────────────────────────────────────────────────────
GREEN  = "\033[92m"
RED    = "\033[91m"
YELLOW = "\033[93m"
CYAN   = "\033[96m"
BOLD   = "\033[1m"
RESET  = "\033[0m"

passed = failed = 0


def ok(msg: str) -> None:
    global passed
    passed += 1
    print(f"  {GREEN}✅{RESET} {msg}")


def fail(msg: str, exc: BaseException | None = None) -> None:
    global failed
    failed += 1
    detail = f" — {exc!r}" if exc else ""
    print(f"  {RED}❌{RESET} {msg}{detail}")


def section(title: str) -> None:
    print(f"\n{BOLD}{CYAN}{'═'*55}{RESET}")
    print(f"{BOLD}{CYAN}  {title}{RESET}")
    print(f"{BOLD}{CYAN}{'═'*55}{RESET}")


def subsection(title: str) -> None:
    print(f"\n  {YELLOW}── {title}{RESET}")


def run_layers(layers: Sequence[tuple[str, Iterable[Callable[[], None]]]]) -> None:
    """Run each test function, report it, and exit non-zero on any failure."""
    for title, tests in layers:
        section(title)
        for test in tests:
            label = (test.__doc__ or test.__name__).strip().splitlines()[0]
            try:
                test()
                ok(label)
            except Exception as exc:
                fail(label, exc)
                traceback.print_exc(limit=3)

    total = passed + failed
    print(f"\n{BOLD}{'═'*55}{RESET}")
    print(f"{BOLD}  RESULTS: {GREEN}{passed} passed{RESET}{BOLD}  |  {RED}{failed} failed{RESET}{BOLD}  |  {total} total{RESET}")
    print(f"{BOLD}{'═'*55}{RESET}\n")
    if failed > 0:
        sys.exit(1)


# ── Fixtures ──────────────────────────────────────────────────────────────────

def build_graph(
    entities: Sequence[tuple[str, str]],
    triples: Sequence[tuple[str, str, str]],
    feedback: str = "interacted",
    phrases: dict[str, str] | None = None,
) -> KnowledgeGraph:
    """Graph from (name, type) entities and named triples; display name = name."""
    index = {name: i for i, (name, _) in enumerate(entities)}
    relations = list(dict.fromkeys(r for _, r, _ in triples))
    rel_index = {r: i for i, r in enumerate(relations)}
    return KnowledgeGraph.build(
        [(name, tname, name) for name, tname in entities],
        relations,
        [(index[h], rel_index[r], index[t]) for h, r, t in triples],
        feedback_relation=feedback,
        relation_phrases=phrases,
    )


def hop_path(graph: KnowledgeGraph, origin: str, *hops: tuple[str, str, str]) -> ReasoningPath:
    """hop_path(g, "u", ("watched", "f", "m1"), ("directed", "b", "d1"), ...)"""
    return ReasoningPath(
        graph.entity_id(origin),
        tuple(
            Hop(graph.relation_id(r), Direction(d), graph.entity_id(e))
            for r, d, e in hops
        ),
    )


def movie_graph() -> KnowledgeGraph:
    return build_graph(
        [
            ("user_1", "user"), ("movie_1", "product"), ("movie_2", "product"),
            ("director_1", "director"),
        ],
        [
            ("user_1", "watched", "movie_1"),
            ("director_1", "directed", "movie_1"),
            ("director_1", "directed", "movie_2"),
        ],
        feedback="watched",
    )


def movie_path(graph: KnowledgeGraph) -> ReasoningPath:
    return hop_path(
        graph, "user_1",
        ("watched", "f", "movie_1"), ("directed", "b", "director_1"), ("directed", "f", "movie_2"),
    )


def music_graph() -> KnowledgeGraph:
    return build_graph(
        [
            ("u", "user"), ("song_1", "product"), ("song_2", "product"),
            ("artist_1", "artist"),
        ],
        [
            ("u", "listened", "song_1"),
            ("artist_1", "featured", "song_1"),
            ("artist_1", "featured", "song_2"),
        ],
        feedback="listened",
    )


def music_path(graph: KnowledgeGraph) -> ReasoningPath:
    return hop_path(
        graph, "u",
        ("listened", "f", "song_1"), ("featured", "b", "artist_1"), ("featured", "f", "song_2"),
    )


def random_graph(
    rng: np.random.Generator,
    max_entities: int = 50,
    relations: int = 4,
) -> tuple[KnowledgeGraph, InteractionLog]:
    """
    Random typed graph: users, products and attributes; users interact with
    products through the feedback relation, products link to attributes.
    """
    n_users = int(rng.integers(1, 5))
    n_products = int(rng.integers(2, 15))
    n_attrs = int(rng.integers(1, max(2, max_entities - n_users - n_products)))
    n_attrs = min(n_attrs, max_entities - n_users - n_products)
    entities = (
        [(f"u{i}", "user") for i in range(n_users)]
        + [(f"p{i}", "product") for i in range(n_products)]
        + [(f"a{i}", "attr") for i in range(n_attrs)]
    )
    triples: list[tuple[str, str, str]] = []
    rows: list[tuple[int, int, int]] = []
    for u in range(n_users):
        picks = rng.choice(n_products, size=int(rng.integers(1, min(4, n_products) + 1)), replace=False)
        for j, p in enumerate(sorted(picks.tolist())):
            triples.append((f"u{u}", "interacted", f"p{p}"))
            rows.append((u, n_users + p, int(rng.integers(0, 10_000)) + j))
    for p in range(n_products):
        for _ in range(int(rng.integers(1, 4))):
            a = int(rng.integers(0, n_attrs))
            r = int(rng.integers(0, relations))
            triples.append((f"p{p}", f"rel{r}", f"a{a}"))
    graph = build_graph(entities, triples, feedback="interacted")
    return graph, InteractionLog.from_rows(rows)
