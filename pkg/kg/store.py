"""
kg/store.py — Immutable knowledge-graph data model and dataset ingestion.

Types:
  KnowledgeGraph  — typed entities, relation types, deduplicated triples and a
                    bidirectional adjacency index (every triple appears once
                    forward from its head and once backward from its tail)
  ReasoningPath   — user-rooted chain of (relation, direction, entity) hops
  InteractionLog  — per-user chronologically sorted (product, timestamp) lists

Files (UTF-8 TSV):
  interactions.tsv  user_id  product_id  timestamp
  kg.tsv            head_id  relation_name  tail_id
  entities.tsv      entity_id  type_name  display_name
  relations.tsv     relation_name  verb_phrase          (optional)
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal, Mapping, NamedTuple, Sequence

from kg.errors import (
    DatasetError,
    DatasetParseError,
    PathStructureError,
    UnknownEntityError,
)

logger = logging.getLogger(__name__)

RelationExclusion = Literal["directed", "relation", "none"]


class Direction(str, Enum):
    FORWARD = "f"
    BACKWARD = "b"


class Hop(NamedTuple):
    """One traversed edge; also the shape of an agent action."""

    relation: int
    direction: Direction
    entity: int

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.relation, self.direction.value, self.entity)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class PathTriple(NamedTuple):
    head: int
    relation: int
    direction: Direction
    tail: int


class Interaction(NamedTuple):
    product: int
    timestamp: int


# ── Reasoning paths ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ReasoningPath:
    """
    A walk from `origin`; construction enforces distinct entities only.
    Relation-token reuse depends on the exclusion mode and is checked by
    `KnowledgeGraph.is_valid_path` and the agent's `action_space`.
    """

    origin: int
    hops: tuple[Hop, ...]

    def __post_init__(self) -> None:
        if not self.hops:
            raise PathStructureError("a reasoning path needs at least one hop")
        seen = {self.origin}
        for hop in self.hops:
            if hop.entity in seen:
                raise PathStructureError(
                    f"entity {hop.entity} repeated in path from {self.origin}"
                )
            seen.add(hop.entity)

    @property
    def k(self) -> int:
        return len(self.hops)

    @property
    def entities(self) -> tuple[int, ...]:
        return (self.origin, *(h.entity for h in self.hops))

    @property
    def linked_entity(self) -> int:
        """e_1: the product of the linking interaction."""
        return self.hops[0].entity

    @property
    def shared_entity(self) -> int:
        """e_{k-1}: the entity connecting experienced and recommended product."""
        return self.entities[-2]

    @property
    def terminal(self) -> int:
        return self.hops[-1].entity

    @property
    def path_id(self) -> tuple:
        return (self.origin, *(h.key for h in self.hops))

    def to_json(self) -> dict[str, Any]:
        return {
            "origin": self.origin,
            "hops": [[h.relation, h.direction.value, h.entity] for h in self.hops],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ReasoningPath":
        hops = tuple(
            Hop(int(r), Direction(d), int(e)) for r, d, e in data["hops"]
        )
        return cls(origin=int(data["origin"]), hops=hops)


class PathParts(NamedTuple):
    linking_interaction: PathTriple
    entity_chain: tuple[PathTriple, ...]
    recommendation: PathTriple


def path_type(path: ReasoningPath) -> int:
    """The path type is the relation of the last hop."""
    return path.hops[-1].relation


def _path_triples(path: ReasoningPath) -> list[PathTriple]:
    ents = path.entities
    return [
        PathTriple(ents[i], hop.relation, hop.direction, hop.entity)
        for i, hop in enumerate(path.hops)
    ]


def path_parts(path: ReasoningPath, graph: "KnowledgeGraph") -> PathParts:
    if path.k != 3:
        raise PathStructureError(f"path parts need k=3, got k={path.k}")
    if not graph.is_user(path.origin):
        raise PathStructureError(f"path origin {path.origin} is not a user")
    if not graph.is_product(path.linked_entity):
        raise PathStructureError(f"linked entity {path.linked_entity} is not a product")
    if not graph.is_product(path.terminal):
        raise PathStructureError(f"terminal entity {path.terminal} is not a product")
    triples = _path_triples(path)
    return PathParts(
        linking_interaction=triples[0],
        entity_chain=tuple(triples[1:-1]),
        recommendation=triples[-1],
    )


# ── Interaction log ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class InteractionLog:
    by_user: Mapping[int, tuple[Interaction, ...]]

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[int, int, int]]) -> "InteractionLog":
        grouped: dict[int, list[Interaction]] = {}
        for user, product, ts in rows:
            grouped.setdefault(user, []).append(Interaction(product, ts))
        # stable sort: ties keep file order
        return cls({
            u: tuple(sorted(items, key=lambda it: it.timestamp))
            for u, items in grouped.items()
        })

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_user.values())

    def users(self) -> list[int]:
        return sorted(self.by_user)

    def get(self, user: int) -> tuple[Interaction, ...]:
        return self.by_user.get(user, ())

    def products_of(self, user: int) -> frozenset[int]:
        return frozenset(it.product for it in self.get(user))

    def rows(self) -> Iterator[tuple[int, int, int]]:
        for user in self.users():
            for it in self.by_user[user]:
                yield user, it.product, it.timestamp


class LogSplit(NamedTuple):
    train: InteractionLog
    valid: InteractionLog
    test: InteractionLog
    flagged: frozenset[int]


def _floor_frac(frac: float | Fraction, m: int) -> int:
    # decimal semantics: 0.7 * 10 is exactly 7
    if not isinstance(frac, Fraction):
        frac = Fraction(str(frac))
    return floor(frac * m)


def chronological_split(
    log: InteractionLog,
    train_frac: float = 0.7,
    valid_frac: float = 0.1,
) -> LogSplit:
    if train_frac <= 0 or valid_frac <= 0 or train_frac + valid_frac >= 1:
        raise ValueError(
            f"need positive fractions with sum < 1, got {train_frac}/{valid_frac}"
        )
    train: dict[int, tuple[Interaction, ...]] = {}
    valid: dict[int, tuple[Interaction, ...]] = {}
    test: dict[int, tuple[Interaction, ...]] = {}
    flagged: set[int] = set()

    for user in log.users():
        items = log.by_user[user]
        m = len(items)
        if m < 3:
            train[user] = items
            flagged.add(user)
            continue
        # cumulative boundaries: 9 → 6/1/2, 10 → 7/1/2
        n_train = _floor_frac(train_frac, m)
        n_valid = _floor_frac(Fraction(str(train_frac)) + Fraction(str(valid_frac)), m) - n_train
        train[user] = items[:n_train]
        if n_valid:
            valid[user] = items[n_train:n_train + n_valid]
        if n_train + n_valid < m:
            test[user] = items[n_train + n_valid:]

    if flagged:
        logger.warning(
            "%d users have fewer than 3 interactions; kept entirely in train",
            len(flagged),
        )
    return LogSplit(
        InteractionLog(train), InteractionLog(valid), InteractionLog(test),
        frozenset(flagged),
    )


# ── Knowledge graph ───────────────────────────────────────────────────────────

class Edge(NamedTuple):
    relation: int
    neighbor: int
    direction: Direction


@dataclass(frozen=True)
class KnowledgeGraph:
    entity_names: tuple[str, ...]
    entity_types: tuple[int, ...]
    type_names: tuple[str, ...]
    display_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    relation_phrases: Mapping[int, str]
    triples: tuple[Triple, ...]
    users: frozenset[int]
    products: frozenset[int]
    feedback_relation: int
    user_type: str
    product_type: str
    adjacency: tuple[tuple[Edge, ...], ...] = field(repr=False)
    entity_index: Mapping[str, int] = field(repr=False)
    relation_index: Mapping[str, int] = field(repr=False)
    triple_set: frozenset[Triple] = field(repr=False)

    @classmethod
    def build(
        cls,
        entities: Sequence[tuple[str, str, str]],
        relation_names: Sequence[str],
        triples: Iterable[tuple[int, int, int]],
        feedback_relation: str,
        user_type: str = "user",
        product_type: str = "product",
        relation_phrases: Mapping[str, str] | None = None,
    ) -> "KnowledgeGraph":
        """
        Assemble a graph from (entity_id, type_name, display_name) rows,
        relation names and integer triples; duplicates are dropped.
        """
        names = tuple(e[0] for e in entities)
        type_names: list[str] = []
        type_index: dict[str, int] = {}
        ent_types: list[int] = []
        for _, tname, _ in entities:
            if tname not in type_index:
                type_index[tname] = len(type_names)
                type_names.append(tname)
            ent_types.append(type_index[tname])

        rel_names = list(relation_names)
        if feedback_relation not in rel_names:
            rel_names.append(feedback_relation)
        rel_index = {r: i for i, r in enumerate(rel_names)}

        uniq = sorted({Triple(*t) for t in triples})
        n_ent, n_rel = len(names), len(rel_names)
        for t in uniq:
            if not (0 <= t.head < n_ent and 0 <= t.tail < n_ent):
                raise DatasetError(f"triple {t} references an unknown entity")
            if not 0 <= t.relation < n_rel:
                raise DatasetError(f"triple {t} references an unknown relation")

        users = frozenset(
            i for i, t in enumerate(ent_types) if type_names[t] == user_type
        )
        products = frozenset(
            i for i, t in enumerate(ent_types) if type_names[t] == product_type
        )
        fb = rel_index[feedback_relation]
        for t in uniq:
            if t.relation == fb and (t.head not in users or t.tail not in products):
                raise DatasetError(
                    f"feedback triple {t} must connect a user to a product"
                )

        adj: list[list[Edge]] = [[] for _ in range(n_ent)]
        for t in uniq:
            adj[t.head].append(Edge(t.relation, t.tail, Direction.FORWARD))
            adj[t.tail].append(Edge(t.relation, t.head, Direction.BACKWARD))

        phrases = {
            rel_index[r]: p for r, p in (relation_phrases or {}).items()
            if r in rel_index
        }
        return cls(
            entity_names=names,
            entity_types=tuple(ent_types),
            type_names=tuple(type_names),
            display_names=tuple(e[2] for e in entities),
            relation_names=tuple(rel_names),
            relation_phrases=phrases,
            triples=tuple(uniq),
            users=users,
            products=products,
            feedback_relation=fb,
            user_type=user_type,
            product_type=product_type,
            adjacency=tuple(tuple(sorted(a, key=lambda e: (e.relation, e.neighbor, e.direction.value))) for a in adj),
            entity_index={n: i for i, n in enumerate(names)},
            relation_index=rel_index,
            triple_set=frozenset(uniq),
        )

    # ── Lookups ───────────────────────────────────────────────────────────

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_index[name]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_index[name]
        except KeyError:
            raise UnknownEntityError(f"unknown relation {name!r}") from None

    def is_user(self, entity: int) -> bool:
        return entity in self.users

    def is_product(self, entity: int) -> bool:
        return entity in self.products

    def edges(self, entity: int) -> tuple[Edge, ...]:
        return self.adjacency[entity]

    def type_of(self, entity: int) -> str:
        return self.type_names[self.entity_types[entity]]

    def entities_of_type(self, type_name: str) -> list[int]:
        return [i for i in range(self.num_entities) if self.type_of(i) == type_name]

    def in_degree(self, entity: int) -> int:
        """Incoming edges in the bidirectional view = triples the entity is in."""
        return len(self.adjacency[entity])

    def has_edge(self, head: int, hop: Hop) -> bool:
        if hop.direction is Direction.FORWARD:
            return Triple(head, hop.relation, hop.entity) in self.triple_set
        return Triple(hop.entity, hop.relation, head) in self.triple_set

    def is_valid_path(
        self, path: ReasoningPath, relation_exclusion: RelationExclusion = "directed"
    ) -> bool:
        current = path.origin
        tokens: set = set()
        for hop in path.hops:
            if not self.has_edge(current, hop):
                return False
            token = exclusion_token(hop, relation_exclusion)
            if token is not None:
                if token in tokens:
                    return False
                tokens.add(token)
            current = hop.entity
        return True

    def path_names(self, path: ReasoningPath) -> list[str]:
        """Alternating entity / relation names, backward hops suffixed ^-1."""
        out = [self.entity_names[path.origin]]
        for hop in path.hops:
            rel = self.relation_names[hop.relation]
            out.append(rel if hop.direction is Direction.FORWARD else f"{rel}^-1")
            out.append(self.entity_names[hop.entity])
        return out

    def with_feedback(self, log: InteractionLog) -> "KnowledgeGraph":
        """A new graph that also holds one feedback triple per logged interaction."""
        extra = [
            Triple(u, self.feedback_relation, p)
            for u, p, _ in log.rows()
        ]
        entities = [
            (self.entity_names[i], self.type_of(i), self.display_names[i])
            for i in range(self.num_entities)
        ]
        return KnowledgeGraph.build(
            entities,
            self.relation_names,
            [*self.triples, *extra],
            feedback_relation=self.relation_names[self.feedback_relation],
            user_type=self.user_type,
            product_type=self.product_type,
            relation_phrases={
                self.relation_names[r]: p for r, p in self.relation_phrases.items()
            },
        )


def exclusion_token(hop: Hop, mode: RelationExclusion):
    if mode == "directed":
        return (hop.relation, hop.direction)
    if mode == "relation":
        return hop.relation
    return None


# ── Ingestion ─────────────────────────────────────────────────────────────────

def _read_tsv(path: str | Path, columns: int) -> Iterator[tuple[int, list[str]]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise DatasetParseError(
                    path, line_no, f"expected {columns} columns, got {len(parts)}"
                )
            yield line_no, parts


def read_interaction_rows(path: str | Path) -> list[tuple[str, str, int]]:
    rows = []
    for line_no, (user, product, ts) in _read_tsv(path, 3):
        try:
            stamp = int(ts)
        except ValueError:
            raise DatasetParseError(path, line_no, f"bad timestamp {ts!r}") from None
        rows.append((user, product, stamp))
    return rows


def load_dataset(
    interactions_file: str | Path,
    kg_file: str | Path,
    entities_file: str | Path,
    min_relation_count: int = 0,
    feedback_relation: str = "interacted",
    relations_file: str | Path | None = None,
    user_type: str = "user",
    product_type: str = "product",
) -> tuple[KnowledgeGraph, InteractionLog]:
    """
    Parse dataset files into a graph and an interaction log.

    Products missing from the entity file are dropped with their
    interactions; relation types seen fewer than `min_relation_count` times
    are dropped with their triples (the feedback relation is exempt).
    """
    if min_relation_count < 0:
        raise ValueError("min_relation_count must be >= 0")

    entities: list[tuple[str, str, str]] = []
    known: dict[str, int] = {}
    for line_no, (eid, tname, display) in _read_tsv(entities_file, 3):
        if eid in known:
            raise DatasetParseError(entities_file, line_no, f"duplicate entity {eid!r}")
        known[eid] = len(entities)
        entities.append((eid, tname, display))

    raw_triples: list[tuple[str, str, str]] = []
    dangling = 0
    for _, (head, rel, tail) in _read_tsv(kg_file, 3):
        if head not in known or tail not in known:
            dangling += 1
            continue
        raw_triples.append((head, rel, tail))
    if dangling:
        logger.warning("Dropped %d triples with entities missing from %s", dangling, entities_file)

    uniq_triples = list(dict.fromkeys(raw_triples))
    counts = Counter(r for _, r, _ in uniq_triples)
    rare = {
        r for r, c in counts.items()
        if c < min_relation_count and r != feedback_relation
    }
    if rare:
        logger.info("Dropping %d rare relation types: %s", len(rare), sorted(rare))
    kept = [t for t in uniq_triples if t[1] not in rare]

    relation_names = list(dict.fromkeys(r for _, r, _ in kept))
    rel_index = {r: i for i, r in enumerate(relation_names)}
    if feedback_relation not in rel_index:
        rel_index[feedback_relation] = len(relation_names)
        relation_names.append(feedback_relation)

    interactions = read_interaction_rows(interactions_file)
    rows: list[tuple[int, int, int]] = []
    dropped = 0
    for user, product, ts in interactions:
        pid = known.get(product)
        if pid is None or entities[pid][1] != product_type:
            dropped += 1
            continue
        uid = known.get(user)
        if uid is None:
            uid = known[user] = len(entities)
            entities.append((user, user_type, user))
        elif entities[uid][1] != user_type:
            raise DatasetError(f"interaction user {user!r} is typed {entities[uid][1]!r}")
        rows.append((uid, pid, ts))
    if dropped:
        logger.warning("Dropped %d interactions with products absent from the KG", dropped)

    phrases: dict[str, str] = {}
    if relations_file is not None:
        for _, (rel, phrase) in _read_tsv(relations_file, 2):
            phrases[rel] = phrase

    triples = [(known[h], rel_index[r], known[t]) for h, r, t in kept]
    if not rows:
        raise DatasetError("no interactions left after filtering")
    if not triples:
        raise DatasetError("no triples left after filtering")

    graph = KnowledgeGraph.build(
        entities,
        relation_names,
        triples,
        feedback_relation=feedback_relation,
        user_type=user_type,
        product_type=product_type,
        relation_phrases=phrases,
    )
    log = InteractionLog.from_rows(rows)
    logger.info(
        "Loaded %d entities, %d relation types, %d triples, %d users, %d interactions",
        graph.num_entities, graph.num_relations, len(graph.triples),
        len(log.by_user), len(log),
    )
    return graph, log


def read_interactions(path: str | Path, graph: KnowledgeGraph) -> InteractionLog:
    """Read an interactions file whose ids all exist in `graph`."""
    rows = []
    for user, product, ts in read_interaction_rows(path):
        rows.append((graph.entity_id(user), graph.entity_id(product), ts))
    return InteractionLog.from_rows(rows)


# ── Serialization ─────────────────────────────────────────────────────────────

def write_interactions(log: InteractionLog, graph: KnowledgeGraph, path: str | Path) -> None:
    lines = [
        f"{graph.entity_names[u]}\t{graph.entity_names[p]}\t{ts}\n"
        for u, p, ts in log.rows()
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def save_dataset(graph: KnowledgeGraph, log: InteractionLog, out_dir: str | Path) -> dict[str, Path]:
    """Write the graph and log back out in the ingestion formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "entities": out / "entities.tsv",
        "kg": out / "kg.tsv",
        "relations": out / "relations.tsv",
        "interactions": out / "interactions.tsv",
    }
    paths["entities"].write_text("".join(
        f"{graph.entity_names[i]}\t{graph.type_of(i)}\t{graph.display_names[i]}\n"
        for i in range(graph.num_entities)
    ), encoding="utf-8")
    paths["kg"].write_text("".join(
        f"{graph.entity_names[t.head]}\t{graph.relation_names[t.relation]}\t{graph.entity_names[t.tail]}\n"
        for t in graph.triples
    ), encoding="utf-8")
    paths["relations"].write_text("".join(
        f"{graph.relation_names[r]}\t{p}\n" for r, p in sorted(graph.relation_phrases.items())
    ), encoding="utf-8")
    write_interactions(log, graph, paths["interactions"])
    return paths
