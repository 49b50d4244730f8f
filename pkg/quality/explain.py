"""
quality/explain.py — Template explanations for selected reasoning paths.

Slots filled from a k=3 path  u -r1-> e1 -..-> e2 -rk-> e3:
  recommended       e_k
  linking_relation  r_1 (verb phrase)
  linked            e_1
  path_type         r_k (verb phrase)
  shared            e_{k-1}
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

from jinja2 import Environment, StrictUndefined, meta

from kg.errors import ConfigError, MissingSurfaceFormError, PathStructureError
from kg.store import KnowledgeGraph, ReasoningPath

SLOTS = ("recommended", "linking_relation", "linked", "path_type", "shared")

DEFAULT_TEMPLATE = (
    "{{ recommended }} is recommended to you because you "
    "{{ linking_relation }} {{ linked }} also {{ path_type }} by {{ shared }}"
)

_env = Environment(undefined=StrictUndefined, autoescape=False, keep_trailing_newline=False)


@dataclass(frozen=True)
class SurfaceForms:
    entities: Mapping[int, str]
    relations: Mapping[int, str]

    def entity(self, ident: int) -> str:
        try:
            return self.entities[ident]
        except KeyError:
            raise MissingSurfaceFormError("entity", ident) from None

    def relation(self, ident: int) -> str:
        try:
            return self.relations[ident]
        except KeyError:
            raise MissingSurfaceFormError("relation", ident) from None


def names_from_graph(graph: KnowledgeGraph) -> SurfaceForms:
    """Display names, and verb phrases falling back to the relation name."""
    return SurfaceForms(
        entities=dict(enumerate(graph.display_names)),
        relations={
            r: graph.relation_phrases.get(r, name)
            for r, name in enumerate(graph.relation_names)
        },
    )


@dataclass(frozen=True)
class ExplanationTemplate:
    source: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        unknown = self.slots - set(SLOTS)
        if unknown:
            raise ConfigError(f"explanation template uses unknown slots {sorted(unknown)}")

    @cached_property
    def slots(self) -> set[str]:
        return meta.find_undeclared_variables(_env.parse(self.source))

    @cached_property
    def compiled(self):
        return _env.from_string(self.source)


def render(
    path: ReasoningPath,
    template: ExplanationTemplate,
    names: SurfaceForms,
) -> str:
    if path.k != 3:
        raise PathStructureError(f"explanations need a 3-hop path, got k={path.k}")
    return template.compiled.render(
        recommended=names.entity(path.terminal),
        linking_relation=names.relation(path.hops[0].relation),
        linked=names.entity(path.linked_entity),
        path_type=names.relation(path.hops[-1].relation),
        shared=names.entity(path.shared_entity),
    )
