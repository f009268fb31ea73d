"""Immutable triple store with interned labels and adjacency indexes.

Triples are read from UTF-8 TSV (``head<TAB>relation<TAB>tail``, ``#``
comments allowed), deduplicated, and indexed in both directions. Ids are
dense integers assigned in first-appearance order so that fixtures load
reproducibly. Inverse traversal presents the relation label suffixed with
the reserved marker ``~inv``; inverse relation ids are offset by the size
of the relation table and never appear in the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ContractError, NotFoundError, ParseError

INVERSE_MARKER = "~inv"

Direction = str  # "forward" | "inverse" | "both"
_DIRECTIONS = ("forward", "inverse", "both")


@dataclass(frozen=True)
class EntityHandle:
    id: int
    label: str


@dataclass(frozen=True)
class RelationHandle:
    id: int
    label: str


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Entity/relation tables plus a deduplicated, doubly-indexed triple set.

    Instances are immutable after construction and safe for concurrent
    reads. Build them through :func:`load_triples` rather than directly.
    """

    def __init__(
        self,
        entities: list[EntityHandle],
        relations: list[RelationHandle],
        triples: list[Triple],
    ):
        self.entities = entities
        self.relations = relations
        self.triples = triples
        self._entity_ids = {e.label: e.id for e in entities}
        self._relation_ids = {r.label: r.id for r in relations}
        out: dict[int, list[tuple[int, int]]] = {}
        inc: dict[int, list[tuple[int, int]]] = {}
        for t in triples:
            out.setdefault(t.head, []).append((t.relation, t.tail))
            inc.setdefault(t.tail, []).append((t.relation, t.head))
        for adj in out.values():
            adj.sort()
        for adj in inc.values():
            adj.sort()
        self.out_index = out
        self.in_index = inc

    # -- lookups ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, label: str) -> int | None:
        return self._entity_ids.get(label)

    def entity_label(self, entity_id: int) -> str:
        if not 0 <= entity_id < len(self.entities):
            raise NotFoundError(f"unknown entity id {entity_id}")
        return self.entities[entity_id].label

    def relation_id(self, label: str) -> int | None:
        return self._relation_ids.get(label)

    def relation_label(self, relation_id: int) -> str:
        """Label for a relation id; inverse-offset ids get the ~inv suffix."""
        n = len(self.relations)
        if 0 <= relation_id < n:
            return self.relations[relation_id].label
        if n <= relation_id < 2 * n:
            return self.relations[relation_id - n].label + INVERSE_MARKER
        raise NotFoundError(f"unknown relation id {relation_id}")

    def inverse_relation_id(self, relation_id: int) -> int:
        if not 0 <= relation_id < len(self.relations):
            raise NotFoundError(f"unknown relation id {relation_id}")
        return relation_id + len(self.relations)

    def is_inverse(self, relation_id: int) -> bool:
        return relation_id >= len(self.relations)

    # -- queries ---------------------------------------------------------

    def neighbors(self, entity_id: int, direction: Direction = "forward") -> list[tuple[int, int]]:
        """Adjacent ``(relation_id, entity_id)`` pairs in deterministic order.

        ``forward`` follows stored triples head-to-tail; ``inverse`` walks
        them backwards, reporting the relation under its inverse-offset id;
        ``both`` concatenates forward then inverse.
        """
        if direction not in _DIRECTIONS:
            raise ContractError(f"direction must be one of {_DIRECTIONS}, got {direction!r}")
        if not 0 <= entity_id < len(self.entities):
            raise NotFoundError(f"unknown entity id {entity_id}")
        result: list[tuple[int, int]] = []
        if direction in ("forward", "both"):
            result.extend(self.out_index.get(entity_id, []))
        if direction in ("inverse", "both"):
            offset = len(self.relations)
            result.extend((rid + offset, head) for rid, head in self.in_index.get(entity_id, []))
        return result

    def relation_vocabulary(self) -> list[str]:
        """All distinct relation labels, sorted; inverse synthetics excluded."""
        return sorted(r.label for r in self.relations)

    # -- serialization ---------------------------------------------------

    def dumps(self) -> str:
        """Canonical TSV dump, triples sorted by (head, relation, tail) label.

        Label order makes the dump a pure function of the triple set, so
        dump -> load -> dump is byte-identical no matter what order the
        triples were first ingested in. (Sorting by ids cannot give that:
        an entity first seen as a tail gets an earlier id on reload, which
        reorders head blocks.)
        """
        rows = sorted(
            (
                self.entities[t.head].label,
                self.relations[t.relation].label,
                self.entities[t.tail].label,
            )
            for t in self.triples
        )
        return "".join(f"{h}\t{r}\t{t}\n" for h, r, t in rows)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _iter_fields(lines: Iterable[str]) -> Iterator[tuple[int, str, str, str]]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3 or any(not f for f in fields):
            raise ParseError(
                f"line {lineno}: expected 3 tab-separated non-empty fields, got {line!r}",
                line=lineno,
                raw=line,
            )
        yield lineno, fields[0], fields[1], fields[2]


def load_triples(lines: Iterable[str]) -> KnowledgeGraph:
    """Build a graph from an iterable of TSV lines.

    Duplicate triples are silently dropped; ids are assigned in
    first-appearance order (head, then relation, then tail within a line).
    An empty stream yields a valid empty graph.
    """
    entities: list[EntityHandle] = []
    relations: list[RelationHandle] = []
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triples: list[Triple] = []
    seen: set[tuple[int, int, int]] = set()

    def intern_entity(label: str) -> int:
        eid = entity_ids.get(label)
        if eid is None:
            eid = len(entities)
            entity_ids[label] = eid
            entities.append(EntityHandle(eid, label))
        return eid

    def intern_relation(label: str) -> int:
        rid = relation_ids.get(label)
        if rid is None:
            rid = len(relations)
            relation_ids[label] = rid
            relations.append(RelationHandle(rid, label))
        return rid

    for _, head, rel, tail in _iter_fields(lines):
        key = (intern_entity(head), intern_relation(rel), intern_entity(tail))
        if key in seen:
            continue
        seen.add(key)
        triples.append(Triple(*key))
    return KnowledgeGraph(entities, relations, triples)


def load_triples_path(path: str | Path) -> KnowledgeGraph:
    p = Path(path)
    if not p.exists():
        raise NotFoundError(f"triple file not found: {p}")
    with p.open("r", encoding="utf-8") as fp:
        return load_triples(fp)
