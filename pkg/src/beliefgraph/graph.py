"""Immutable belief-graph store and the add/delete update algebra.

A belief graph is a set of directed labeled triples (head, tail, relation).
Updates are sequences of ``add``/``delete`` operations; applying a sequence
folds the operations into a new graph. Everything here is a pure function
over immutable values, so graphs can be shared freely across threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

DEFAULT_RELATIONS = (
    "at",
    "in",
    "on",
    "is",
    "north_of",
    "south_of",
    "east_of",
    "west_of",
    "part_of",
    "needs",
)


class UnknownRelation(ValueError):
    """A relation label is not in the registry."""


class RelationRegistry:
    """Fixed set of relation labels a corpus is allowed to use."""

    def __init__(self, labels: Iterable[str] = DEFAULT_RELATIONS):
        labels = tuple(labels)
        if not labels:
            raise ValueError("relation registry must be nonempty")
        for label in labels:
            if not label or label != label.strip() or label != label.lower():
                raise ValueError(f"bad relation label {label!r}")
        self._labels = labels
        self._label_set = frozenset(labels)
        self._by_label = {label: Relation(label, self) for label in labels}

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def relation(self, label: str) -> Relation:
        try:
            return self._by_label[label]
        except KeyError:
            raise UnknownRelation(f"relation {label!r} not in registry {self._labels}") from None

    def index(self, label: str) -> int:
        if label not in self._label_set:
            raise UnknownRelation(f"relation {label!r} not in registry {self._labels}")
        return self._labels.index(label)

    def __contains__(self, label: str) -> bool:
        return label in self._label_set

    def __len__(self) -> int:
        return len(self._labels)


class Relation:
    """A relation label validated against a registry. Compares by label."""

    __slots__ = ("label",)

    def __init__(self, label: str, registry: RelationRegistry):
        if label not in registry:
            raise UnknownRelation(f"relation {label!r} not in registry {registry.labels}")
        self.label = label

    def __eq__(self, other) -> bool:
        return isinstance(other, Relation) and self.label == other.label

    def __hash__(self) -> int:
        return hash(("Relation", self.label))

    def __lt__(self, other: "Relation") -> bool:
        return self.label < other.label

    def __repr__(self) -> str:
        return f"Relation({self.label!r})"


class Kind(enum.Enum):
    OBJECT = "object"
    PLAYER = "player"
    LOCATION = "location"
    STATE = "state"


@dataclass(frozen=True)
class Entity:
    """A graph vertex. ``kind`` is metadata only and never affects equality."""

    label: str
    kind: Kind = field(default=Kind.OBJECT, compare=False)

    def __post_init__(self):
        if not self.label:
            raise ValueError("entity label must be nonempty")
        if self.label != " ".join(self.label.split()):
            raise ValueError(f"entity label {self.label!r} has stray whitespace")
        if self.label != self.label.lower():
            raise ValueError(f"entity label {self.label!r} must be lowercase")

    def __lt__(self, other: "Entity") -> bool:
        return self.label < other.label


@dataclass(frozen=True)
class Triple:
    """Directed labeled edge head --relation--> tail."""

    head: Entity
    tail: Entity
    relation: Relation

    def key(self) -> tuple[str, str, str]:
        return (self.head.label, self.tail.label, self.relation.label)

    def __lt__(self, other: "Triple") -> bool:
        return self.key() < other.key()


class BeliefGraph:
    """Immutable set of triples; the vertex set is derived, never stored."""

    __slots__ = ("_triples",)

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples = frozenset(triples)

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    @property
    def vertices(self) -> frozenset[Entity]:
        seen = set()
        for t in self._triples:
            seen.add(t.head)
            seen.add(t.tail)
        return frozenset(seen)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples, key=Triple.key))

    def __len__(self) -> int:
        return len(self._triples)

    def __eq__(self, other) -> bool:
        return isinstance(other, BeliefGraph) and self._triples == other._triples

    def __hash__(self) -> int:
        return hash(self._triples)

    def __repr__(self) -> str:
        return f"BeliefGraph({len(self._triples)} triples)"


class Verb(enum.Enum):
    ADD = "add"
    DELETE = "delete"


@dataclass(frozen=True)
class UpdateOp:
    verb: Verb
    triple: Triple


# An update is an ordered (possibly empty) run of operations.
UpdateSequence = tuple[UpdateOp, ...]


def add_op(head: Entity, tail: Entity, relation: Relation) -> UpdateOp:
    return UpdateOp(Verb.ADD, Triple(head, tail, relation))


def delete_op(head: Entity, tail: Entity, relation: Relation) -> UpdateOp:
    return UpdateOp(Verb.DELETE, Triple(head, tail, relation))


def apply_op(graph: BeliefGraph, op: UpdateOp) -> BeliefGraph:
    """Apply one operation. Both verbs are total: adding an existing edge and
    deleting an absent one are no-ops, and no-ops return the input graph."""
    if op.verb is Verb.ADD:
        if op.triple in graph:
            return graph
        return BeliefGraph(graph.triples | {op.triple})
    if op.triple not in graph:
        return graph
    return BeliefGraph(graph.triples - {op.triple})


def apply_update(graph: BeliefGraph, ops: Iterable[UpdateOp]) -> BeliefGraph:
    """Left-fold apply_op over the sequence."""
    for op in ops:
        graph = apply_op(graph, op)
    return graph


def canonical_order(ops: Iterable[UpdateOp]) -> UpdateSequence:
    """Stable total order: all adds before all deletes, each sorted
    lexicographically by (relation, head, tail)."""

    def sort_key(op: UpdateOp) -> tuple[str, str, str]:
        t = op.triple
        return (t.relation.label, t.head.label, t.tail.label)

    adds = sorted((op for op in ops if op.verb is Verb.ADD), key=sort_key)
    deletes = sorted((op for op in ops if op.verb is Verb.DELETE), key=sort_key)
    return tuple(adds) + tuple(deletes)


def diff(g_prev: BeliefGraph, g_next: BeliefGraph) -> UpdateSequence:
    """Canonical update sequence turning g_prev into g_next.

    Adds are g_next minus g_prev, deletes the reverse; no triple appears under
    both verbs, so any permutation of the result applied to g_prev still
    yields g_next.
    """
    adds = [UpdateOp(Verb.ADD, t) for t in g_next.triples - g_prev.triples]
    deletes = [UpdateOp(Verb.DELETE, t) for t in g_prev.triples - g_next.triples]
    return canonical_order(adds + deletes)


def collapse_relations(graph: BeliefGraph, placeholder: Relation) -> BeliefGraph:
    """Replace every relation with the placeholder; duplicates merge by set
    semantics. Used when scoring encoders that ignore relation types."""
    return BeliefGraph(Triple(t.head, t.tail, placeholder) for t in graph.triples)


def to_rdf_triples(graph: BeliefGraph) -> list[Triple]:
    """Deterministic listing, sorted by (head, tail, relation) labels."""
    return sorted(graph.triples, key=Triple.key)


def write_graph_file(graph: BeliefGraph, path: str | Path) -> None:
    """One triple per line: ``head <TAB> relation <TAB> tail``, sorted."""
    lines = [f"{t.head.label}\t{t.relation.label}\t{t.tail.label}" for t in to_rdf_triples(graph)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_graph_file(path: str | Path, registry: RelationRegistry) -> BeliefGraph:
    triples = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{i}: expected 3 tab-separated fields, got {len(parts)}")
        head, rel, tail = parts
        triples.append(Triple(Entity(head), Entity(tail), registry.relation(rel)))
    return BeliefGraph(triples)
