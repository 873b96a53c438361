"""Hierarchical label taxonomy: parsing, queries, and dense index maps.

Labels are dotted-decimal identifiers ("1.5.1.1") whose segments encode the
hierarchy directly: the parent of a label is the label with the last segment
removed. A label is a leaf iff it has no children in the file; leafness is
structural, never depth-based.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

# Sentinel accepted by child_mask() for "before the first decoding step":
# its children are the depth-1 labels. Never a valid label id itself.
START = "<START>"

DEFAULT_MAX_DEPTH = 4


class OntologyError(Exception):
    """Base class for taxonomy validation failures."""


class MalformedId(OntologyError):
    pass


class DuplicateId(OntologyError):
    pass


class OrphanLabel(OntologyError):
    pass


class EmptyOntology(OntologyError):
    pass


class UnknownLabel(OntologyError):
    pass


class NonLeafGold(OntologyError):
    pass


def parse_label_id(label: str, max_depth: int = DEFAULT_MAX_DEPTH) -> tuple[int, ...]:
    """Split a dotted-decimal id into integer segments, validating the form.

    Rejects empty ids, non-integer or negative segments, depths beyond
    ``max_depth``, and any form that does not round-trip (e.g. "01").
    """
    if not isinstance(label, str) or not label:
        raise MalformedId(f"empty or non-string label id: {label!r}")
    parts = label.split(".")
    if len(parts) > max_depth:
        raise MalformedId(f"label {label!r} exceeds max depth {max_depth}")
    segments = []
    for part in parts:
        if not part.isdigit():
            raise MalformedId(f"non-integer segment {part!r} in label {label!r}")
        value = int(part)
        if str(value) != part:  # leading zeros break round-tripping
            raise MalformedId(f"segment {part!r} in label {label!r} does not round-trip")
        segments.append(value)
    return tuple(segments)


def format_label_id(segments: tuple[int, ...]) -> str:
    return ".".join(str(s) for s in segments)


@dataclass(frozen=True)
class LabelId:
    """A validated dotted-decimal label identifier."""

    id: str
    segments: tuple[int, ...]

    @classmethod
    def parse(cls, label: str, max_depth: int = DEFAULT_MAX_DEPTH) -> "LabelId":
        return cls(id=label, segments=parse_label_id(label, max_depth))

    @property
    def depth(self) -> int:
        return len(self.segments)

    def __str__(self) -> str:
        return self.id


class Ontology:
    """Immutable taxonomy over dotted-decimal label ids.

    Provides dense index maps (full and leaf-only, both in lexicographic
    segment order), ordered children lists, ancestor chains, and per-node
    child masks. Safe for unrestricted shared reads once constructed.
    """

    def __init__(self, nodes: dict[str, str], max_depth: int = DEFAULT_MAX_DEPTH):
        if not nodes:
            raise EmptyOntology("ontology has no labels")
        self.max_depth = max_depth
        self._segments = {label: parse_label_id(label, max_depth) for label in nodes}

        for label, segs in self._segments.items():
            if len(segs) > 1:
                parent = format_label_id(segs[:-1])
                if parent not in nodes:
                    raise OrphanLabel(f"label {label!r} has no parent {parent!r}")

        order = sorted(nodes, key=self._segments.__getitem__)
        self.names: dict[str, str] = {label: nodes[label] for label in order}
        self.all_ids: tuple[str, ...] = tuple(order)
        self.full_index: dict[str, int] = {label: i for i, label in enumerate(order)}

        children: dict[str, list[str]] = {label: [] for label in order}
        roots: list[str] = []
        for label in order:  # order makes every children list segment-sorted
            segs = self._segments[label]
            if len(segs) == 1:
                roots.append(label)
            else:
                children[format_label_id(segs[:-1])].append(label)
        self.children: dict[str, tuple[str, ...]] = {
            label: tuple(kids) for label, kids in children.items()
        }
        self.roots: tuple[str, ...] = tuple(roots)

        self.leaf_ids: tuple[str, ...] = tuple(
            label for label in order if not self.children[label]
        )
        self.leaf_index: dict[str, int] = {label: i for i, label in enumerate(self.leaf_ids)}

    @property
    def n_total(self) -> int:
        return len(self.all_ids)

    @property
    def n_leaf(self) -> int:
        return len(self.leaf_ids)

    @property
    def n_internal(self) -> int:
        return self.n_total - self.n_leaf

    def __contains__(self, label: str) -> bool:
        return label in self.full_index

    def is_leaf(self, label: str) -> bool:
        self._require(label)
        return label in self.leaf_index

    def depth(self, label: str) -> int:
        self._require(label)
        return len(self._segments[label])

    def name(self, label: str) -> str:
        self._require(label)
        return self.names[label]

    def _require(self, label: str) -> None:
        if label not in self.full_index:
            raise UnknownLabel(f"label {label!r} not in ontology")

    def content_hash(self) -> str:
        """SHA-256 over the canonical "id<TAB>name" lines, for checkpoint echo."""
        canon = "\n".join(f"{label}\t{self.names[label]}" for label in self.all_ids)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_ontology(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> Ontology:
    """Parse TSV content ("id<TAB>name" per non-empty line) into an Ontology.

    The hierarchy is derived purely from dotted-prefix relations; every
    non-root label must have its parent present.
    """
    nodes: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "\t" not in line:
            raise MalformedId(f"line {line_no}: expected 'id<TAB>name', got {line!r}")
        label, name = line.split("\t", 1)
        label = label.strip()
        parse_label_id(label, max_depth)
        if label in nodes:
            raise DuplicateId(f"line {line_no}: duplicate label {label!r}")
        nodes[label] = name.strip()
    return Ontology(nodes, max_depth)


def ancestors(o: Ontology, label: str) -> list[str]:
    """Ancestor chain from the root prefix down to ``label`` inclusive."""
    o._require(label)
    segs = o._segments[label]
    return [format_label_id(segs[: k + 1]) for k in range(len(segs))]


def child_mask(o: Ontology, label: str) -> np.ndarray:
    """Boolean vector over the full index, true exactly at direct children.

    ``label`` may be the START sentinel, whose children are the depth-1
    labels. A leaf yields the all-false mask.
    """
    mask = np.zeros(o.n_total, dtype=bool)
    kids = o.roots if label == START else o.children[label] if label in o.full_index else None
    if kids is None:
        raise UnknownLabel(f"label {label!r} not in ontology")
    for kid in kids:
        mask[o.full_index[kid]] = True
    return mask


def expand_gold(o: Ontology, gold) -> set[str]:
    """Union of ancestor chains over a set of gold leaf labels.

    Raises NonLeafGold if any gold label is internal; gold annotations are
    leaf sets by contract.
    """
    expanded: set[str] = set()
    for label in gold:
        if not o.is_leaf(label):
            raise NonLeafGold(f"gold label {label!r} is not a leaf")
        expanded.update(ancestors(o, label))
    return expanded


@lru_cache(maxsize=1)
def load_ene() -> Ontology:
    """Load the bundled 268-node named-entity taxonomy shipped with the package."""
    text = resources.files("hierclass").joinpath("data/ene.tsv").read_text("utf-8")
    return parse_ontology(text)
