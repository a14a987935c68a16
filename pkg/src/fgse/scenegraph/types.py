"""Scene-graph data model.

A frame is a :class:`SceneGraph`: objects as nodes (category index + hand
role) and directed edges carrying a 14-bit relation vector. Relation bit
order is fixed by :data:`RELATIONS` and is part of the on-disk format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

RELATIONS: tuple[str, ...] = (
    "touching", "above", "below", "inside", "surround", "around",
    "left_of", "right_of",
    "getting_close", "moving_apart", "moving_together", "halting_together",
    "fixed_moving_together", "stable",
)
N_RELATIONS = len(RELATIONS)
REL = {name: i for i, name in enumerate(RELATIONS)}

# at most one bit of each group may be set on an edge
EXCLUSIVE_GROUPS: tuple[tuple[str, ...], ...] = (
    ("above", "below"),
    ("inside", "surround"),
    ("left_of", "right_of"),
    ("getting_close", "moving_apart", "stable"),
)

NO_HAND = "none"
LEFT_HAND = "left_hand"
RIGHT_HAND = "right_hand"
HAND_ROLES = (NO_HAND, LEFT_HAND, RIGHT_HAND)


class GraphError(ValueError):
    """A scene graph or sequence violates a structural invariant."""


def exclusive_ok(rel: Sequence[int]) -> bool:
    return all(sum(rel[REL[name]] for name in group) <= 1 for group in EXCLUSIVE_GROUPS)


def relation_names(rel: Sequence[int]) -> list[str]:
    return [RELATIONS[i] for i, bit in enumerate(rel) if bit]


def relation_bits(names) -> tuple[int, ...]:
    bits = [0] * N_RELATIONS
    for name in names:
        bits[REL[name]] = 1
    return tuple(bits)


@dataclass(frozen=True)
class ObjectTrack:
    """One object's axis-aligned 3D box in one frame (metres, z up)."""

    object_id: int
    category: int
    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    hand_role: str = NO_HAND

    def __post_init__(self):
        if len(self.center) != 3 or len(self.extents) != 3:
            raise GraphError(f"object {self.object_id}: center and extents need 3 components")
        if min(self.extents) <= 0:
            raise GraphError(f"object {self.object_id}: extents must be strictly positive, got {self.extents}")
        if self.hand_role not in HAND_ROLES:
            raise GraphError(f"object {self.object_id}: unknown hand role {self.hand_role!r}")

        c = tuple(float(v) for v in self.center)
        e = tuple(float(v) for v in self.extents)
        # cached bounds; relation extraction reads them for every pair
        object.__setattr__(self, "_lo", tuple(ci - 0.5 * ei for ci, ei in zip(c, e)))
        object.__setattr__(self, "_hi", tuple(ci + 0.5 * ei for ci, ei in zip(c, e)))
        object.__setattr__(self, "_volume", e[0] * e[1] * e[2])

    @property
    def lo(self) -> tuple[float, float, float]:
        return self._lo

    @property
    def hi(self) -> tuple[float, float, float]:
        return self._hi

    @property
    def volume(self) -> float:
        return self._volume


class Node(NamedTuple):
    object_id: int
    category: int
    hand: str = NO_HAND


class Edge(NamedTuple):
    src: int
    dst: int
    rel: tuple[int, ...]


_BITS = frozenset((0, 1))


@dataclass(frozen=True)
class GraphArrays:
    """Row-indexed numpy view of a graph, as consumed by the model."""

    categories: np.ndarray      # (n,) int
    src: np.ndarray             # (m,) row index
    dst: np.ndarray             # (m,) row index
    rel: np.ndarray             # (m, 14) float32
    left_row: int               # -1 when absent
    right_row: int


@dataclass(frozen=True)
class SceneGraph:
    time_index: int
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(Node(*n) for n in self.nodes))
        object.__setattr__(self, "edges", tuple(
            e if type(e) is Edge and type(e.rel) is tuple else Edge(e[0], e[1], tuple(int(b) for b in e[2]))
            for e in self.edges))
        ids = [n.object_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError(f"frame {self.time_index}: duplicate object ids {ids}")
        known = set(ids)
        for n in self.nodes:
            if n.hand not in HAND_ROLES:
                raise GraphError(f"frame {self.time_index}: unknown hand role {n.hand!r}")
            if n.category < 0:
                raise GraphError(f"frame {self.time_index}: negative category on object {n.object_id}")
        for role in (LEFT_HAND, RIGHT_HAND):
            if sum(n.hand == role for n in self.nodes) > 1:
                raise GraphError(f"frame {self.time_index}: more than one {role}")
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise GraphError(f"frame {self.time_index}: edge {e.src}->{e.dst} references a missing node")
            if len(e.rel) != N_RELATIONS or not _BITS.issuperset(e.rel):
                raise GraphError(f"frame {self.time_index}: relation vector must be {N_RELATIONS} bits")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def hand_id(self, role: str) -> int | None:
        for n in self.nodes:
            if n.hand == role:
                return n.object_id
        return None

    @cached_property
    def arrays(self) -> GraphArrays:
        row = {n.object_id: i for i, n in enumerate(self.nodes)}
        cats = np.array([n.category for n in self.nodes], dtype=np.int64)
        src = np.array([row[e.src] for e in self.edges], dtype=np.int64)
        dst = np.array([row[e.dst] for e in self.edges], dtype=np.int64)
        rel = np.array([e.rel for e in self.edges], dtype=np.float32).reshape(-1, N_RELATIONS)
        left = self.hand_id(LEFT_HAND)
        right = self.hand_id(RIGHT_HAND)
        return GraphArrays(cats, src, dst, rel,
                           row[left] if left is not None else -1,
                           row[right] if right is not None else -1)

    def one_hot(self, n_categories: int) -> np.ndarray:
        cats = self.arrays.categories
        if cats.size and cats.max() >= n_categories:
            raise GraphError(f"frame {self.time_index}: category {cats.max()} outside vocabulary of {n_categories}")
        out = np.zeros((len(cats), n_categories), dtype=np.float32)
        out[np.arange(len(cats)), cats] = 1.0
        return out


@dataclass
class GraphSequence:
    """Time-ordered graphs of one episode, with one label stream per head."""

    graphs: list[SceneGraph]
    labels: list[list[int]]
    subject: int
    fps: float
    episode: str = ""

    def __post_init__(self):
        self.labels = [list(map(int, stream)) for stream in self.labels]
        for stream in self.labels:
            if len(stream) != len(self.graphs):
                raise GraphError(f"episode {self.episode!r}: {len(stream)} labels for {len(self.graphs)} graphs")
        times = [g.time_index for g in self.graphs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise GraphError(f"episode {self.episode!r}: time indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_heads(self) -> int:
        return len(self.labels)

    def label_matrix(self) -> np.ndarray:
        """Labels as an array of shape (T, heads)."""
        return np.asarray(self.labels, dtype=np.int64).T.reshape(len(self.graphs), self.n_heads)


@dataclass
class Vocabulary:
    objects: list[str]
    labels: list[str]
    n_heads: int = 2
    relations: list[str] = field(default_factory=lambda: list(RELATIONS))
    label_pairs: list[tuple[str, str]] | None = None

    def object_index(self, name: str) -> int:
        try:
            return self.objects.index(name)
        except ValueError:
            raise VocabularyError(f"unknown object category {name!r}") from None

    def label_index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise VocabularyError(f"unknown label {name!r}") from None

    def to_json(self) -> dict:
        doc = {
            "format": "fgse-vocab-v1",
            "objects": list(self.objects),
            "labels": list(self.labels),
            "heads": self.n_heads,
            "relations": list(self.relations),
        }
        if self.label_pairs is not None:
            doc["label_pairs"] = [list(p) for p in self.label_pairs]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        rel = list(doc.get("relations", RELATIONS))
        if rel != list(RELATIONS):
            raise VocabularyError(f"relation ordering {rel} does not match this build's {list(RELATIONS)}")
        pairs = doc.get("label_pairs")
        return cls(list(doc["objects"]), list(doc["labels"]), int(doc.get("heads", 2)), rel,
                   [tuple(p) for p in pairs] if pairs is not None else None)


class VocabularyError(ValueError):
    pass


@dataclass
class EpisodeDataset:
    sequences: list[GraphSequence]
    vocab: Vocabulary

    def __post_init__(self):
        n_cls = len(self.vocab.labels)
        for s in self.sequences:
            if s.n_heads != self.vocab.n_heads:
                raise GraphError(f"episode {s.episode!r} has {s.n_heads} label streams, vocabulary says {self.vocab.n_heads}")
            for stream in s.labels:
                if stream and (min(stream) < 0 or max(stream) >= n_cls):
                    raise GraphError(f"episode {s.episode!r}: label index outside [0, {n_cls})")

    @property
    def subjects(self) -> list[int]:
        return sorted({s.subject for s in self.sequences})

    @property
    def head_count(self) -> int:
        return self.vocab.n_heads

    @property
    def n_classes(self) -> int:
        return len(self.vocab.labels)

    def __len__(self) -> int:
        return len(self.sequences)
