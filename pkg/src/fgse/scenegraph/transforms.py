"""Sequence-level transforms: mirroring, temporal down/upsampling."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .types import (LEFT_HAND, REL, RIGHT_HAND, Edge, EpisodeDataset, GraphSequence,
                    Node, SceneGraph, Vocabulary)

_ROLE_SWAP = {LEFT_HAND: RIGHT_HAND, RIGHT_HAND: LEFT_HAND}
_LEFT, _RIGHT = REL["left_of"], REL["right_of"]


def _mirror_rel(rel: tuple[int, ...]) -> tuple[int, ...]:
    out = list(rel)
    out[_LEFT], out[_RIGHT] = rel[_RIGHT], rel[_LEFT]
    return tuple(out)


def mirror_graph(g: SceneGraph, category_swap: Mapping[int, int] | None = None) -> SceneGraph:
    swap = category_swap or {}
    nodes = tuple(Node(n.object_id, swap.get(n.category, n.category), _ROLE_SWAP.get(n.hand, n.hand))
                  for n in g.nodes)
    edges = tuple(Edge(e.src, e.dst, _mirror_rel(e.rel)) for e in g.edges)
    return SceneGraph(g.time_index, nodes, edges)


def mirror_graph_sequence(s: GraphSequence, category_swap: Mapping[int, int] | None = None) -> GraphSequence:
    """Lateral mirror of a bimanual sequence.

    Swaps hand roles, the two label streams and the left_of/right_of bits.
    ``category_swap`` optionally exchanges hand-specific object categories
    (e.g. a ``left_hand`` class with ``right_hand``) so node features stay
    consistent with the swapped roles; it must be its own inverse.
    """
    if s.n_heads != 2:
        raise NotImplementedError(f"mirroring needs two per-hand label streams, episode has {s.n_heads}")
    if category_swap:
        for k, v in category_swap.items():
            if category_swap.get(v, v) != k:
                raise ValueError("category_swap must be an involution")
    graphs = [mirror_graph(g, category_swap) for g in s.graphs]
    return GraphSequence(graphs, [list(s.labels[1]), list(s.labels[0])], s.subject, s.fps,
                         s.episode + "~mirror" if not s.episode.endswith("~mirror") else s.episode[:-7])


def hand_category_swap(vocab: Vocabulary) -> dict[int, int]:
    """Map left/right hand object classes onto each other by name."""
    names = {name.lower().replace("_", "").replace("-", ""): i for i, name in enumerate(vocab.objects)}
    left = names.get("lefthand")
    right = names.get("righthand")
    if left is None or right is None:
        return {}
    return {left: right, right: left}


def mirror_dataset(ds: EpisodeDataset) -> EpisodeDataset:
    """The dataset followed by a mirrored copy of every sequence."""
    swap = hand_category_swap(ds.vocab)
    mirrored = [mirror_graph_sequence(s, swap) for s in ds.sequences]
    return EpisodeDataset(list(ds.sequences) + mirrored, ds.vocab)


def downsample(s: GraphSequence, factor: int) -> GraphSequence:
    """Keep every ``factor``-th frame (offsets counted from the first frame)."""
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return s
    t0 = s.graphs[0].time_index if s.graphs else 0
    keep = [i for i, g in enumerate(s.graphs) if (g.time_index - t0) % factor == 0]
    return GraphSequence([s.graphs[i] for i in keep],
                         [[stream[i] for i in keep] for stream in s.labels],
                         s.subject, s.fps / factor, s.episode)


def upsample_predictions(preds: Sequence, factor: int, original_len: int) -> list:
    """Repeat each reduced-rate prediction over its span, truncated to ``original_len``."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if math.ceil(original_len / factor) != len(preds):
        raise ValueError(f"{len(preds)} predictions cannot cover {original_len} frames at factor {factor}")
    out = [p for p in preds for _ in range(factor)]
    return out[:original_len]
