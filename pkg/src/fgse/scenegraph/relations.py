"""Spatiotemporal relations between axis-aligned 3D boxes.

Static relations come from one frame, dynamic ones from the change between two
consecutive frames. Both return full 14-bit vectors with only their own bits
populated, so the edge feature is the bitwise OR of the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .types import N_RELATIONS, REL, Edge, GraphError, ObjectTrack, SceneGraph, Node


@dataclass(frozen=True)
class Thresholds:
    contact_tolerance: float = 0.02      # m; box inflation for touching
    motion_epsilon: float = 0.01         # m/frame
    containment_ratio: float = 0.9
    max_edge_distance: float = 1.5       # m between centers
    around_distance: float = 0.15        # m of surface gap for around / lateral

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**d)


def _gaps(a: ObjectTrack, b: ObjectTrack) -> tuple[float, float, float]:
    """Per-axis surface gap; negative values mean the intervals overlap."""
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    return (max(blo[0] - ahi[0], alo[0] - bhi[0]),
            max(blo[1] - ahi[1], alo[1] - bhi[1]),
            max(blo[2] - ahi[2], alo[2] - bhi[2]))


def _contained_fraction(a: ObjectTrack, b: ObjectTrack) -> float:
    inter = 1.0
    for k in range(3):
        inter *= max(0.0, min(a.hi[k], b.hi[k]) - max(a.lo[k], b.lo[k]))
    return inter / a.volume


def _inside(a: ObjectTrack, b: ObjectTrack, ratio: float) -> bool:
    # the strict volume order keeps inside/surround exclusive for equal boxes
    return a.volume < b.volume and _contained_fraction(a, b) >= ratio


def _above(a: ObjectTrack, b: ObjectTrack, tol: float, gap) -> bool:
    footprint = gap[0] < 0 and gap[1] < 0
    return footprint and a.lo[2] >= b.hi[2] - tol and a.center[2] > b.center[2]


def _left_of(a: ObjectTrack, b: ObjectTrack, tol: float, near: float, gap) -> bool:
    side_by_side = gap[1] < 0 and gap[2] < 0
    return (side_by_side and a.hi[0] <= b.lo[0] + tol and a.center[0] < b.center[0]
            and gap[0] <= near)


def touching(a: ObjectTrack, b: ObjectTrack, tol: float = 0.02) -> bool:
    return max(_gaps(a, b)) <= tol


def compute_static_relations(a: ObjectTrack, b: ObjectTrack, cfg: Thresholds = Thresholds()) -> list[int]:
    """Static bits of the directed pair ``a -> b``.

    * touching: boxes inflated by the contact tolerance intersect
    * above/below: footprints overlap and one box rests over the other
    * inside/surround: the smaller box lies (by volume) at least
      ``containment_ratio`` within the larger one
    * left_of/right_of: side by side along x, within ``around_distance``
    * around: within ``around_distance`` and no other static bit applies
    """
    rel = [0] * N_RELATIONS
    tol = cfg.contact_tolerance
    gap = _gaps(a, b)
    if max(gap) <= tol:
        rel[REL["touching"]] = 1
    a_in_b = _inside(a, b, cfg.containment_ratio)
    b_in_a = _inside(b, a, cfg.containment_ratio)
    rel[REL["inside"]] = int(a_in_b)
    rel[REL["surround"]] = int(b_in_a)
    if not (a_in_b or b_in_a):
        rel[REL["above"]] = int(_above(a, b, tol, gap))
        rel[REL["below"]] = int(_above(b, a, tol, gap))
        rel[REL["left_of"]] = int(_left_of(a, b, tol, cfg.around_distance, gap))
        rel[REL["right_of"]] = int(_left_of(b, a, tol, cfg.around_distance, gap))
    if not any(rel) and max(gap) <= cfg.around_distance:
        rel[REL["around"]] = 1
    return rel


def compute_dynamic_relations(a_prev: ObjectTrack, a_cur: ObjectTrack,
                              b_prev: ObjectTrack, b_cur: ObjectTrack,
                              cfg: Thresholds = Thresholds()) -> list[int]:
    """Dynamic bits of ``a -> b`` from the change between two frames.

    Pairs in contact are classified by motion (halting / moving /
    fixed-moving together) unless their distance changes beyond the motion
    epsilon; separated pairs get exactly one of getting-close, moving-apart
    or stable.
    """
    rel = [0] * N_RELATIONS
    eps = cfg.motion_epsilon
    delta = math.dist(a_cur.center, b_cur.center) - math.dist(a_prev.center, b_prev.center)
    a_moves = math.dist(a_cur.center, a_prev.center) > eps
    b_moves = math.dist(b_cur.center, b_prev.center) > eps

    if touching(a_cur, b_cur, cfg.contact_tolerance):
        if not a_moves and not b_moves:
            rel[REL["halting_together"]] = 1
            return rel
        if abs(delta) <= eps:
            key = "moving_together" if (a_moves and b_moves) else "fixed_moving_together"
            rel[REL[key]] = 1
            return rel
    if delta < -eps:
        rel[REL["getting_close"]] = 1
    elif delta > eps:
        rel[REL["moving_apart"]] = 1
    elif not touching(a_cur, b_cur, cfg.contact_tolerance):
        rel[REL["stable"]] = 1
    return rel


def build_scene_graph(frame: Sequence[ObjectTrack], prev_frame: Sequence[ObjectTrack] | None = None,
                      cfg: Thresholds = Thresholds(), time_index: int = 0) -> SceneGraph:
    """Scene graph of one frame; both edge directions for every close pair.

    Pairs whose centers are farther apart than ``cfg.max_edge_distance`` get
    no edge. Dynamic bits need the pair in ``prev_frame``; otherwise they stay
    clear (first frame of a stream, newly appeared objects).
    """
    if not frame:
        raise GraphError(f"frame {time_index}: no objects")
    ids = [o.object_id for o in frame]
    if len(set(ids)) != len(ids):
        raise GraphError(f"frame {time_index}: duplicate object id in {ids}")
    prev = {o.object_id: o for o in prev_frame} if prev_frame else {}
    centers = np.array([o.center for o in frame], dtype=np.float64)
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    edges = []
    for i, a in enumerate(frame):
        for j, b in enumerate(frame):
            if i == j or dist[i, j] > cfg.max_edge_distance:
                continue
            rel = compute_static_relations(a, b, cfg)
            if a.object_id in prev and b.object_id in prev:
                dyn = compute_dynamic_relations(prev[a.object_id], a, prev[b.object_id], b, cfg)
                rel = [x | y for x, y in zip(rel, dyn)]
            edges.append(Edge(a.object_id, b.object_id, tuple(rel)))
    nodes = [Node(o.object_id, o.category, o.hand_role) for o in frame]
    return SceneGraph(time_index, tuple(nodes), tuple(edges))


def build_graph_stream(frames: Sequence[Sequence[ObjectTrack]], cfg: Thresholds = Thresholds(),
                       time_indices: Sequence[int] | None = None) -> list[SceneGraph]:
    times = list(time_indices) if time_indices is not None else list(range(len(frames)))
    graphs = []
    prev = None
    for t, frame in zip(times, frames):
        graphs.append(build_scene_graph(frame, prev, cfg, t))
        prev = frame
    return graphs
