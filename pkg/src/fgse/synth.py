"""Scripted synthetic manipulation episodes.

Hands follow piecewise-linear box trajectories that realise each scripted
action, objects move only while carried, and relations are extracted from the
(jittered) boxes exactly as for recorded data. Everything is deterministic for
a given seed.

Coordinates: metres, x lateral (left hand on the negative side), y away from
the subject, z up. The table top is at z = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scenegraph.io import dataset_hash, write_jsonl
from .scenegraph.relations import Thresholds, build_graph_stream
from .scenegraph.types import (LEFT_HAND, NO_HAND, RIGHT_HAND, EpisodeDataset, GraphSequence,
                               ObjectTrack, Vocabulary)

ACTIONS = ("idle", "approach", "lift", "hold", "place", "retreat", "pour", "drink")
OBJECTS = ("left_hand", "right_hand", "table", "cup", "bottle", "bowl", "spoon")
HANDS = (LEFT_HAND, RIGHT_HAND)

HAND_EXTENTS = (0.08, 0.10, 0.06)
EXTENTS = {
    "table": (1.40, 0.80, 0.10),
    "cup": (0.08, 0.08, 0.10),
    "bottle": (0.07, 0.07, 0.24),
    "bowl": (0.16, 0.16, 0.07),
    "spoon": (0.16, 0.03, 0.02),
}
TABLE_CENTER = (0.0, 0.35, -0.05)
LIFT_HEIGHT = 0.15
RELEASE_OFFSET = 0.06     # hand jump on grasp / release, clears the contact tolerance
GRASP_DEPTH = 0.005       # hand box overlaps the object by this much when grasping
POUR_CLEARANCE = 0.05

DEFAULT_NOISE = 0.005
HARD_NOISE = 0.02


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    action: str
    duration: int
    target: int | None = None            # object id acted upon (approach) or received into (pour)
    move_frames: int | None = None       # pour / drink: frames spent moving before holding still
    spot: tuple[float, float] | None = None   # place: table position, default where it was lifted


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    name: str
    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    hand_role: str = NO_HAND


@dataclass
class ScenarioScript:
    objects: list[SceneObject]
    segments: dict[str, list[Segment]]    # per hand role
    noise: float = DEFAULT_NOISE
    seed: int = 0
    fps: float = 15.0
    subject: int = 0
    name: str = ""

    def to_dict(self) -> dict:
        return {"objects": [asdict(o) for o in self.objects],
                "segments": {h: [{k: v for k, v in asdict(seg).items() if v is not None} for seg in segs]
                             for h, segs in self.segments.items()},
                "noise": self.noise, "seed": self.seed, "fps": self.fps, "subject": self.subject, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioScript":
        try:
            objects = [SceneObject(int(o["object_id"]), o["name"], tuple(o["center"]), tuple(o["extents"]),
                                   o.get("hand_role", NO_HAND)) for o in d["objects"]]
            segments = {h: [Segment(seg["action"], int(seg["duration"]), seg.get("target"), seg.get("move_frames"),
                                    tuple(seg["spot"]) if seg.get("spot") is not None else None)
                            for seg in segs] for h, segs in d["segments"].items()}
        except (KeyError, TypeError) as exc:
            raise ScriptError(f"malformed scenario script ({exc})") from None
        for o in objects:
            if o.name not in OBJECTS:
                raise ScriptError(f"unknown object class {o.name!r}; choose from {OBJECTS}")
        return cls(objects, segments, float(d.get("noise", DEFAULT_NOISE)), int(d.get("seed", 0)),
                   float(d.get("fps", 15.0)), int(d.get("subject", 0)), d.get("name", ""))

    @property
    def length(self) -> int:
        return sum(s.duration for s in self.segments[LEFT_HAND])

    def validate(self) -> None:
        totals = {h: sum(s.duration for s in segs) for h, segs in self.segments.items()}
        if set(self.segments) != set(HANDS):
            raise ScriptError("a script needs segment lists for both hands")
        if len(set(totals.values())) != 1:
            raise ScriptError(f"hand segment lists must tile the same episode length, got {totals}")
        for h, segs in self.segments.items():
            for s in segs:
                if s.action not in ACTIONS:
                    raise ScriptError(f"unknown action {s.action!r}")
                if s.duration < 3:
                    raise ScriptError(f"{h} {s.action}: duration {s.duration} < 3 frames")


# ----------------------------------------------------------------- kinematics

def _lerp(a: np.ndarray, b: np.ndarray, f: float) -> np.ndarray:
    return a + (b - a) * f


@dataclass
class _HandState:
    role: str
    object_id: int
    home: np.ndarray
    pos: np.ndarray
    contact: int | None = None
    carrying: bool = False
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lifted_from: np.ndarray | None = None
    release: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def side(self) -> float:
        return -1.0 if self.role == LEFT_HAND else 1.0


class _World:
    """Joint hand/object state, advanced one frame at a time."""

    def __init__(self, objects: Sequence[SceneObject]):
        self.objects = {o.object_id: o for o in objects}
        self.pos = {o.object_id: np.array(o.center, dtype=np.float64) for o in objects}
        self.hands = {}
        for o in objects:
            if o.hand_role in HANDS:
                self.hands[o.hand_role] = _HandState(o.hand_role, o.object_id, np.array(o.center, float),
                                                     np.array(o.center, float))
        self.holder: dict[int, str] = {}

    def ext(self, oid: int) -> np.ndarray:
        return np.array(self.objects[oid].extents, dtype=np.float64)

    def grasp_pose(self, hand: _HandState, oid: int, start: np.ndarray | None = None
                   ) -> tuple[np.ndarray, np.ndarray, float]:
        """Grasp position, unit approach direction and the stand-off to clear contact.

        The hand comes in horizontally along the ray from the object towards
        ``start`` and stops where the boxes overlap by ``GRASP_DEPTH``.
        """
        obj = self.pos[oid]
        start = hand.pos if start is None else start
        u = (start - obj)[:2]
        if np.linalg.norm(u) < 1e-9:
            u = np.array([hand.side, 0.0])
        u = u / np.linalg.norm(u)
        half = (self.ext(oid)[:2] + np.asarray(HAND_EXTENTS[:2])) / 2 - GRASP_DEPTH
        with np.errstate(divide="ignore"):
            reach = np.where(np.abs(u) > 1e-9, half / np.abs(u), np.inf)
        axis = int(np.argmin(reach))
        z = max(obj[2], HAND_EXTENTS[2] / 2 + GRASP_DEPTH)
        grasp = np.array([obj[0] + u[0] * reach[axis], obj[1] + u[1] * reach[axis], z])
        standoff = RELEASE_OFFSET / abs(u[axis])
        return grasp, np.array([u[0], u[1], 0.0]), standoff

    def plan(self, hand: _HandState, seg: Segment) -> list[np.ndarray]:
        """Hand positions for every frame of ``seg``; updates contact state."""
        d = seg.duration
        start = hand.pos.copy()
        a = seg.action
        if a == "idle":
            if hand.contact is not None:
                raise ScriptError(f"{hand.role} cannot idle while touching object {hand.contact}")
            return [start] * d
        if a == "approach":
            if hand.contact is not None:
                raise ScriptError(f"{hand.role} approaches while already in contact")
            if seg.target is None or seg.target not in self.pos:
                raise ScriptError("approach needs a target object")
            if seg.target in self.holder:
                raise ScriptError(f"object {seg.target} is already held by {self.holder[seg.target]}")
            grasp, u, standoff = self.grasp_pose(hand, seg.target)
            pre = grasp + u * standoff
            path = [_lerp(start, pre, (k + 1) / (d - 1)) for k in range(d - 1)] + [grasp]
            hand.contact = seg.target
            hand.offset = self.pos[seg.target] - grasp
            hand.release = u * standoff
            self.holder[seg.target] = hand.role
            return path
        if hand.contact is None:
            raise ScriptError(f"{hand.role} {a} without an object in hand")
        if a == "hold":
            return [start] * d
        if a == "lift":
            if hand.carrying:
                raise ScriptError(f"{hand.role} lifts an object it already carries")
            hand.carrying = True
            hand.lifted_from = self.pos[hand.contact].copy()
            end = start + np.array([0.0, 0.0, LIFT_HEIGHT])
            return [_lerp(start, end, (k + 1) / d) for k in range(d)]
        if a in ("pour", "drink"):
            if not hand.carrying:
                raise ScriptError(f"{hand.role} {a} needs a lifted object")
            held = hand.contact
            if a == "pour":
                if seg.target is None:
                    raise ScriptError("pour needs a receiving object")
                cont = self.pos[seg.target]
                rise = self.ext(seg.target)[2] / 2 + POUR_CLEARANCE + self.ext(held)[2] / 2
                obj_end = cont + np.array([0.0, 0.0, rise])
            else:
                obj_end = np.array([hand.home[0] * 0.2, -0.25, 0.40])
            end = obj_end - hand.offset
            m = seg.move_frames if seg.move_frames is not None else max(1, math.ceil(0.4 * d))
            m = min(m, d)
            return [_lerp(start, end, min(1.0, (k + 1) / m)) for k in range(d)]
        if a == "place":
            if not hand.carrying:
                raise ScriptError(f"{hand.role} places without carrying")
            held = hand.contact
            spot = seg.spot if seg.spot is not None else tuple(hand.lifted_from[:2])
            obj_end = np.array([spot[0], spot[1], self.ext(held)[2] / 2])
            end = obj_end - hand.offset
            hand.carrying = False
            return [_lerp(start, end, (k + 1) / d) for k in range(d)]
        if a == "retreat":
            if hand.carrying:
                raise ScriptError(f"{hand.role} retreats while carrying")
            released = start + hand.release
            self.holder.pop(hand.contact, None)
            hand.contact = None
            return [released] + [_lerp(released, hand.home, (k + 1) / (d - 1)) for k in range(d - 1)]
        raise ScriptError(f"unknown action {a!r}")


def _simulate(script: ScenarioScript) -> tuple[list[dict[int, np.ndarray]], dict[str, list[int]]]:
    world = _World(script.objects)
    T = script.length
    queues = {h: list(script.segments[h]) for h in HANDS}
    plans: dict[str, list[np.ndarray]] = {h: [] for h in HANDS}
    labels: dict[str, list[int]] = {h: [] for h in HANDS}
    seg_idx = {h: -1 for h in HANDS}
    carried_by: dict[str, tuple[int, bool]] = {}
    frames = []
    for t in range(T):
        for h in HANDS:
            hand = world.hands[h]
            if not plans[h]:
                seg_idx[h] += 1
                seg = queues[h][seg_idx[h]]
                plans[h] = world.plan(hand, seg)
                carried_by[h] = (hand.contact, hand.carrying or seg.action == "place")
                current = seg
            else:
                current = queues[h][seg_idx[h]]
            hand.pos = plans[h].pop(0)
            labels[h].append(ACTIONS.index(current.action))
            oid, moving_obj = carried_by[h]
            if oid is not None and moving_obj:
                world.pos[oid] = hand.pos + hand.offset
        frames.append({oid: p.copy() for oid, p in world.pos.items()} |
                      {world.hands[h].object_id: world.hands[h].pos.copy() for h in HANDS})
    return frames, labels


def generate_episode(script: ScenarioScript, thresholds: Thresholds = Thresholds()
                     ) -> tuple[list[list[ObjectTrack]], GraphSequence, list[list[int]]]:
    """Box tracks, their scene-graph sequence and per-hand labels (left, right)."""
    script.validate()
    frames, labels = _simulate(script)
    rng = np.random.default_rng(script.seed)
    cat = {o.object_id: OBJECTS.index(o.name) for o in script.objects}
    tracks = []
    for t, positions in enumerate(frames):
        jitter = rng.normal(0.0, script.noise, (len(script.objects), 3)) if script.noise > 0 else None
        frame = []
        for k, o in enumerate(script.objects):
            c = positions[o.object_id]
            if jitter is not None:
                c = c + jitter[k]
            frame.append(ObjectTrack(o.object_id, cat[o.object_id], tuple(float(v) for v in c),
                                     o.extents, o.hand_role))
        tracks.append(frame)
    graphs = build_graph_stream(tracks, thresholds)
    streams = [labels[LEFT_HAND], labels[RIGHT_HAND]]
    seq = GraphSequence(graphs, streams, script.subject, script.fps, script.name)
    return tracks, seq, streams


# ------------------------------------------------------------------ scripts

@dataclass(frozen=True)
class SubjectStyle:
    speed: float          # multiplies durations; > 1 is slower
    shift: tuple[float, float]


def subject_style(subject: int, seed: int) -> SubjectStyle:
    rng = np.random.default_rng([seed, subject, 17])
    return SubjectStyle(float(rng.uniform(0.8, 1.2)), (float(rng.uniform(-0.08, 0.08)), float(rng.uniform(-0.06, 0.06))))


TASKS = ("pour", "drink", "move", "pour_bowl")


class _Builder:
    """Samples a plausible script for one task; durations follow path lengths."""

    def __init__(self, rng: np.random.Generator, style: SubjectStyle, duration_scale: float):
        self.rng = rng
        self.style = style
        self.scale = duration_scale
        self.speed = 0.025 / style.speed      # m per frame

    def still(self, lo: int, hi: int) -> int:
        return max(3, int(round(self.rng.integers(lo, hi + 1) * self.style.speed * self.scale)))

    def travel(self, dist: float, extra: int = 0) -> int:
        v = self.speed * self.rng.uniform(0.9, 1.1)
        return max(3, math.ceil(dist / v) + extra)

    def layout(self, names: Sequence[str]) -> list[SceneObject]:
        sx, sy = self.style.shift
        objs = [
            SceneObject(0, "left_hand", (-0.35 + sx, 0.0 + sy, 0.12), HAND_EXTENTS, LEFT_HAND),
            SceneObject(1, "right_hand", (0.35 + sx, 0.0 + sy, 0.12), HAND_EXTENTS, RIGHT_HAND),
            SceneObject(2, "table", (TABLE_CENTER[0] + sx, TABLE_CENTER[1] + sy, TABLE_CENTER[2]), EXTENTS["table"]),
        ]
        placed: list[np.ndarray] = []
        for k, name in enumerate(names):
            for _ in range(200):
                xy = np.array([self.rng.uniform(-0.28, 0.28) + sx, self.rng.uniform(0.22, 0.5) + sy])
                if all(np.linalg.norm(xy - p) > 0.2 for p in placed):
                    break
            placed.append(xy)
            ext = EXTENTS[name]
            objs.append(SceneObject(3 + k, name, (float(xy[0]), float(xy[1]), ext[2] / 2), ext))
        return objs

    def build(self, task: str, active: str, subject: int, seed: int, noise: float, fps: float,
              name: str) -> ScenarioScript:
        if task == "pour":
            names, held, recv = ["bottle", "cup", "spoon"], "bottle", "cup"
        elif task == "pour_bowl":
            names, held, recv = ["cup", "bowl", "spoon"], "cup", "bowl"
        elif task == "drink":
            names, held, recv = ["cup", "bowl"], "cup", None
        else:
            names, held, recv = [str(self.rng.choice(["bowl", "spoon", "cup"])), "bottle"], None, None
            held = names[0]
        objs = self.layout(names)
        oid = {o.name: o.object_id for o in objs}
        other = RIGHT_HAND if active == LEFT_HAND else LEFT_HAND

        # plan the active hand against the initial layout to size motion segments
        world = _World(objs)
        hand = world.hands[active]
        segs: list[Segment] = []

        def add(seg: Segment) -> None:
            path = world.plan(hand, seg)
            hand.pos = path[-1]
            if hand.carrying or seg.action == "place":
                world.pos[hand.contact] = hand.pos + hand.offset
            segs.append(seg)

        def dist_to(target: np.ndarray) -> float:
            return float(np.linalg.norm(target - hand.pos))

        add(Segment("idle", self.still(6, 16)))
        grasp, u, standoff = world.grasp_pose(hand, oid[held])
        add(Segment("approach", self.travel(dist_to(grasp + u * standoff), extra=1), target=oid[held]))
        add(Segment("lift", self.travel(LIFT_HEIGHT)))
        if self.rng.random() < 0.6 or task == "move":
            add(Segment("hold", self.still(8, 20)))
        if recv is not None:
            cont = world.pos[oid[recv]]
            rise = world.ext(oid[recv])[2] / 2 + POUR_CLEARANCE + world.ext(oid[held])[2] / 2
            m = self.travel(float(np.linalg.norm(cont + [0, 0, rise] - world.pos[oid[held]])))
            add(Segment("pour", m + self.still(14, 30), target=oid[recv], move_frames=m))
        elif task == "drink":
            m = self.travel(float(np.linalg.norm(np.array([hand.home[0] * 0.2, -0.25, 0.40]) - world.pos[oid[held]])))
            add(Segment("drink", m + self.still(14, 30), move_frames=m))
        spot = None
        if task == "move":
            base = np.array(objs[[o.name for o in objs].index(held)].center[:2])
            spot = (float(base[0] + self.rng.uniform(-0.12, 0.12)), float(base[1] + self.rng.uniform(-0.1, 0.1)))
        lifted = hand.lifted_from if spot is None else np.array([spot[0], spot[1], 0.0])
        place_obj = np.array([lifted[0], lifted[1], world.ext(oid[held])[2] / 2])
        add(Segment("place", self.travel(float(np.linalg.norm(place_obj - world.pos[oid[held]]))), spot=spot))
        add(Segment("retreat", self.travel(float(np.linalg.norm(hand.home - hand.pos)), extra=1)))
        add(Segment("idle", self.still(6, 16)))
        active_total = sum(s.duration for s in segs)

        # the other hand steadies the receiving object while the active hand pours
        other_segs: list[Segment] = []
        if recv is not None and self.rng.random() < 0.7:
            w2 = _World(objs)
            h2 = w2.hands[other]
            start_touch = sum(s.duration for s in segs[:3])
            end_touch = sum(s.duration for s in segs[:-2])
            g2, u2, so2 = w2.grasp_pose(h2, oid[recv])
            approach = self.travel(float(np.linalg.norm(g2 + u2 * so2 - h2.pos)), extra=1)
            retreat = self.travel(float(np.linalg.norm(g2 + u2 * so2 - h2.home)), extra=1)
            lead = max(3, start_touch - approach)
            hold = max(3, end_touch - lead - approach)
            other_segs = [Segment("idle", lead), Segment("approach", approach, target=oid[recv]),
                          Segment("hold", hold), Segment("retreat", retreat)]
        other_total = sum(s.duration for s in other_segs)
        total = max(active_total, other_total + 3)
        if total > active_total:
            last = segs[-1]
            segs[-1] = Segment("idle", last.duration + total - active_total)
        other_segs.append(Segment("idle", total - other_total))
        return ScenarioScript(objs, {active: segs, other: other_segs}, noise=noise, seed=seed, fps=fps,
                              subject=subject, name=name)


def make_script(task: str, active: str, subject: int = 0, seed: int = 0, noise: float = DEFAULT_NOISE,
                fps: float = 15.0, duration_scale: float = 1.0, style: SubjectStyle | None = None,
                name: str = "") -> ScenarioScript:
    if task not in TASKS:
        raise ScriptError(f"unknown task {task!r}; choose from {TASKS}")
    rng = np.random.default_rng([seed, subject, TASKS.index(task), HANDS.index(active)])
    style = style or SubjectStyle(1.0, (0.0, 0.0))
    return _Builder(rng, style, duration_scale).build(task, active, subject, seed, noise, fps,
                                                      name or f"s{subject}_{task}_{active}")


def synth_vocabulary() -> Vocabulary:
    return Vocabulary(list(OBJECTS), list(ACTIONS), 2)


def generate_benchmark_suite(n_subjects: int = 5, episodes_per_subject: int = 10, seed: int = 0,
                             noise: float = DEFAULT_NOISE, duration_scale: float = 1.0,
                             fps: float = 15.0, thresholds: Thresholds = Thresholds()) -> EpisodeDataset:
    """Episodes for ``n_subjects`` subjects, each with its own speed and workspace offset.

    Tasks and the active hand cycle so that every subject performs every
    action with both hands.
    """
    if n_subjects < 2:
        raise ValueError("a benchmark suite needs at least two subjects")
    seqs = []
    for subj in range(n_subjects):
        style = subject_style(subj, seed)
        for e in range(episodes_per_subject):
            task = TASKS[e % len(TASKS)]
            active = HANDS[(e // len(TASKS) + e) % 2]
            ep_seed = int(np.random.default_rng([seed, subj, e]).integers(2**31))
            script = make_script(task, active, subj, ep_seed, noise, fps, duration_scale, style,
                                 name=f"s{subj}_e{e:02d}_{task}")
            seqs.append(generate_episode(script, thresholds)[1])
    return EpisodeDataset(seqs, synth_vocabulary())


def write_suite(ds: EpisodeDataset, path, manifest: dict | None = None) -> Path:
    """Write fgse-jsonl, its vocabulary and a scenario manifest next to it."""
    path = Path(path)
    write_jsonl(ds, path)
    doc = {"dataset_hash": dataset_hash(ds), "episodes": len(ds), "subjects": ds.subjects,
           "frames": sum(len(s) for s in ds.sequences)}
    doc.update(manifest or {})
    out = path.with_name(path.name.removesuffix(".jsonl") + ".manifest.json")
    out.write_text(json.dumps(doc, indent=2))
    return out
