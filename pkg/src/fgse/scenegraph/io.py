"""Dataset readers and the native ``fgse-jsonl`` writer.

Three input formats are understood:

``fgse-jsonl``
    One JSON object per frame::

        {"episode": "s1_e0", "t": 0, "subject": 1, "fps": 15.0,
         "nodes": [{"id": 0, "cat": 3, "hand": "left_hand"}, ...],
         "edges": [{"src": 0, "dst": 2, "rel": [14 ints]}, ...],
         "labels": [4, 0]}

    Category and label indices refer to the sidecar vocabulary file
    ``<stem>.vocab.json``. Lines without ``episode`` are split into episodes
    whenever the subject changes or ``t`` stops increasing.

``bimacs-json``
    Pre-extracted graphs with relation *names*; a JSON file (or a directory
    of them) holding one episode object or a list of them::

        {"subject": 1, "fps": 30, "episode": "...",
         "frames": [{"t": 0,
                     "objects": [{"id": 0, "class": "LeftHand"}, ...],
                     "relations": [{"subject": 0, "object": 2, "relation": "contact"}, ...]}],
         "labels": {"left": ["idle", ...], "right": ["hold", ...]}}

``coax-boxes``
    Raw boxes, relations computed here; single label stream of
    action/object pairs::

        {"subject": 1, "fps": 30, "episode": "...",
         "frames": [{"t": 0, "objects": [{"id": 0, "class": "RightHand",
                                          "box": [cx, cy, cz, ex, ey, ez]}, ...]}],
         "labels": [{"action": "grab", "object": "screw"}, ...]}
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

from .relations import Thresholds, build_graph_stream
from .types import (LEFT_HAND, NO_HAND, REL, RELATIONS, RIGHT_HAND, Edge, EpisodeDataset,
                    GraphError, GraphSequence, Node, ObjectTrack, SceneGraph, Vocabulary,
                    VocabularyError)

FORMATS = ("bimacs-json", "coax-boxes", "fgse-jsonl")

RELATION_ALIASES = {
    "contact": "touching",
    "touch": "touching",
    "temporal": None,
    "notouching": None,
    "nocontact": None,
    "insideof": "inside",
    "surrounds": "surround",
    "leftof": "left_of",
    "rightof": "right_of",
    "gettingclose": "getting_close",
    "movingapart": "moving_apart",
    "movingtogether": "moving_together",
    "haltingtogether": "halting_together",
    "fixedmovingtogether": "fixed_moving_together",
}


class DatasetFormatError(ValueError):
    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


_REL_BY_NORM = {_norm(r): r for r in RELATIONS}


def relation_from_name(name: str) -> str | None:
    """Canonical relation for an external name; ``None`` for explicit no-relation tags."""
    key = _norm(name)
    if key in _REL_BY_NORM:
        return _REL_BY_NORM[key]
    if key in RELATION_ALIASES:
        return RELATION_ALIASES[key]
    raise VocabularyError(f"unknown relation name {name!r}")


def hand_role_for_class(name: str) -> str:
    key = _norm(name)
    if key == "lefthand":
        return LEFT_HAND
    if key == "righthand":
        return RIGHT_HAND
    return NO_HAND


def vocab_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name.removesuffix(".jsonl") + ".vocab.json")


# ------------------------------------------------------------------ native

def write_jsonl(ds: EpisodeDataset, path) -> Path:
    """Write ``ds`` as fgse-jsonl plus its vocabulary sidecar; returns the sidecar path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for k, seq in enumerate(ds.sequences):
            name = seq.episode or f"episode_{k}"
            for i, g in enumerate(seq.graphs):
                rec = {
                    "episode": name,
                    "t": g.time_index,
                    "subject": seq.subject,
                    "fps": seq.fps,
                    "nodes": [{"id": n.object_id, "cat": n.category, "hand": n.hand} for n in g.nodes],
                    "edges": [{"src": e.src, "dst": e.dst, "rel": list(e.rel)} for e in g.edges],
                    "labels": [stream[i] for stream in seq.labels],
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    side = vocab_path(path)
    side.write_text(json.dumps(ds.vocab.to_json(), indent=2))
    return side


def graph_from_record(rec: dict) -> SceneGraph:
    nodes = tuple(Node(int(n["id"]), int(n["cat"]), n.get("hand", NO_HAND)) for n in rec["nodes"])
    edges = tuple(Edge(int(e["src"]), int(e["dst"]), tuple(int(b) for b in e["rel"])) for e in rec.get("edges", ()))
    return SceneGraph(int(rec["t"]), nodes, edges)


def iter_jsonl_records(lines: Iterable[str], source="<stream>") -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(source, f"malformed JSON ({exc.msg})", lineno) from None


def read_jsonl(path, vocab: Vocabulary | None = None) -> EpisodeDataset:
    path = Path(path)
    if vocab is None:
        side = vocab_path(path)
        if not side.exists():
            raise DatasetFormatError(path, f"vocabulary sidecar {side.name} not found")
        vocab = Vocabulary.from_json(json.loads(side.read_text()))
    n_obj = len(vocab.objects)
    sequences: list[GraphSequence] = []
    cur: dict | None = None

    def close():
        if cur is not None:
            try:
                sequences.append(GraphSequence(cur["graphs"], [list(x) for x in zip(*cur["labels"])],
                                               cur["subject"], cur["fps"], cur["episode"]))
            except GraphError as exc:
                raise DatasetFormatError(path, str(exc), cur["line"]) from None

    with path.open() as fh:
        for lineno, rec in iter_jsonl_records(fh, path):
            try:
                g = graph_from_record(rec)
                labels = [int(x) for x in rec["labels"]]
                subject = int(rec["subject"])
                fps = float(rec["fps"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(path, f"malformed record ({exc})", lineno) from None
            if any(n.category >= n_obj for n in g.nodes):
                raise DatasetFormatError(path, f"category index outside vocabulary of {n_obj}", lineno)
            if len(labels) != vocab.n_heads:
                raise DatasetFormatError(path, f"{len(labels)} labels, vocabulary declares {vocab.n_heads} heads", lineno)
            episode = rec.get("episode")
            new = (cur is None
                   or (episode is not None and episode != cur["episode"])
                   or (episode is None and (subject != cur["subject"] or g.time_index <= cur["graphs"][-1].time_index)))
            if new:
                close()
                cur = {"episode": episode if episode is not None else f"episode_{len(sequences)}",
                       "subject": subject, "fps": fps, "graphs": [], "labels": [], "line": lineno}
            cur["graphs"].append(g)
            cur["labels"].append(labels)
    close()
    try:
        return EpisodeDataset(sequences, vocab)
    except GraphError as exc:
        raise DatasetFormatError(path, str(exc)) from None


# ----------------------------------------------------------------- external

def _episode_docs(path: Path) -> Iterator[tuple[Path, int, dict]]:
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    for f in files:
        if f.name.endswith(".vocab.json"):
            continue
        try:
            doc = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f, f"malformed JSON ({exc.msg})", exc.lineno) from None
        if isinstance(doc, dict) and "episodes" in doc:
            doc = doc["episodes"]
        docs = doc if isinstance(doc, list) else [doc]
        for i, ep in enumerate(docs):
            yield f, i, ep


def _index(names: list[str], name: str, fixed: bool, kind: str) -> int:
    if name in names:
        return names.index(name)
    if fixed:
        raise VocabularyError(f"unknown {kind} {name!r}")
    names.append(name)
    return len(names) - 1


def read_bimacs(path, vocab: Vocabulary | None = None) -> EpisodeDataset:
    path = Path(path)
    fixed = vocab is not None
    objects = list(vocab.objects) if fixed else []
    labels = list(vocab.labels) if fixed else []
    raw = []
    for f, i, ep in _episode_docs(path):
        where = f"episode {i}"
        try:
            graphs = []
            for j, fr in enumerate(ep["frames"]):
                nodes = []
                for o in fr["objects"]:
                    cat = _index(objects, o["class"], fixed, "object category")
                    nodes.append(Node(int(o["id"]), cat, hand_role_for_class(o["class"])))
                bits: dict[tuple[int, int], list[int]] = {}
                for r in fr.get("relations", ()):
                    name = relation_from_name(r["relation"])
                    key = (int(r["subject"]), int(r["object"]))
                    vec = bits.setdefault(key, [0] * len(RELATIONS))
                    if name is not None:
                        vec[REL[name]] = 1
                edges = tuple(Edge(s, d, tuple(v)) for (s, d), v in bits.items())
                graphs.append(SceneGraph(int(fr.get("t", j)), tuple(nodes), edges))
            streams = ep["labels"]
            names = [streams["left"], streams["right"]] if isinstance(streams, dict) else streams
            idx = [[_index(labels, str(x), fixed, "label") for x in stream] for stream in names]
            raw.append(GraphSequence(graphs, idx, int(ep["subject"]), float(ep.get("fps", 30.0)),
                                     str(ep.get("episode", f"{f.stem}_{i}"))))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, VocabularyError):
                raise
            raise DatasetFormatError(f, f"{where}: malformed record ({exc})") from None
    if not fixed:
        raw, objects, labels = _sorted_vocab(raw, objects, labels)
    n_heads = raw[0].n_heads if raw else 2
    return EpisodeDataset(raw, Vocabulary(objects, labels, n_heads))


def _sorted_vocab(seqs: list[GraphSequence], objects: list[str], labels: list[str]):
    """Re-index first-seen vocabularies into sorted order for stable output."""
    obj_sorted = sorted(objects)
    lab_sorted = sorted(labels)
    omap = {i: obj_sorted.index(n) for i, n in enumerate(objects)}
    lmap = {i: lab_sorted.index(n) for i, n in enumerate(labels)}
    out = []
    for s in seqs:
        graphs = [SceneGraph(g.time_index, tuple(Node(n.object_id, omap[n.category], n.hand) for n in g.nodes), g.edges)
                  for g in s.graphs]
        out.append(GraphSequence(graphs, [[lmap[x] for x in st] for st in s.labels], s.subject, s.fps, s.episode))
    return out, obj_sorted, lab_sorted


def _pair_of(lab) -> tuple[str, str]:
    if isinstance(lab, dict):
        return str(lab["action"]), str(lab.get("object") or "none")
    if isinstance(lab, (list, tuple)) and len(lab) == 2:
        return str(lab[0]), str(lab[1])
    if isinstance(lab, str) and ":" in lab:
        a, o = lab.split(":", 1)
        return a, o
    raise TypeError(f"cannot read action/object pair from {lab!r}")


def read_coax(path, vocab: Vocabulary | None = None, thresholds: Thresholds = Thresholds()) -> EpisodeDataset:
    """Boxes -> relation graphs; action/object labels merged over observed pairs."""
    path = Path(path)
    fixed = vocab is not None
    objects = list(vocab.objects) if fixed else []
    episodes = []
    seen_pairs: set[tuple[str, str]] = set()
    for f, i, ep in _episode_docs(path):
        try:
            frames, times = [], []
            for j, fr in enumerate(ep["frames"]):
                tracks = []
                for o in fr["objects"]:
                    cat = _index(objects, o["class"], fixed, "object category")
                    box = [float(v) for v in o["box"]]
                    tracks.append(ObjectTrack(int(o["id"]), cat, tuple(box[:3]), tuple(box[3:6]),
                                              hand_role_for_class(o["class"])))
                frames.append(tracks)
                times.append(int(fr.get("t", j)))
            pairs = [_pair_of(lab) for lab in ep["labels"]]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, VocabularyError):
                raise
            raise DatasetFormatError(f, f"episode {i}: malformed record ({exc})") from None
        seen_pairs.update(pairs)
        episodes.append((f, i, ep, frames, times, pairs))

    if fixed:
        if vocab.label_pairs is None:
            raise VocabularyError("coax vocabulary needs label_pairs")
        pair_list = [tuple(p) for p in vocab.label_pairs]
        missing = seen_pairs - set(pair_list)
        if missing:
            raise VocabularyError(f"label pairs not in vocabulary: {sorted(missing)}")
    else:
        pair_list = sorted(seen_pairs)
    pair_index = {p: k for k, p in enumerate(pair_list)}

    seqs = []
    for f, i, ep, frames, times, pairs in episodes:
        try:
            graphs = build_graph_stream(frames, thresholds, times)
            seqs.append(GraphSequence(graphs, [[pair_index[p] for p in pairs]], int(ep["subject"]),
                                      float(ep.get("fps", 30.0)), str(ep.get("episode", f"{f.stem}_{i}"))))
        except GraphError as exc:
            raise DatasetFormatError(f, f"episode {i}: {exc}") from None
    if not fixed:
        obj_sorted = sorted(objects)
        omap = {k: obj_sorted.index(n) for k, n in enumerate(objects)}
        seqs = [GraphSequence([SceneGraph(g.time_index, tuple(Node(n.object_id, omap[n.category], n.hand) for n in g.nodes), g.edges)
                               for g in s.graphs], s.labels, s.subject, s.fps, s.episode) for s in seqs]
        objects = obj_sorted
    vocab_out = Vocabulary(objects, [f"{a}:{o}" for a, o in pair_list], 1, label_pairs=pair_list)
    return EpisodeDataset(seqs, vocab_out)


def load_dataset(path, format: str, vocab: Vocabulary | None = None,  # noqa: A002
                 thresholds: Thresholds = Thresholds()) -> EpisodeDataset:
    path = Path(path)
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "fgse-jsonl":
        return read_jsonl(path, vocab)
    if format == "bimacs-json":
        return read_bimacs(path, vocab)
    return read_coax(path, vocab, thresholds)


def dataset_hash(ds: EpisodeDataset) -> str:
    """Short content hash over vocabulary, labels and graphs."""
    h = hashlib.sha256()
    h.update(json.dumps(ds.vocab.to_json(), sort_keys=True).encode())
    for s in ds.sequences:
        h.update(f"{s.episode}|{s.subject}|{s.fps}|{s.labels}".encode())
        for g in s.graphs:
            h.update(repr((g.time_index, g.nodes, g.edges)).encode())
    return h.hexdigest()[:16]
