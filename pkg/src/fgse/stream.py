"""Sliding-window streaming inference with per-frame majority voting.

Every window of W consecutive graphs yields one prediction per frame it
contains (stride 1 by default), so a frame collects up to W votes. A frame is
emitted as soon as no later window can contain it, which puts the output
W - 1 frames behind the input.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .scenegraph.types import SceneGraph, VocabularyError


class WindowModel(Protocol):
    """What the engine needs from a model."""

    window: int
    output_mode: str
    config: object      # needs n_heads_out and n_categories

    def embed_frame(self, g: SceneGraph) -> np.ndarray: ...

    def predict_tokens(self, tokens: np.ndarray) -> np.ndarray: ...


def majority_vote(votes: Sequence[int], softmax_rows: Sequence[np.ndarray] | None = None) -> tuple[int, int]:
    """Most frequent class among ``votes`` and its count.

    Ties go to the class with the larger summed softmax mass over all rows,
    then to the class voted most recently (votes are in arrival order). Votes
    may be any hashable label; the mass rule needs integer class indices.
    """
    if len(votes) == 0:
        raise ValueError("majority_vote needs at least one vote")
    counts: dict = {}
    last_seen: dict = {}
    for i, v in enumerate(votes):
        counts[v] = counts.get(v, 0) + 1
        last_seen[v] = i
    best = max(counts.values())
    tied = [c for c, n in counts.items() if n == best]
    if len(tied) > 1 and softmax_rows is not None and len(softmax_rows):
        mass = np.sum(np.asarray(softmax_rows, dtype=np.float64), axis=0)
        top = max(mass[c] for c in tied)
        tied = [c for c in tied if mass[c] == top]
    winner = max(tied, key=lambda c: last_seen[c])
    return winner, best


@dataclass
class FinalPrediction:
    time_index: int
    labels: tuple[int, ...]          # one per head
    votes: tuple[int, ...]           # winning vote count per head
    n_votes: int                     # votes the frame received
    delay_frames: int                # frames that arrived after it before emission

    def to_records(self) -> list[dict]:
        return [{"t": self.time_index, "head": h, "label": int(lab), "votes": int(v),
                 "delay_frames": self.delay_frames}
                for h, (lab, v) in enumerate(zip(self.labels, self.votes))]


@dataclass
class _Slot:
    time_index: int
    position: int
    votes: list[list[int]] = field(default_factory=list)      # per head
    rows: list[list[np.ndarray]] = field(default_factory=list)


@dataclass
class LatencyReport:
    window: int
    fps: float
    structural_delay_s: float
    compute_mean_s: float
    compute_max_s: float

    @property
    def total_delay_s(self) -> float:
        return self.structural_delay_s + self.compute_mean_s


def structural_delay(window: int, fps: float) -> float:
    """Output delay of sliding-window voting: ``W / fps`` seconds."""
    if not fps or fps <= 0:
        raise ValueError("fps must be set and positive")
    return window / fps


class VoteBuffer:
    """Pending frames and the votes they have gathered, in time order."""

    def __init__(self, window: int, n_heads: int):
        self.window = window
        self.n_heads = n_heads
        self.pending: deque[_Slot] = deque()

    def add_frame(self, time_index: int, position: int) -> None:
        self.pending.append(_Slot(time_index, position, [[] for _ in range(self.n_heads)],
                                  [[] for _ in range(self.n_heads)]))

    def slot(self, position: int) -> _Slot:
        first = self.pending[0].position
        return self.pending[position - first]

    def deposit(self, position: int, probs: np.ndarray) -> None:
        """Add one (heads, classes) prediction as a vote for the frame at ``position``."""
        s = self.slot(position)
        for h in range(self.n_heads):
            s.votes[h].append(int(np.argmax(probs[h])))
            s.rows[h].append(probs[h])

    def pop_until(self, position: int, newest: int) -> list[FinalPrediction]:
        """Emit frames with position < ``position``."""
        out = []
        while self.pending and self.pending[0].position < position:
            s = self.pending.popleft()
            labels, counts = zip(*(majority_vote(s.votes[h], s.rows[h]) for h in range(self.n_heads)))
            out.append(FinalPrediction(s.time_index, tuple(labels), tuple(counts), len(s.votes[0]),
                                       newest - s.position))
        return out

    def __len__(self) -> int:
        return len(self.pending)


class StreamEngine:
    """Single-consumer streaming front end around a trained model.

    ``push`` must be called in frame order; ``flush`` ends the stream and
    emits everything still pending. The engine can then take a new stream.
    """

    def __init__(self, model: WindowModel, fps: float | None = None, stride: int = 1,
                 history: int = 100):
        self.model = model
        self.window = model.window
        if stride < 1 or stride > self.window:
            raise ValueError(f"stride must be in [1, W={self.window}]")
        self.stride = stride
        self.fps = fps
        self.mode = model.output_mode
        self.n_heads = model.config.n_heads_out
        self.timings: deque[float] = deque(maxlen=history)
        self._reset()

    def _reset(self) -> None:
        self.tokens: deque[np.ndarray] = deque(maxlen=self.window)
        self.buffer = VoteBuffer(self.window, self.n_heads)
        self.n_seen = 0
        self.last_start: int | None = None
        self.last_probs: np.ndarray | None = None

    # -- window evaluation

    def _run_window(self, start: int, tokens: np.ndarray, pad: int = 0) -> None:
        probs = self.model.predict_tokens(tokens)
        self.last_start = start
        if self.mode == "per_frame":
            # a final flush window may overlap frames already emitted at stride > 1
            first = self.buffer.pending[0].position if self.buffer.pending else start + self.window
            for r in range(max(pad, first - start), self.window):
                self.buffer.deposit(start + r, probs[r])
            return
        # center / single: one prediction, anchored at one frame of the window;
        # frames before the first anchor and after the last reuse the nearest
        anchor = start + (self.window // 2 if self.mode == "center" else self.window - 1)
        self.last_probs = probs[0]
        for s in self.buffer.pending:
            if s.position > anchor:
                break
            if not s.votes[0]:
                for h in range(self.n_heads):
                    s.votes[h].append(int(np.argmax(probs[0][h])))
                    s.rows[h].append(probs[0][h])

    def _emit_bound(self) -> int:
        """Frames below this position can receive no further votes."""
        if self.last_start is None:
            return 0
        if self.mode == "per_frame":
            return self.last_start + self.stride
        anchor = self.last_start + (self.window // 2 if self.mode == "center" else self.window - 1)
        return anchor + 1

    # -- public API

    def push(self, g: SceneGraph) -> list[FinalPrediction]:
        t0 = time.perf_counter()
        n_cat = self.model.config.n_categories
        for n in g.nodes:
            if n.category >= n_cat:
                raise VocabularyError(f"frame {g.time_index}: category {n.category} outside the "
                                      f"checkpoint vocabulary of {n_cat}")
        pos = self.n_seen
        self.tokens.append(self.model.embed_frame(g))
        self.buffer.add_frame(g.time_index, pos)
        self.n_seen += 1
        out: list[FinalPrediction] = []
        start = self.n_seen - self.window
        if start >= 0 and start % self.stride == 0:
            self._run_window(start, np.stack(self.tokens))
            out = self.buffer.pop_until(self._emit_bound(), self.n_seen - 1)
        self.timings.append(time.perf_counter() - t0)
        return out

    push_frame = push

    def flush(self) -> list[FinalPrediction]:
        if self.n_seen == 0:
            return []
        if self.n_seen < self.window:
            # left-pad by repeating the first frame; padding votes are dropped
            toks = list(self.tokens)
            pad = self.window - len(toks)
            self._run_window(-pad, np.stack([toks[0]] * pad + toks), pad=pad)
        elif self.last_start is None or self.last_start + self.window < self.n_seen:
            self._run_window(self.n_seen - self.window, np.stack(self.tokens))
        if self.mode != "per_frame":
            for s in self.buffer.pending:
                if not s.votes[0]:
                    for h in range(self.n_heads):
                        s.votes[h].append(int(np.argmax(self.last_probs[h])))
                        s.rows[h].append(self.last_probs[h])
        out = self.buffer.pop_until(self.n_seen, self.n_seen - 1)
        self._reset()
        return out

    def provisional(self) -> list[FinalPrediction]:
        """Current majority labels of pending frames that have at least one vote."""
        out = []
        for s in self.buffer.pending:
            if not s.votes[0]:
                continue
            labels, counts = zip(*(majority_vote(s.votes[h], s.rows[h]) for h in range(self.n_heads)))
            out.append(FinalPrediction(s.time_index, tuple(labels), tuple(counts), len(s.votes[0]),
                                       self.n_seen - 1 - s.position))
        return out

    def run(self, graphs: Sequence[SceneGraph]) -> list[FinalPrediction]:
        out = []
        for g in graphs:
            out.extend(self.push(g))
        out.extend(self.flush())
        return out

    def latency_report(self) -> LatencyReport:
        delay = structural_delay(self.window, self.fps)
        t = np.asarray(self.timings, dtype=np.float64)
        return LatencyReport(self.window, float(self.fps), delay,
                             float(t.mean()) if t.size else 0.0, float(t.max()) if t.size else 0.0)


def predict_sequence(model: WindowModel, graphs: Sequence[SceneGraph], stride: int = 1) -> np.ndarray:
    """Per-frame labels (T, heads) for a whole sequence via the streaming engine."""
    preds = StreamEngine(model, stride=stride).run(graphs)
    return np.array([p.labels for p in preds], dtype=np.int64).reshape(len(graphs), -1)
