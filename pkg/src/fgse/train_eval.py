"""Training, leave-one-subject-out folds, F1 metrics and experiment drivers."""

from __future__ import annotations

import csv
import json
import logging
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .model import ConfigError, FgseConfig, FgseModel
from .numcore import Adam, Tape, ops
from .scenegraph import (EpisodeDataset, GraphSequence, SceneGraph, Vocabulary, VocabularyError, dataset_hash,
                         downsample, hand_category_swap, mirror_graph_sequence, upsample_predictions)
from .stream import StreamEngine

log = logging.getLogger(__name__)


class FoldError(ValueError):
    pass


class LeakageError(RuntimeError):
    """Training asked for a sequence of a held-out subject."""


# ------------------------------------------------------------------- folds

@dataclass(frozen=True)
class Fold:
    index: int
    test_subject: int
    train: tuple[int, ...]      # sequence indices
    test: tuple[int, ...]


def make_folds(ds: EpisodeDataset) -> list[Fold]:
    """One fold per subject: train on the others, test on that subject."""
    subjects = ds.subjects
    if len(subjects) < 2:
        raise FoldError(f"leave-one-subject-out needs at least 2 subjects, got {subjects}")
    folds = []
    for k, subj in enumerate(subjects):
        test = tuple(i for i, s in enumerate(ds.sequences) if s.subject == subj)
        train = tuple(i for i, s in enumerate(ds.sequences) if s.subject != subj)
        folds.append(Fold(k, subj, train, test))
    return folds


class SubjectGuardedLoader:
    """Hands out training sequences and records which subjects were read."""

    def __init__(self, ds: EpisodeDataset, indices: Iterable[int], held_out: Iterable[int] = ()):
        self.ds = ds
        self.indices = list(indices)
        self.held_out = set(held_out)
        self.subjects_read: set[int] = set()

    def __iter__(self):
        for i in self.indices:
            s = self.ds.sequences[i]
            if s.subject in self.held_out:
                raise LeakageError(f"sequence {s.episode!r} belongs to held-out subject {s.subject}")
            self.subjects_read.add(s.subject)
            yield s


# ----------------------------------------------------------------- metrics

def confusion_matrix(preds, truth, n_classes: int) -> np.ndarray:
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"prediction / truth length mismatch: {p.size} vs {t.size}")
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def f1_scores(preds, truth, n_classes: int) -> tuple[float, float]:
    """(macro, micro) F1 over all frames and heads pooled.

    Classes absent from both predictions and truth do not enter the macro
    mean. Arrays of any shape are flattened, so (T, heads) pools the hands.
    """
    cm = confusion_matrix(preds, truth, n_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    present = denom > 0
    if not present.any():
        return 1.0, 1.0
    macro = float(np.mean(2 * tp[present] / denom[present]))
    micro = float(2 * tp.sum() / (2 * tp.sum() + fp.sum() + fn.sum()))
    return macro, micro


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    stride: int | None = None        # training window stride, default W // 2
    mirror: bool = True              # bimanual data only
    downsample: int = 1
    patience: int | None = None      # stop after this many epochs without loss improvement

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if self.downsample < 1 or (self.stride is not None and self.stride < 1):
            raise ConfigError("downsample and stride must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def prepare_sequences(seqs: Iterable[GraphSequence], vocab: Vocabulary, downsample_factor: int = 1,
                      mirror: bool = False) -> list[GraphSequence]:
    """Downsample, then (for two-handed data) append mirrored copies."""
    out = [downsample(s, downsample_factor) for s in seqs]
    if mirror and vocab.n_heads == 2:
        swap = hand_category_swap(vocab)
        out = out + [mirror_graph_sequence(s, swap) for s in out]
    return out


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Window starts covering a sequence; the last window is flush with its end."""
    if length < window:
        return []
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] != length - window:
        starts.append(length - window)
    return starts


def window_targets(labels: np.ndarray, start: int, window: int, mode: str) -> np.ndarray:
    """Targets (R, heads) for the window at ``start`` of a (T, heads) label matrix."""
    rows = labels[start:start + window]
    if mode == "single":
        return rows[-1:]
    return rows


def window_loss(model: FgseModel, window: Sequence[SceneGraph], labels) -> "ops.Tensor":
    """Cross-entropy averaged over frames and heads of one window; no voting.

    ``labels`` is (W, heads). Single-prediction models are scored against the
    last frame only.
    """
    W = model.window
    labels = np.asarray(labels, dtype=np.int64)
    if len(window) != W or labels.shape[0] != W:
        raise ValueError(f"window and labels must both have {W} frames")
    logits = model.batch_logits(list(window), np.arange(W)[None])
    target = window_targets(labels, 0, W, model.output_mode)[None]
    return ops.cross_entropy(logits, target)


@dataclass
class TrainRun:
    config: dict
    seed: int
    fold: int | None = None
    losses: list[float] = field(default_factory=list)
    f1_macro: list[float] = field(default_factory=list)     # on training windows, per frame, no voting
    f1_micro: list[float] = field(default_factory=list)
    windows_per_epoch: list[int] = field(default_factory=list)
    subjects_read: list[int] = field(default_factory=list)
    checkpoint: str | None = None
    seconds: float = 0.0
    model: FgseModel | None = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("model")
        return d


def _training_config(cfg: FgseConfig) -> FgseConfig:
    # center-of-window reuses the per-frame objective and only changes readout
    return cfg.replace(output_mode="per_frame") if cfg.output_mode == "center" else cfg


def train(ds: EpisodeDataset, model_cfg: FgseConfig, train_cfg: TrainConfig = TrainConfig(), seed: int = 0,
          fold: Fold | None = None, checkpoint: str | Path | None = None,
          on_epoch: Callable[[int, TrainRun], None] | None = None) -> TrainRun:
    """Fit one model on the training part of ``fold`` (the whole dataset if None)."""
    t0 = time.perf_counter()
    indices = fold.train if fold is not None else range(len(ds.sequences))
    held_out = {fold.test_subject} if fold is not None else set()
    loader = SubjectGuardedLoader(ds, indices, held_out)
    seqs = prepare_sequences(loader, ds.vocab, train_cfg.downsample, train_cfg.mirror)
    cfg = _training_config(model_cfg)
    W = cfg.window
    if not any(len(s) >= W for s in seqs):
        raise ConfigError(f"window W={W} is longer than every training sequence "
                          f"(longest {max((len(s) for s in seqs), default=0)} frames after downsampling)")
    stride = train_cfg.stride or max(1, W // 2)

    # flatten frames so a window is a row of global frame indices
    graphs: list[SceneGraph] = []
    labels: list[np.ndarray] = []
    windows = []
    for s in seqs:
        off = len(graphs)
        graphs.extend(s.graphs)
        labels.append(s.label_matrix())
        windows.extend(off + st for st in window_starts(len(s), W, stride))
    all_labels = np.concatenate(labels, axis=0)
    windows = np.asarray(windows, dtype=np.int64)
    offsets = np.arange(W)
    target_rows = offsets[-1:] if cfg.output_mode == "single" else offsets

    model = FgseModel(cfg, seed=seed)
    opt = Adam(model.parameters(), lr=train_cfg.lr)
    rng = np.random.default_rng(seed)
    run = TrainRun({"model": asdict(model_cfg), "train": asdict(train_cfg)}, seed,
                   fold.index if fold is not None else None, subjects_read=sorted(loader.subjects_read))
    best, stale = np.inf, 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(windows))
        total, count = 0.0, 0
        preds, truth = [], []
        for b in range(0, len(order), train_cfg.batch_size):
            rows = windows[order[b:b + train_cfg.batch_size], None] + offsets[None, :]
            uniq, inverse = np.unique(rows, return_inverse=True)
            target = all_labels[rows[:, target_rows]]
            with Tape() as tape:
                logits = model.batch_logits([graphs[i] for i in uniq], inverse.reshape(rows.shape))
                loss = ops.cross_entropy(logits, target)
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(rows)
            count += len(rows)
            preds.append(logits.data.argmax(-1).reshape(-1))
            truth.append(target.reshape(-1))
        mean_loss = total / max(count, 1)
        macro, micro = f1_scores(np.concatenate(preds), np.concatenate(truth), ds.n_classes)
        run.losses.append(mean_loss)
        run.f1_macro.append(macro)
        run.f1_micro.append(micro)
        run.windows_per_epoch.append(count)
        log.info("epoch %d loss %.4f train-F1 %.3f/%.3f (%d windows)", epoch, mean_loss, macro, micro, count)
        if on_epoch:
            on_epoch(epoch, run)
        if train_cfg.patience is not None:
            if mean_loss < best - 1e-4:
                best, stale = mean_loss, 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    break
    if cfg is not model_cfg:
        model = model.with_output_mode(model_cfg.output_mode)
    run.model = model
    run.seconds = time.perf_counter() - t0
    if checkpoint is not None:
        model.save(checkpoint, ds.vocab, {"train": asdict(train_cfg), "seed": seed,
                                          "fold": run.fold, "version": version_tag()})
        run.checkpoint = str(checkpoint)
    return run


# -------------------------------------------------------------- evaluation

def check_vocabulary(model_vocab: Vocabulary | None, data_vocab: Vocabulary) -> None:
    if model_vocab is None:
        return
    if list(model_vocab.objects) != list(data_vocab.objects):
        raise VocabularyError("object vocabulary of the data differs from the checkpoint")
    if list(model_vocab.labels) != list(data_vocab.labels) or model_vocab.n_heads != data_vocab.n_heads:
        raise VocabularyError("label vocabulary of the data differs from the checkpoint")


def predict_episode(model: FgseModel, seq: GraphSequence, downsample_factor: int = 1, stride: int = 1) -> np.ndarray:
    """Streamed, voted labels (T, heads) at the sequence's original rate."""
    reduced = downsample(seq, downsample_factor)
    preds = StreamEngine(model, stride=stride).run(reduced.graphs)
    labels = [p.labels for p in preds]
    if downsample_factor > 1:
        labels = upsample_predictions(labels, downsample_factor, len(seq))
    return np.asarray(labels, dtype=np.int64).reshape(len(seq), -1)


@dataclass
class EvalResult:
    f1_macro: float
    f1_micro: float
    n_frames: int
    predictions: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        return {"f1_macro": self.f1_macro, "f1_micro": self.f1_micro, "n_frames": self.n_frames}


def evaluate(model: FgseModel, sequences: Sequence[GraphSequence], n_classes: int, downsample_factor: int = 1,
             stride: int = 1, model_vocab: Vocabulary | None = None,
             data_vocab: Vocabulary | None = None) -> EvalResult:
    """Stream every episode, upsample to the original rate and score all frames."""
    if data_vocab is not None:
        check_vocabulary(model_vocab, data_vocab)
    preds, truth, by_episode = [], [], {}
    for k, s in enumerate(sequences):
        p = predict_episode(model, s, downsample_factor, stride)
        by_episode[s.episode or str(k)] = p
        preds.append(p)
        truth.append(s.label_matrix())
    P = np.concatenate(preds) if preds else np.zeros((0, 1), np.int64)
    Y = np.concatenate(truth) if truth else np.zeros((0, 1), np.int64)
    macro, micro = f1_scores(P, Y, n_classes)
    return EvalResult(macro, micro, int(Y.shape[0]), by_episode)


@dataclass
class CrossValResult:
    folds: list[dict]                       # per fold: {fold, subject, <mode>: summary}
    mean: dict[str, dict[str, float]]       # per readout mode
    runs: list[TrainRun] = field(default_factory=list, repr=False)


def cross_validate(ds: EpisodeDataset, model_cfg: FgseConfig, train_cfg: TrainConfig = TrainConfig(),
                   seed: int = 0, fold_ids: Sequence[int] | None = None,
                   readouts: Sequence[str] | None = None, stride: int = 1) -> CrossValResult:
    """LOSO train + evaluate; per-frame models can also be read out at the window center."""
    folds = make_folds(ds)
    if fold_ids is not None:
        folds = [folds[i] for i in fold_ids]
    readouts = list(readouts or [model_cfg.output_mode])
    rows, runs = [], []
    for fold in folds:
        run = train(ds, model_cfg, train_cfg, seed, fold)
        runs.append(run)
        test = [ds.sequences[i] for i in fold.test]
        row = {"fold": fold.index, "subject": fold.test_subject}
        for mode in readouts:
            model = run.model if mode == run.model.output_mode else run.model.with_output_mode(mode)
            row[mode] = evaluate(model, test, ds.n_classes, train_cfg.downsample, stride).summary()
        rows.append(row)
        log.info("fold %d (subject %s): %s", fold.index, fold.test_subject,
                 {m: round(row[m]["f1_macro"], 4) for m in readouts})
    mean = {m: {k: float(np.mean([r[m][k] for r in rows])) for k in ("f1_macro", "f1_micro")} for m in readouts}
    return CrossValResult(rows, mean, runs)


# ------------------------------------------------------------- experiments

def window_scaling_experiment(ds: EpisodeDataset, windows: Sequence[int], seeds: Sequence[int],
                              model_cfg: FgseConfig, train_cfg: TrainConfig = TrainConfig(),
                              fold_ids: Sequence[int] | None = None,
                              csv_path: str | Path | None = None) -> list[dict]:
    """One row per window length: F1-macro per seed and its mean over seeds."""
    table = []
    for W in windows:
        scores = []
        for seed in seeds:
            cv = cross_validate(ds, model_cfg.replace(window=W), train_cfg, seed, fold_ids)
            scores.append(cv.mean[model_cfg.output_mode]["f1_macro"])
        row = {"window": W, "f1_macro_mean": float(np.mean(scores)), "f1_macro_std": float(np.std(scores))}
        row.update({f"seed_{s}": v for s, v in zip(seeds, scores)})
        table.append(row)
    if csv_path is not None:
        write_csv(table, csv_path)
    return table


ABLATION_VARIANTS = ("majority_voting", "center", "single", "global_mean")


def ablation_experiment(ds: EpisodeDataset, seeds: Sequence[int], model_cfg: FgseConfig,
                        train_cfg: TrainConfig = TrainConfig(), fold_ids: Sequence[int] | None = None,
                        csv_path: str | Path | None = None) -> list[dict]:
    """Readout and pooling ablations; majority voting with hand pooling is the reference.

    One per-frame model per seed serves both the voting and the center readout.
    """
    base = model_cfg.replace(output_mode="per_frame", pooling="hand")
    scores: dict[str, list[float]] = {v: [] for v in ABLATION_VARIANTS}
    for seed in seeds:
        cv = cross_validate(ds, base, train_cfg, seed, fold_ids, readouts=["per_frame", "center"])
        scores["majority_voting"].append(cv.mean["per_frame"]["f1_macro"])
        scores["center"].append(cv.mean["center"]["f1_macro"])
        cv = cross_validate(ds, base.replace(output_mode="single"), train_cfg, seed, fold_ids)
        scores["single"].append(cv.mean["single"]["f1_macro"])
        cv = cross_validate(ds, base.replace(pooling="global_mean"), train_cfg, seed, fold_ids)
        scores["global_mean"].append(cv.mean["per_frame"]["f1_macro"])
    table = []
    for v in ABLATION_VARIANTS:
        row = {"variant": v, "f1_macro_mean": float(np.mean(scores[v]))}
        row.update({f"seed_{s}": x for s, x in zip(seeds, scores[v])})
        table.append(row)
    if csv_path is not None:
        write_csv(table, csv_path)
    return table


# ------------------------------------------------------------ bookkeeping

def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def version_tag() -> str:
    """Package version, plus the git commit when run from a checkout."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path: str | Path, config: dict, seed: int, ds: EpisodeDataset | None = None,
                   **extra) -> dict:
    doc = {"config": config, "seed": seed, "version": version_tag()}
    if ds is not None:
        doc["dataset_hash"] = dataset_hash(ds)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, default=str))
    return doc
