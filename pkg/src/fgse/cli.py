"""Command line front end: ``fgse <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import socket
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from . import __version__
from .model import ConfigError, FgseConfig, FgseModel
from .scenegraph import (FORMATS, DatasetFormatError, EpisodeDataset, GraphError, Thresholds, Vocabulary,
                         VocabularyError, dataset_hash, load_dataset, vocab_path, write_jsonl)
from .scenegraph.io import graph_from_record, iter_jsonl_records
from .stream import StreamEngine, structural_delay
from .train_eval import (TrainConfig, ablation_experiment, check_vocabulary, evaluate, make_folds, train,
                         window_scaling_experiment, write_csv, write_manifest)

log = logging.getLogger("fgse")

POOLING_FLAGS = {"hand": "hand", "mean": "global_mean"}
OUTPUT_FLAGS = {"frame": "per_frame", "single": "single", "center": "center"}
DATA_SIZED = ("n_categories", "n_classes", "n_heads_out")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class InferConfig:
    stride: int = 1
    provisional: bool = False


def _known(cls) -> set[str]:
    return {f.name for f in fields(cls)}


@dataclass
class RunConfig:
    """Merged configuration; sections mirror the JSON file layout."""

    model: dict = field(default_factory=lambda: {"window": 30})
    thresholds: Thresholds = field(default_factory=Thresholds)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(downsample=3))
    inference: InferConfig = field(default_factory=InferConfig)
    paths: dict = field(default_factory=dict)
    seed: int = 0

    PATH_KEYS = ("data", "format", "vocab", "out")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"model", "thresholds", "training", "inference", "paths", "seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        model = dict(d.get("model", {}))
        bad = set(model) - (_known(FgseConfig) - set(DATA_SIZED))
        if bad:
            raise ConfigError(f"unknown model keys: {sorted(bad)}")
        cfg.model.update(model)
        if "thresholds" in d:
            cfg.thresholds = Thresholds.from_dict(d["thresholds"])
        if "training" in d:
            cfg.training = TrainConfig.from_dict({**asdict(cfg.training), **d["training"]})
        if "inference" in d:
            bad = set(d["inference"]) - _known(InferConfig)
            if bad:
                raise ConfigError(f"unknown inference keys: {sorted(bad)}")
            cfg.inference = InferConfig(**d["inference"])
        paths = dict(d.get("paths", {}))
        bad = set(paths) - set(cls.PATH_KEYS)
        if bad:
            raise ConfigError(f"unknown path keys: {sorted(bad)}")
        cfg.paths.update(paths)
        cfg.seed = int(d.get("seed", 0))
        return cfg

    def to_dict(self) -> dict:
        return {"model": dict(self.model), "thresholds": asdict(self.thresholds),
                "training": asdict(self.training), "inference": asdict(self.inference),
                "paths": dict(self.paths), "seed": self.seed}

    def model_config(self, vocab: Vocabulary) -> FgseConfig:
        return FgseConfig(n_categories=len(vocab.objects), n_classes=len(vocab.labels),
                          n_heads_out=vocab.n_heads, **self.model)


def load_run_config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    try:
        cfg = RunConfig.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    # flags override file values
    if getattr(args, "window", None) is not None:
        cfg.model["window"] = args.window
    if getattr(args, "pooling", None) is not None:
        cfg.model["pooling"] = POOLING_FLAGS[args.pooling]
    if getattr(args, "output_mode", None) is not None:
        cfg.model["output_mode"] = OUTPUT_FLAGS[args.output_mode]
    train_over = {}
    if getattr(args, "downsample", None) is not None:
        train_over["downsample"] = args.downsample
    if getattr(args, "epochs", None) is not None:
        train_over["epochs"] = args.epochs
    if getattr(args, "no_mirror", False):
        train_over["mirror"] = False
    if train_over:
        cfg.training = TrainConfig.from_dict({**asdict(cfg.training), **train_over})
    if getattr(args, "stride", None) is not None:
        cfg.inference = InferConfig(args.stride, cfg.inference.provisional)
    if getattr(args, "provisional", False):
        cfg.inference = InferConfig(cfg.inference.stride, True)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key in ("data", "format", "out"):
        if getattr(args, key, None) is not None:
            cfg.paths[key] = str(getattr(args, key))
    return cfg


def _dataset(cfg: RunConfig, path=None) -> EpisodeDataset:
    path = path or cfg.paths.get("data")
    if not path:
        raise UsageError("no dataset given (positional argument or paths.data in the config)")
    fmt = cfg.paths.get("format", "fgse-jsonl")
    vocab = None
    if cfg.paths.get("vocab"):
        vocab = Vocabulary.from_json(json.loads(Path(cfg.paths["vocab"]).read_text()))
    return load_dataset(path, fmt, vocab, cfg.thresholds)


def _emit(obj, out: TextIO | None = None) -> None:
    out = out or sys.stdout
    out.write(json.dumps(obj) + "\n")
    out.flush()


# ------------------------------------------------------------- subcommands

def cmd_convert(args) -> int:
    thresholds = Thresholds()
    if args.config:
        thresholds = load_run_config(args).thresholds
    vocab = None
    if args.vocab:
        vocab = Vocabulary.from_json(json.loads(Path(args.vocab).read_text()))
    ds = load_dataset(args.input, args.format, vocab, thresholds)
    write_jsonl(ds, args.output)
    out = Path(args.output)
    write_manifest(out.with_name(out.name.removesuffix(".jsonl") + ".manifest.json"),
                   {"thresholds": asdict(thresholds), "format": args.format}, 0, ds,
                   command="convert", input=str(args.input))
    print(f"wrote {len(ds)} episodes, {sum(len(s) for s in ds.sequences)} frames to {args.output}")
    print(f"vocabulary: {vocab_path(args.output)}")
    print(f"objects ({len(ds.vocab.objects)}): {', '.join(ds.vocab.objects)}")
    print(f"classes ({len(ds.vocab.labels)}, {ds.vocab.n_heads} head(s)): {', '.join(ds.vocab.labels)}")
    if ds.vocab.label_pairs:
        print("merged label pairs:")
        for k, (action, obj) in enumerate(ds.vocab.label_pairs):
            print(f"  {k:3d}  {action:<16s} {obj}")
    return 0


def cmd_synth(args) -> int:
    from .synth import (DEFAULT_NOISE, HARD_NOISE, ScenarioScript, generate_benchmark_suite, generate_episode,
                        synth_vocabulary, write_suite)
    noise = args.noise if args.noise is not None else (HARD_NOISE if args.hard else DEFAULT_NOISE)
    if args.script:
        script = ScenarioScript.from_dict(json.loads(Path(args.script).read_text()))
        if args.noise is not None or args.hard:
            script.noise = noise
        ds = EpisodeDataset([generate_episode(script)[1]], synth_vocabulary())
        manifest = {"script": str(args.script), "noise": script.noise}
    else:
        scale = 2.0 if args.long else 1.0
        ds = generate_benchmark_suite(args.subjects, args.episodes, args.seed, noise=noise, duration_scale=scale)
        manifest = {"subjects": args.subjects, "episodes_per_subject": args.episodes, "seed": args.seed,
                    "noise": noise, "duration_scale": scale, "version": __version__}
    out = write_suite(ds, args.output, manifest)
    print(f"wrote {len(ds)} episodes ({sum(len(s) for s in ds.sequences)} frames) to {args.output}; "
          f"manifest {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    ds = _dataset(cfg, args.data)
    model_cfg = cfg.model_config(ds.vocab)
    if args.fold is None:
        folds = [None]
    elif args.fold == "all":
        folds = make_folds(ds)
    else:
        all_folds = make_folds(ds)
        try:
            k = int(args.fold)
        except ValueError:
            raise UsageError(f"--fold takes an index or 'all', got {args.fold!r}") from None
        if not 0 <= k < len(all_folds):
            raise UsageError(f"fold {k} out of range; dataset has {len(all_folds)} folds")
        folds = [all_folds[k]]
    out = Path(cfg.paths.get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for fold in folds:
        name = "model" if fold is None else f"fold{fold.index}"
        ckpt = out / f"{name}.ckpt.json"
        run = train(ds, model_cfg, cfg.training, cfg.seed, fold, checkpoint=ckpt)
        rows = [{"epoch": e, "loss": l, "f1_macro": a, "f1_micro": b}
                for e, (l, a, b) in enumerate(zip(run.losses, run.f1_macro, run.f1_micro))]
        write_csv(rows, out / f"{name}.metrics.csv")
        summary = run.summary()
        summary["test_subject"] = None if fold is None else fold.test_subject
        summaries.append(summary)
        log.info("%s: final loss %.4f in %.1fs -> %s", name, run.losses[-1] if run.losses else float("nan"),
                 run.seconds, ckpt)
        print(f"{name}: loss {run.losses[-1] if run.losses else float('nan'):.4f}, checkpoint {ckpt}")
    (out / "train_metrics.json").write_text(json.dumps(summaries, indent=2))
    write_manifest(out / "manifest.json", cfg.to_dict(), cfg.seed, ds, command="train", fold=args.fold)
    return 0


def _load_model(path) -> tuple[FgseModel, Vocabulary | None, dict]:
    try:
        return FgseModel.load(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {path} not found") from None


def _with_mode(model: FgseModel, flag: str | None) -> FgseModel:
    if flag is None or OUTPUT_FLAGS[flag] == model.output_mode:
        return model
    return model.with_output_mode(OUTPUT_FLAGS[flag])


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    ds = _dataset(cfg, args.data)
    folds = make_folds(ds) if len(ds.subjects) > 1 else None
    rows = []
    for ckpt in args.checkpoints:
        model, vocab, hyper = _load_model(ckpt)
        check_vocabulary(vocab, ds.vocab)
        model = _with_mode(model, args.output_mode)
        D = args.downsample if args.downsample is not None else hyper.get("train", {}).get("downsample", 1)
        fold_id = int(args.fold) if args.fold is not None else hyper.get("fold")
        if fold_id is None or folds is None:
            test = list(ds.sequences)
            subject = None
        else:
            if not 0 <= fold_id < len(folds):
                raise UsageError(f"fold {fold_id} out of range; dataset has {len(folds)} folds")
            test = [ds.sequences[i] for i in folds[fold_id].test]
            subject = folds[fold_id].test_subject
        res = evaluate(model, test, ds.n_classes, D, cfg.inference.stride)
        row = {"checkpoint": str(ckpt), "fold": fold_id, "subject": subject, "downsample": D,
               "output_mode": model.output_mode, **res.summary()}
        rows.append(row)
        _emit(row)
        if args.predictions:
            pred_path = Path(args.predictions)
            with pred_path.open("a") as fh:
                for ep, p in res.predictions.items():
                    fh.write(json.dumps({"checkpoint": str(ckpt), "episode": ep, "labels": p.tolist()}) + "\n")
    mean = {"mean_f1_macro": float(np.mean([r["f1_macro"] for r in rows])),
            "mean_f1_micro": float(np.mean([r["f1_micro"] for r in rows])), "folds": len(rows)}
    _emit(mean)
    if cfg.paths.get("out"):
        out = Path(cfg.paths["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / "eval.csv")
        (out / "eval.json").write_text(json.dumps({"folds": rows, **mean}, indent=2))
        write_manifest(out / "eval_manifest.json", cfg.to_dict(), cfg.seed, ds, command="eval",
                       checkpoints=[str(c) for c in args.checkpoints])
    return 0


@contextlib.contextmanager
def open_source(source: str) -> Iterator[TextIO]:
    """File path, ``-`` for stdin, ``tcp://host:port`` or ``unix:///path``."""
    if source == "-":
        yield sys.stdin
        return
    if source.startswith("tcp://"):
        host, _, port = source[len("tcp://"):].rpartition(":")
        with socket.create_connection((host or "localhost", int(port))) as sock, sock.makefile("r") as fh:
            yield fh
        return
    if source.startswith("unix://"):
        with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
            sock.connect(source[len("unix://"):])
            with sock.makefile("r") as fh:
                yield fh
        return
    with open(source) as fh:
        yield fh


class _StreamWriter:
    """Runs the engine over records, one JSON line per frame and head."""

    def __init__(self, model: FgseModel, stride: int, downsample: int, provisional: bool, out: TextIO):
        self.engine = StreamEngine(model, stride=stride)
        self.D = downsample
        self.provisional = provisional
        self.out = out
        self.reset()

    def reset(self) -> None:
        self.t0 = None
        self.followers: dict[int, list[int]] = {}   # kept frame -> skipped frames it stands for
        self.last_kept = None

    def _write(self, preds, final=True) -> None:
        for p in preds:
            for t in [p.time_index] + (self.followers.pop(p.time_index, []) if final else []):
                for rec in p.to_records():
                    rec["t"] = t
                    if not final:
                        rec["provisional"] = True
                    self.out.write(json.dumps(rec) + "\n")
        self.out.flush()

    def push(self, g) -> None:
        if self.t0 is None:
            self.t0 = g.time_index
        if (g.time_index - self.t0) % self.D != 0:
            if self.last_kept is not None:
                self.followers.setdefault(self.last_kept, []).append(g.time_index)
            return
        self.last_kept = g.time_index
        self._write(self.engine.push(g))
        if self.provisional:
            self._write(self.engine.provisional(), final=False)

    def flush(self) -> None:
        self._write(self.engine.flush())
        self.reset()


def cmd_stream(args) -> int:
    cfg = load_run_config(args)
    model, vocab, hyper = _load_model(args.checkpoint)
    model = _with_mode(model, args.output_mode)
    D = args.downsample if args.downsample is not None else hyper.get("train", {}).get("downsample", 1)
    if args.source not in ("-",) and "://" not in args.source and vocab is not None:
        side = vocab_path(args.source)
        if side.exists():
            check_vocabulary(vocab, Vocabulary.from_json(json.loads(side.read_text())))
    writer = _StreamWriter(model, cfg.inference.stride, D, cfg.inference.provisional, sys.stdout)
    episode, last_t, frames = None, None, 0
    with open_source(args.source) as fh:
        for lineno, rec in iter_jsonl_records(fh, args.source):
            try:
                g = graph_from_record(rec)
            except (KeyError, TypeError, ValueError, GraphError) as exc:
                raise DatasetFormatError(args.source, f"malformed record ({exc})", lineno) from None
            ep = rec.get("episode")
            # a new episode name, or time running backwards, ends the current stream
            if last_t is not None and (ep != episode or g.time_index <= last_t):
                writer.flush()
            episode, last_t = ep, g.time_index
            writer.push(g)
            frames += 1
    writer.flush()
    if args.manifest:
        write_manifest(args.manifest, cfg.to_dict(), cfg.seed, None, command="stream",
                       checkpoint=str(args.checkpoint), source=args.source, frames=frames, downsample=D)
    return 0


def cmd_bench(args) -> int:
    cfg = load_run_config(args)
    ds = _dataset(cfg, args.data)
    if args.checkpoint:
        model, vocab, hyper = _load_model(args.checkpoint)
        check_vocabulary(vocab, ds.vocab)
    else:
        model = FgseModel(cfg.model_config(ds.vocab), seed=cfg.seed)
    model = _with_mode(model, args.output_mode)
    D = cfg.training.downsample
    from .scenegraph import downsample
    seqs = [downsample(s, D) for s in ds.sequences]
    fps = seqs[0].fps
    engine = StreamEngine(model, fps=fps, stride=cfg.inference.stride)
    budget = args.frames
    n, elapsed = 0, 0.0
    for s in seqs:
        for g in s.graphs:
            t0 = time.perf_counter()
            engine.push(g)
            elapsed += time.perf_counter() - t0
            n += 1
            if budget and n >= budget:
                break
        t0 = time.perf_counter()
        engine.flush()
        elapsed += time.perf_counter() - t0
        if budget and n >= budget:
            break
    report = {"graphs": n, "seconds": elapsed, "graphs_per_second": n / elapsed if elapsed else float("inf"),
              "window": model.window, "downsample": D, "fps": fps,
              "structural_delay_s": structural_delay(model.window, fps),
              "threads": os.environ.get("FGSE_THREADS", "unset")}
    print(f"throughput: {report['graphs_per_second']:.1f} graphs/s over {n} graphs")
    print(f"structural delay: W/fps = {model.window}/{fps:g} = {report['structural_delay_s']:.3f} s")
    _emit(report)
    if args.manifest:
        write_manifest(args.manifest, cfg.to_dict(), cfg.seed, ds, command="bench",
                       checkpoint=args.checkpoint, report=report)
    return 0


def cmd_scaling(args) -> int:
    cfg = load_run_config(args)
    ds = _dataset(cfg, args.data)
    model_cfg = cfg.model_config(ds.vocab)
    folds = [int(f) for f in args.folds] if args.folds else None
    table = window_scaling_experiment(ds, args.windows, args.seeds, model_cfg, cfg.training, folds, args.output)
    for row in table:
        _emit(row)
    write_manifest(Path(args.output).with_suffix(".manifest.json"), cfg.to_dict(), cfg.seed, ds,
                   command="scaling", windows=args.windows, seeds=args.seeds, folds=folds)
    return 0


def cmd_ablation(args) -> int:
    cfg = load_run_config(args)
    ds = _dataset(cfg, args.data)
    model_cfg = cfg.model_config(ds.vocab)
    folds = [int(f) for f in args.folds] if args.folds else None
    table = ablation_experiment(ds, args.seeds, model_cfg, cfg.training, folds, args.output)
    for row in table:
        _emit(row)
    write_manifest(Path(args.output).with_suffix(".manifest.json"), cfg.to_dict(), cfg.seed, ds,
                   command="ablation", seeds=args.seeds, folds=folds)
    return 0


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser, model_flags: bool = True) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--format", choices=FORMATS, help="dataset format (default fgse-jsonl)")
    p.add_argument("--seed", type=int)
    p.add_argument("-D", "--downsample", type=int, help="keep every D-th frame")
    p.add_argument("--stride", type=int, help="inference window stride")
    if model_flags:
        p.add_argument("-W", "--window", type=int, help="window length in graphs")
        p.add_argument("--pooling", choices=sorted(POOLING_FLAGS))
    p.add_argument("--output-mode", choices=list(OUTPUT_FLAGS))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fgse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fgse {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a dataset to fgse-jsonl")
    p.add_argument("input")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--vocab", help="fixed vocabulary JSON")
    p.add_argument("--config")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate synthetic episodes")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--episodes", type=int, default=10, help="episodes per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, help="center jitter in metres")
    p.add_argument("--hard", action="store_true", help="2 cm jitter")
    p.add_argument("--long", action="store_true", help="double the still-phase durations")
    p.add_argument("--script", help="single scenario script (JSON) instead of a suite")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model or one per LOSO fold")
    p.add_argument("data", nargs="?")
    _common(p)
    p.add_argument("--fold", help="fold index or 'all'; omitted trains on every subject")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-mirror", action="store_true")
    p.add_argument("-o", "--out", help="output directory (default runs/)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on their test folds")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--data", required=False)
    _common(p, model_flags=False)
    p.add_argument("--fold", help="override the fold stored in the checkpoint")
    p.add_argument("--predictions", help="append per-episode predictions (jsonl)")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="stream predictions for fgse-jsonl input")
    p.add_argument("checkpoint")
    p.add_argument("source", nargs="?", default="-", help="file, '-', tcp://host:port or unix:///path")
    _common(p, model_flags=False)
    p.add_argument("--provisional", action="store_true", help="also print current labels of pending frames")
    p.add_argument("--manifest", help="write a run manifest here")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="streaming throughput and structural delay")
    p.add_argument("data", nargs="?")
    p.add_argument("--checkpoint", help="default: a freshly initialised model of the run config")
    _common(p)
    p.add_argument("--frames", type=int, default=0, help="stop after this many graphs (0 = all)")
    p.add_argument("--manifest", help="write a run manifest here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scaling", help="window-length sweep, CSV table")
    p.add_argument("data", nargs="?")
    _common(p)
    p.add_argument("--windows", type=int, nargs="+", default=[10, 20, 30])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--folds", nargs="+", help="fold subset (default all)")
    p.add_argument("--epochs", type=int)
    p.add_argument("-o", "--output", default="scaling.csv")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("ablation", help="readout and pooling ablations, CSV table")
    p.add_argument("data", nargs="?")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--folds", nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("-o", "--output", default="ablation.csv")
    p.set_defaults(func=cmd_ablation)
    return ap


def _thread_limit():
    n = os.environ.get("FGSE_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise UsageError(f"FGSE_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=limit)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fgse {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, VocabularyError, GraphError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"fgse {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
