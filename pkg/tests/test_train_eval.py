import csv
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fgse.model import ConfigError, FgseConfig, FgseModel
from fgse.numcore import Tensor, ops
from fgse.scenegraph import (LEFT_HAND, RIGHT_HAND, EpisodeDataset, GraphSequence, Node, SceneGraph, Vocabulary,
                             VocabularyError)
from fgse.train_eval import (FoldError, LeakageError, SubjectGuardedLoader, TrainConfig, check_vocabulary,
                             cross_validate, evaluate, f1_scores, make_folds, train, window_loss,
                             window_scaling_experiment, window_starts, write_manifest)

from oracles import f1_oracle


def _frames(labels, start=0):
    """One graph per label; the label sits in the object's category."""
    return [SceneGraph(start + t, (Node(0, 0, LEFT_HAND), Node(1, 1, RIGHT_HAND), Node(2, 2 + int(y))), ())
            for t, y in enumerate(labels)]


def toy_dataset(n_subjects=3, per_subject=2, length=24, n_classes=2, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for subj in range(n_subjects):
        for e in range(per_subject):
            y = np.repeat(rng.integers(0, n_classes, length // 6), 6)
            seqs.append(GraphSequence(_frames(y), [list(y)] * heads, subj, 15.0, f"s{subj}e{e}"))
    vocab = Vocabulary(["left_hand", "right_hand"] + [f"obj{c}" for c in range(n_classes)],
                       [f"a{c}" for c in range(n_classes)], heads)
    return EpisodeDataset(seqs, vocab)


def tiny_cfg(ds, window=4, **kw):
    return FgseConfig(n_categories=len(ds.vocab.objects), n_classes=ds.n_classes, n_heads_out=ds.vocab.n_heads,
                      d_model=8, n_heads=2, window=window, **kw)


# ------------------------------------------------------------------- folds

def test_folds_partition():
    ds = toy_dataset(n_subjects=6, per_subject=1)
    folds = make_folds(ds)
    assert len(folds) == 6
    tests = sorted(i for f in folds for i in f.test)
    assert tests == list(range(len(ds)))
    for f in folds:
        assert not set(f.train) & set(f.test)
        assert set(f.train) | set(f.test) == set(range(len(ds)))
        assert all(ds.sequences[i].subject == f.test_subject for i in f.test)


def test_two_subjects_swap():
    a, b = make_folds(toy_dataset(n_subjects=2))
    assert a.train == b.test and a.test == b.train


def test_single_subject_rejected():
    with pytest.raises(FoldError):
        make_folds(toy_dataset(n_subjects=1))


@given(st.lists(st.integers(0, 5), min_size=2, max_size=15))
def test_fold_partition_any_subjects(subjects):
    if len(set(subjects)) < 2:
        return
    ds = toy_dataset(n_subjects=1, per_subject=len(subjects), length=6)
    for s, subj in zip(ds.sequences, subjects):
        s.subject = subj
    folds = make_folds(ds)
    assert len(folds) == len(set(subjects))
    assert sorted(i for f in folds for i in f.test) == list(range(len(subjects)))


def test_loader_blocks_held_out_subject():
    ds = toy_dataset()
    with pytest.raises(LeakageError):
        list(SubjectGuardedLoader(ds, range(len(ds)), held_out={1}))


def test_training_never_reads_test_subject():
    ds = toy_dataset()
    fold = make_folds(ds)[1]
    run = train(ds, tiny_cfg(ds), TrainConfig(epochs=1), fold=fold)
    assert run.subjects_read == [0, 2]


# ----------------------------------------------------------------- metrics

def test_f1_examples():
    assert f1_scores([0, 1, 2], [0, 1, 2], 3) == (1.0, 1.0)
    macro, micro = f1_scores([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert micro == pytest.approx(0.75) and macro == pytest.approx((0.8 + 2 / 3) / 2, abs=1e-4)
    macro, micro = f1_scores([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert micro == pytest.approx(0.5) and macro == pytest.approx(1 / 3, abs=1e-4)
    with pytest.raises(ValueError):
        f1_scores([0], [0, 1], 2)


def test_f1_excludes_absent_classes():
    assert f1_scores([0, 1], [0, 1], 10) == (1.0, 1.0)


def test_f1_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(1, 6))
        n = int(rng.integers(1, 30))
        p, t = rng.integers(0, c, n), rng.integers(0, c, n)
        got = f1_scores(p, t, c)
        assert got == pytest.approx(f1_oracle(p, t, c), abs=1e-12)


# -------------------------------------------------------------------- loss

def _zero_head(model):
    for h in range(model.config.n_heads_out):
        model.params[f"head.{h}.w"].data[:] = 0
        model.params[f"head.{h}.b"].data[:] = 0


def test_window_loss_uniform_logits():
    ds = toy_dataset(n_classes=3)
    m = FgseModel(tiny_cfg(ds))
    _zero_head(m)
    s = ds.sequences[0]
    loss = window_loss(m, s.graphs[:4], s.label_matrix()[:4])
    assert loss.item() == pytest.approx(math.log(3), abs=1e-6)


def test_window_loss_confident_logits():
    ds = toy_dataset()
    m = FgseModel(tiny_cfg(ds))
    _zero_head(m)
    y = np.array([[1, 0]] * 4)
    for h in range(2):
        m.params[f"head.{h}.b"].data[:] = np.where(np.arange(2) == y[0, h], 50.0, -50.0)
    assert window_loss(m, ds.sequences[0].graphs[:4], y).item() < 1e-6


def test_window_loss_two_frame_closed_form():
    ds = toy_dataset(heads=1)
    m = FgseModel(tiny_cfg(ds, window=2))
    _zero_head(m)
    m.params["head.0.b"].data[:] = [1.0, 0.0]
    loss = window_loss(m, ds.sequences[0].graphs[:2], [[0], [1]]).item()
    ce0 = -math.log(math.e / (math.e + 1))
    ce1 = -math.log(1 / (math.e + 1))
    assert loss == pytest.approx((ce0 + ce1) / 2, abs=1e-6)


def test_window_loss_single_mode():
    ds = toy_dataset(heads=1)
    m = FgseModel(tiny_cfg(ds, window=3, output_mode="single"), seed=4)
    s = ds.sequences[0]
    y = [[0], [0], [1]]
    logits = m.batch_logits(s.graphs[:3], np.arange(3)[None]).data[0, 0, 0]
    expect = -(logits[1] - np.log(np.exp(logits).sum()))
    assert window_loss(m, s.graphs[:3], y).item() == pytest.approx(expect, abs=1e-5)


def test_window_loss_errors():
    ds = toy_dataset()
    m = FgseModel(tiny_cfg(ds))
    s = ds.sequences[0]
    with pytest.raises(IndexError):
        window_loss(m, s.graphs[:4], [[0, 5]] * 4)
    with pytest.raises(ValueError):
        window_loss(m, s.graphs[:3], s.label_matrix()[:3])


# ---------------------------------------------------------------- training

def test_window_starts():
    assert window_starts(10, 4, 2) == [0, 2, 4, 6]
    assert window_starts(11, 4, 2) == [0, 2, 4, 6, 7]
    assert window_starts(3, 4, 2) == []


def test_loss_decreases_on_separable_set():
    ds = toy_dataset(n_subjects=2, per_subject=3)
    curves = [train(ds, tiny_cfg(ds), TrainConfig(epochs=5, batch_size=8, lr=3e-3), seed=s).losses
              for s in range(3)]
    mean = np.mean(curves, axis=0)
    assert all(b < a for a, b in zip(mean, mean[1:]))


def test_training_is_deterministic():
    ds = toy_dataset()
    a = train(ds, tiny_cfg(ds), TrainConfig(epochs=2), seed=3)
    b = train(ds, tiny_cfg(ds), TrainConfig(epochs=2), seed=3)
    assert a.losses == b.losses
    assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)


def test_mirroring_doubles_windows():
    ds = toy_dataset()
    on = train(ds, tiny_cfg(ds), TrainConfig(epochs=1, mirror=True))
    off = train(ds, tiny_cfg(ds), TrainConfig(epochs=1, mirror=False))
    assert on.windows_per_epoch[0] == 2 * off.windows_per_epoch[0]
    assert len(on.losses) == len(on.f1_macro) == len(on.f1_micro)


def test_window_longer_than_data_rejected():
    ds = toy_dataset(length=12)
    with pytest.raises(ConfigError):
        train(ds, tiny_cfg(ds, window=5), TrainConfig(epochs=1, downsample=3))


def test_train_config_keys():
    assert TrainConfig.from_dict({"epochs": 3}).epochs == 3
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epoch": 3})
    with pytest.raises(ConfigError):
        TrainConfig(downsample=0)


def test_patience_stops_early():
    ds = toy_dataset()
    run = train(ds, tiny_cfg(ds), TrainConfig(epochs=30, lr=1e-9, patience=2))
    assert len(run.losses) < 30


def test_checkpoint_written(tmp_path):
    ds = toy_dataset()
    run = train(ds, tiny_cfg(ds), TrainConfig(epochs=1), checkpoint=tmp_path / "m.json")
    model, vocab, hyper = FgseModel.load(run.checkpoint)
    assert vocab.labels == ds.vocab.labels and hyper["train"]["epochs"] == 1


# -------------------------------------------------------------- evaluation

class LabelReader:
    """Predicts the label stored in each frame's object category."""

    def __init__(self, window, n_classes, heads=2, mode="per_frame"):
        self.window = window
        self.output_mode = mode
        self.n_classes = n_classes
        self.config = SimpleNamespace(n_heads_out=heads, n_categories=2 + n_classes)

    def embed_frame(self, g):
        return np.eye(self.n_classes)[g.nodes[2].category - 2]

    def predict_tokens(self, tokens):
        probs = np.repeat(tokens[:, None, :], self.config.n_heads_out, axis=1)
        return probs[self.window // 2: self.window // 2 + 1] if self.output_mode == "center" else probs


def test_oracle_model_scores_perfectly():
    ds = toy_dataset(n_classes=3)
    for D in (1, 3):
        res = evaluate(LabelReader(4, 3), ds.sequences, 3, downsample_factor=D)
        if D == 1:
            assert (res.f1_macro, res.f1_micro) == (1.0, 1.0)
        assert res.n_frames == sum(len(s) for s in ds.sequences)
    assert evaluate(LabelReader(5, 3, mode="center"), ds.sequences, 3).f1_macro == 1.0


def test_constant_episode_d1_equals_d3():
    ds = toy_dataset(n_classes=2)
    y = [1] * 31
    seq = GraphSequence(_frames(y), [y, y], 0, 15.0, "const")
    m = FgseModel(tiny_cfg(ds, window=3), seed=1)
    a = evaluate(m, [seq], 2, downsample_factor=1)
    b = evaluate(m, [seq], 2, downsample_factor=3)
    assert (a.f1_macro, a.f1_micro) == (b.f1_macro, b.f1_micro)
    assert np.array_equal(a.predictions["const"], b.predictions["const"])


def test_vocabulary_mismatch_rejected():
    ds = toy_dataset()
    other = Vocabulary(list(ds.vocab.objects), ["x", "y"], 2)
    check_vocabulary(ds.vocab, ds.vocab)
    with pytest.raises(VocabularyError):
        check_vocabulary(other, ds.vocab)
    with pytest.raises(VocabularyError):
        evaluate(LabelReader(4, 2), ds.sequences, 2, model_vocab=other, data_vocab=ds.vocab)


def test_cross_validation_mean_and_experiments(tmp_path):
    ds = toy_dataset()
    cfg = tiny_cfg(ds)
    cv = cross_validate(ds, cfg, TrainConfig(epochs=1), seed=0, readouts=["per_frame", "center"])
    assert len(cv.folds) == 3
    for mode in ("per_frame", "center"):
        mean = sum(f[mode]["f1_macro"] for f in cv.folds) / 3
        assert abs(cv.mean[mode]["f1_macro"] - mean) < 1e-9
    table = window_scaling_experiment(ds, [2, 4], [0], cfg, TrainConfig(epochs=1), fold_ids=[0],
                                      csv_path=tmp_path / "w.csv")
    again = window_scaling_experiment(ds, [2, 4], [0], cfg, TrainConfig(epochs=1), fold_ids=[0])
    assert len(table) == 2 and table == again
    with open(tmp_path / "w.csv") as fh:
        assert [int(r["window"]) for r in csv.DictReader(fh)] == [2, 4]


def test_manifest(tmp_path):
    ds = toy_dataset()
    doc = write_manifest(tmp_path / "m.json", {"a": 1}, 7, ds)
    back = json.loads((tmp_path / "m.json").read_text())
    assert back["seed"] == 7 and back["dataset_hash"] == doc["dataset_hash"] and "version" in back
