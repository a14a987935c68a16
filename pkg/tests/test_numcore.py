import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fgse.numcore import (FORMAT_TAG, Adam, AdamState, CheckpointError, ShapeError, Tape, Tensor, adam_step,
                          grad_check, load_checkpoint, ops, save_checkpoint)
from fgse.numcore.gradcheck import grad_check_report
from fgse.numcore.ops import SELU_ALPHA, SELU_SCALE, Segments


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float32), requires_grad=grad)


# ------------------------------------------------------------------- tensor

def test_tensor_shape_matches_data():
    x = Tensor(np.zeros((2, 3)))
    assert x.shape == (2, 3) and x.size == 6 and x.data.dtype == np.float32


def test_no_tape_records_nothing():
    a = t([[1.0, 2.0]], grad=True)
    out = ops.add(a, a)
    assert np.allclose(out.data, [[2, 4]])
    with Tape() as tape:
        ops.add(a, a)
    assert len(tape) == 1


def test_tape_is_topologically_ordered():
    a, b = t([1.0, 2.0], True), t([3.0, 4.0], True)
    with Tape() as tape:
        c = ops.mul(a, b)
        d = ops.add(c, a)
        ops.sum(d)
    seen = {id(a), id(b)}
    for node in tape.nodes:
        for inp in node.inputs:
            assert id(inp) in seen
        seen.add(id(node.output))


def test_backward_accumulates_shared_inputs():
    a = t([1.0, 2.0, 3.0], True)
    with Tape() as tape:
        loss = ops.sum(ops.add(ops.mul(a, a), a))
    tape.backward(loss)
    assert np.allclose(a.grad, 2 * a.data + 1)


def test_grad_shape_equals_data_shape():
    a = t(np.ones((3, 4)), True)
    w = t(np.ones((4, 2)), True)
    with Tape() as tape:
        loss = ops.sum(ops.matmul(a, w))
    tape.backward(loss)
    assert a.grad.shape == a.shape and w.grad.shape == w.shape


# ------------------------------------------------------------------- matmul

def test_matmul_identity():
    out = ops.matmul(t(np.eye(2)), t([[1, 2], [3, 4]]))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projector():
    out = ops.matmul(t([[1, 0], [0, 0]]), t([[5], [7]]))
    assert np.array_equal(out.data, [[5], [0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        ops.matmul(t(np.ones((3, 4))), t(np.ones((3, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_gradient(seed):
    r = np.random.default_rng(seed)
    a, b = t(r.normal(size=(3, 4))), t(r.normal(size=(4, 2)))
    assert grad_check(lambda: ops.sum(ops.mul(ops.matmul(a, b), ops.matmul(a, b))), [a, b]) < 1e-3


# --------------------------------------------------------------------- selu

def test_selu_values():
    out = ops.selu(t([0.0, 1.0, -20.0])).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0507, abs=1e-4)
    assert out[2] == pytest.approx(-1.7581, abs=1e-4)
    assert SELU_SCALE * SELU_ALPHA == pytest.approx(1.7581, abs=1e-4)


# --------------------------------------------------------------- layer norm

def test_layer_norm_constant_row_is_zero():
    out = ops.layer_norm(t([[5, 5, 5, 5]]), t(np.ones(4)), t(np.zeros(4))).data
    assert np.allclose(out, 0.0)


def test_layer_norm_two_values():
    out = ops.layer_norm(t([[1, -1]]), t(np.ones(2)), t(np.zeros(2)), eps=1e-12).data
    assert np.allclose(out, [[1, -1]], atol=1e-5)


def test_layer_norm_statistics(rng):
    x = t(rng.normal(3.0, 2.0, size=(4, 8)))
    out = ops.layer_norm(x, t(np.ones(8)), t(np.zeros(8))).data.astype(np.float64)
    assert np.allclose(out.mean(-1), 0.0, atol=1e-4)
    assert np.allclose(out.var(-1), 1.0, atol=1e-4)


def test_layer_norm_requires_positive_eps():
    with pytest.raises(ValueError):
        ops.layer_norm(t([[1.0]]), t([1.0]), t([0.0]), eps=0.0)


# ------------------------------------------------------------------ softmax

def test_softmax_uniform_and_stable():
    assert np.allclose(ops.softmax(t([0, 0, 0])).data, 1 / 3)
    out = ops.softmax(t([1000.0, 0.0])).data
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-1e4, 1e4, width=32)))
def test_softmax_rows_sum_to_one(x):
    out = ops.softmax(Tensor(x)).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(-1), 1.0, atol=1e-6)


# ------------------------------------------------------------ cross entropy

def test_cross_entropy_values():
    assert ops.cross_entropy(t([0, 0]), 0).item() == pytest.approx(math.log(2), abs=1e-6)
    assert ops.cross_entropy(t([10, -10]), 0).item() == pytest.approx(0.0, abs=1e-6)
    assert ops.cross_entropy(t([10, -10]), 1).item() == pytest.approx(20.0, abs=1e-4)


def test_cross_entropy_out_of_range():
    with pytest.raises(IndexError):
        ops.cross_entropy(t([0, 0]), 2)
    with pytest.raises(IndexError):
        ops.cross_entropy(t([0, 0]), -1)


def test_cross_entropy_mean_over_positions():
    logits = t([[0.0, 0.0], [10.0, -10.0]])
    assert ops.cross_entropy(logits, [0, 1]).item() == pytest.approx((math.log(2) + 20.0) / 2, abs=1e-4)


# -------------------------------------------------------- every op, 5 seeds

def _op_cases(r):
    x = t(r.normal(size=(3, 4)))
    y = t(r.normal(size=(3, 4)))
    pos = t(r.uniform(0.5, 2.0, size=(3, 4)))
    w = t(r.normal(size=(4, 5)))
    b = t(r.normal(size=(5,)))
    g, bb = t(r.uniform(0.5, 1.5, size=(4,))), t(r.normal(size=(4,)))
    ids = np.array([0, 2, 2, 1, 0, 2])
    seg = Segments(ids, 4)
    e = t(r.normal(size=(6, 3)))
    wsum = t(r.normal(size=(3, 4)))  # fixed weights make sums non-trivial
    w3 = t(r.normal(size=(3, 4)))
    w6 = t(r.normal(size=(6, 3)))
    return {
        "add": (lambda: ops.sum(ops.mul(ops.add(x, y), wsum)), [x, y]),
        "add_broadcast": (lambda: ops.sum(ops.mul(ops.add(x, bb), wsum)), [x, bb]),
        "sub": (lambda: ops.sum(ops.mul(ops.sub(x, y), wsum)), [x, y]),
        "mul": (lambda: ops.sum(ops.mul(x, y)), [x, y]),
        "div": (lambda: ops.sum(ops.div(x, pos)), [x, pos]),
        "exp": (lambda: ops.sum(ops.exp(x)), [x]),
        "log": (lambda: ops.sum(ops.log(pos)), [pos]),
        "selu": (lambda: ops.sum(ops.mul(ops.selu(x), wsum)), [x]),
        "matmul": (lambda: ops.sum(ops.selu(ops.matmul(x, w))), [x, w]),
        "linear": (lambda: ops.sum(ops.selu(ops.linear(x, w, b))), [x, w, b]),
        "mean": (lambda: ops.sum(ops.mean(ops.mul(x, y), axis=1)), [x, y]),
        "softmax": (lambda: ops.sum(ops.mul(ops.softmax(x), wsum)), [x]),
        "log_softmax": (lambda: ops.sum(ops.mul(ops.log_softmax(x), wsum)), [x]),
        "cross_entropy": (lambda: ops.cross_entropy(x, [0, 3, 1]), [x]),
        "layer_norm": (lambda: ops.sum(ops.mul(ops.layer_norm(x, g, bb), wsum)), [x, g, bb]),
        "reshape_transpose": (lambda: ops.sum(ops.mul(ops.transpose(ops.reshape(x, (4, 3))), wsum)), [x]),
        "concat_stack": (lambda: ops.sum(ops.mul(ops.concat([x, y], axis=1),
                                                 ops.concat([wsum, wsum], axis=1))) +
                         ops.sum(ops.mul(ops.stack([x, y]), ops.stack([wsum, y]))), [x, y]),
        "index_select": (lambda: ops.sum(ops.mul(ops.index_select(x, [2, 0, 2]), w3)), [x]),
        "segment_sum": (lambda: ops.sum(ops.mul(ops.segment_sum(e, seg), t(np.arange(12.0).reshape(4, 3)))), [e]),
        "segment_softmax": (lambda: ops.sum(ops.mul(ops.segment_softmax(e, seg), w6)), [e]),
    }


OP_NAMES = sorted(_op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OP_NAMES)
def test_every_op_passes_grad_check(name):
    for seed in range(5):
        f, inputs = _op_cases(np.random.default_rng(seed))[name]
        err = grad_check(f, inputs, h=1e-3)
        assert err < 1e-3, (name, seed, err)


def test_grad_check_square():
    x = t([3.0])
    report = grad_check_report(lambda: ops.mul(x, x), [x])
    assert report.max_rel_error < 1e-4
    from fgse.numcore.gradcheck import numeric_gradients, tape_gradients
    assert tape_gradients(lambda: ops.mul(x, x), [x])[0][0] == pytest.approx(6.0)
    num, _ = numeric_gradients(lambda: ops.mul(x, x), [x])
    assert num[0][0] == pytest.approx(6.0, abs=1e-2)


def test_grad_check_flags_a_wrong_gradient():
    from fgse.numcore.tensor import record
    x = t([1.0, 2.0])

    def bad_square(a):
        return record("bad", (a,), a.data ** 2, lambda g: (g * a.data,))   # missing factor 2

    assert grad_check(lambda: ops.sum(bad_square(x)), [x]) > 0.1


# --------------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0], dtype=np.float32)]
    state = AdamState()
    adam_step(p, [np.zeros(2, np.float32)], state)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = [np.array([0.5], dtype=np.float32)]
    adam_step(p, [np.ones(1, np.float32)], AdamState(), lr=1e-3)
    assert p[0][0] == pytest.approx(0.5 - 1e-3, abs=1e-7)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2, np.float32)], [np.zeros(3, np.float32)], AdamState())


def test_adam_deterministic():
    def run():
        r = np.random.default_rng(5)
        w = Tensor(r.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(r.normal(size=(6, 4)))
        opt = Adam([w], lr=1e-2)
        for _ in range(10):
            with Tape() as tape:
                loss = ops.cross_entropy(ops.matmul(x, w), [0, 1, 2, 0, 1, 2])
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
        return w.data.copy()
    assert np.array_equal(run(), run())


# --------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path, rng):
    params = {"a": rng.normal(size=(3, 2)).astype(np.float32), "b": np.arange(4, dtype=np.float32)}
    save_checkpoint(tmp_path / "c.json", params, {"note": "x"})
    loaded, hyper = load_checkpoint(tmp_path / "c.json")
    assert hyper["note"] == "x"
    for k in params:
        assert np.array_equal(loaded[k], params[k]) and loaded[k].dtype == np.float32


def test_checkpoint_rejects_other_format(tmp_path):
    import json
    (tmp_path / "c.json").write_text(json.dumps({"format": "other", "params": {}, "hyper": {}}))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.json")
    assert FORMAT_TAG == "fgse-ckpt-v1"
