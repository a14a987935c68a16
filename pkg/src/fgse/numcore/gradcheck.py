"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ops import KinkLog
from .tensor import Tape, Tensor, precision


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    kink_skipped: int


def tape_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def _eval(f) -> tuple[float, bytes]:
    with KinkLog() as log:
        value = float(f().data.sum(dtype=np.float64))
    return value, log.signature()


def numeric_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
                      coords: Sequence[np.ndarray] | None = None):
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` at the chosen flat coordinates.

    Returns ``(values, valid)`` per input. A coordinate is invalid when either
    step changes which side of a kink some SELU input lies on.

    The probes run in float64 (inputs are widened exactly), so the oracle is
    not limited by float32 rounding of ``f``.
    """
    saved = [t.data for t in inputs]
    try:
        with precision(np.float64):
            for t in inputs:
                t.data = t.data.astype(np.float64)
            return _probe(f, inputs, h, coords)
    finally:
        for t, d in zip(inputs, saved):
            t.data = d


def _probe(f, inputs, h, coords):
    _, base = _eval(f)
    values, valid = [], []
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size) if coords is None else coords[k]
        g = np.zeros(len(idx), dtype=np.float64)
        ok = np.ones(len(idx), dtype=bool)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            hi, sig_hi = _eval(f)
            flat[i] = orig - h
            lo, sig_lo = _eval(f)
            flat[i] = orig
            g[n] = (hi - lo) / (2.0 * h)
            ok[n] = sig_hi == base and sig_lo == base
        values.append(g)
        valid.append(ok)
    return values, valid


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """``max |a - n| / max(|a|, |n|)`` over the concatenated gradient vector.

    Coordinates are not compared one by one: some gradients are exactly zero
    (a key bias under a softmax is shift invariant) and a per-coordinate ratio
    would divide float32 rounding noise by zero.
    """
    a = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in analytic])
    n = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in numeric])
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def grad_check_report(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
                      max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape and numeric gradients.

    ``max_coords`` caps the coordinates probed per input (a seeded random
    subset); the error scale still uses the full analytic gradient.
    """
    analytic = tape_gradients(f, inputs)
    rng = np.random.default_rng(seed)
    coords = []
    for t in inputs:
        if max_coords is None or t.size <= max_coords:
            coords.append(np.arange(t.size))
        else:
            coords.append(np.sort(rng.choice(t.size, max_coords, replace=False)))
    numeric, valid = numeric_gradients(f, inputs, h, coords)
    a_sel = [a.reshape(-1)[c][v] for a, c, v in zip(analytic, coords, valid)]
    n_sel = [n[v] for n, v in zip(numeric, valid)]
    scale = max(max(np.abs(a).max(initial=0.0) for a in analytic),
                max(np.abs(n).max(initial=0.0) for n in n_sel))
    diff = max((np.abs(a - n).max(initial=0.0) for a, n in zip(a_sel, n_sel)), default=0.0)
    err = float(diff / scale) if scale > 0 else 0.0
    checked = int(sum(v.sum() for v in valid))
    skipped = int(sum((~v).sum() for v in valid))
    return GradCheckReport(err, checked, skipped)


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` takes no arguments and must read ``inputs`` by closure.
    """
    return grad_check_report(f, inputs, h, max_coords, seed).max_rel_error
