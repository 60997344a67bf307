"""Exact per-layer curvature traces and diagonals, plus slow oracles.

For a ReLU network with softmax cross-entropy the loss Hessian block of
layer d is, per sample, the Kronecker product

    H_d = (G_d P G_d^T) (x) (x_d x_d^T)

where the columns of G_d are the logit vectors backpropagated to layer
d, P = diag(p) - p p^T is the softmax curvature, and x_d is the layer
input.  The fast path never forms H_d: the trace collapses to

    tr H_d = (sum_l p_l ||G_d e_l||^2 - ||G_d p||^2) * ||x_d||^2

and the diagonal to (G_d^2 p - (G_d p)^2) (x) x_d^2 elementwise, so one
forward plus one K-column backward per sample covers every layer.

Two oracles cross-check this: an explicit construction that materializes
each Kronecker block and reads its trace/diagonal off the entries, and a
finite-difference probe of the analytic loss gradient.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .network import Mlp, _forward_batch, _grad_loss_batch, forward

# Entries this far below zero (relative to the positive part of the same
# expression) are rounding noise and get clamped; anything worse raises.
CLAMP_REL = 1e-10

# Brute-force oracles refuse layers above this parameter count.
ORACLE_MAX_LAYER_PARAMS = 1_000_000

# Row blocks of materialized Kronecker product are capped at this size.
_ORACLE_BLOCK_BYTES = 128 * 1024 * 1024

# Active fault-injection hooks, used by the verification CLI to prove the
# oracle tests have teeth.  "norm-unsquared" drops the squares on the
# Frobenius norms inside score().
_BUG_HOOKS: set[str] = set()

KNOWN_BUG_HOOKS = ("norm-unsquared",)


@contextmanager
def inject_bug(name: str):
    if name not in KNOWN_BUG_HOOKS:
        raise ValueError(f"unknown bug hook {name!r}; known: {KNOWN_BUG_HOOKS}")
    _BUG_HOOKS.add(name)
    try:
        yield
    finally:
        _BUG_HOOKS.discard(name)


class CurvatureError(ArithmeticError):
    """A theoretically nonnegative curvature came out materially negative."""


@dataclass
class LayerTraces:
    """Per-layer traces of the loss Hessian, averaged over n samples."""

    per_layer: list[float]
    n: int

    def total(self) -> float:
        return float(sum(self.per_layer))


@dataclass
class LayerDiagonals:
    """Per-layer Hessian diagonals, shaped like the weight matrices."""

    per_layer: list[np.ndarray]

    def total(self) -> float:
        return float(sum(m.sum() for m in self.per_layer))


@dataclass
class FdDiagReport:
    """Finite-difference diagonal plus per-parameter kink flags.

    kink_flags[d][r, c] is True when perturbing that weight flipped some
    ReLU activation sign, which makes the difference quotient unreliable
    at that coordinate.
    """

    diagonals: LayerDiagonals
    kink_flags: list[np.ndarray]
    eps: float


def _clamp_scalar(value: float, scale: float) -> float:
    if value >= 0.0:
        return value
    if value >= -CLAMP_REL * max(scale, 1e-300):
        return 0.0
    raise CurvatureError(
        f"curvature {value} is negative beyond rounding (scale {scale})"
    )


def _clamp_array(values: np.ndarray, scale: np.ndarray) -> np.ndarray:
    bad = values < -CLAMP_REL * np.maximum(scale, 1e-300)
    if np.any(bad):
        worst = values[bad].min()
        raise CurvatureError(
            f"diagonal entry {worst} is negative beyond rounding"
        )
    return np.maximum(values, 0.0)


def _logit_backprop_matrices(net: Mlp, layer_inputs: list[np.ndarray]):
    """G_d for every layer: column l is the logit-l backprop vector."""
    deltas = [None] * net.depth
    delta = np.eye(net.num_classes)
    deltas[net.depth - 1] = delta
    for d in range(net.depth - 1, 0, -1):
        delta = (net.weights[d].T @ delta) * (layer_inputs[d] > 0.0)[:, None]
        deltas[d - 1] = delta
    return deltas


def score(net: Mlp, x: np.ndarray, y: int) -> list[float]:
    """Per-layer Hessian-trace contribution of one sample.

    The softmax cross-entropy curvature does not depend on the label;
    y is validated and recorded only to mirror the (x, y) sample pair.
    """
    if not 0 <= y < net.num_classes:
        raise ValueError(f"label {y} out of range [0, {net.num_classes})")
    trace = forward(net, x)
    deltas = _logit_backprop_matrices(net, trace.layer_inputs)
    return _score_from_parts(trace.layer_inputs, trace.probs, deltas)


def _score_from_parts(layer_inputs, probs, deltas) -> list[float]:
    out = []
    for d, delta in enumerate(deltas):
        x_d = layer_inputs[d]
        xsq = float(x_d @ x_d)
        col_sq = np.sum(delta * delta, axis=0)  # ||G e_l||^2 per logit
        mean_vec = delta @ probs  # G p
        if "norm-unsquared" in _BUG_HOOKS:
            # fault injection: unsquared Frobenius norms
            s1 = float(probs @ np.sqrt(col_sq * xsq))
            s2 = float(np.sqrt((mean_vec @ mean_vec) * xsq))
            out.append(s1 - s2)
            continue
        s1 = float(col_sq @ probs)
        s2 = float(mean_vec @ mean_vec)
        out.append(_clamp_scalar((s1 - s2) * xsq, s1 * xsq))
    return out


def _sample_parts(net: Mlp, x_row: np.ndarray):
    trace = forward(net, x_row)
    deltas = _logit_backprop_matrices(net, trace.layer_inputs)
    return trace.layer_inputs, trace.probs, deltas


def _accumulate(net: Mlp, data: Dataset, per_sample, zero, batch_size, threads):
    """Sum per_sample(i) over the dataset in fixed chunk order.

    Chunks are consecutive index ranges; each chunk is reduced
    sequentially and chunk partials are folded in chunk order, so the
    result is identical for any thread count.
    """
    n = len(data)
    chunks = [range(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]

    def chunk_sum(chunk):
        acc = zero()
        for i in chunk:
            contrib = per_sample(data.features[i])
            for a, c in zip(acc, contrib):
                a += c
        return acc

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(chunk_sum, chunks))
    else:
        partials = [chunk_sum(c) for c in chunks]

    total = zero()
    for part in partials:
        for a, p in zip(total, part):
            a += p
    return total


def trace_exact(
    net: Mlp, data: Dataset, batch_size: int = 256, threads: int = 1
) -> LayerTraces:
    """Mean per-layer Hessian trace over the dataset (the fast path)."""
    if len(data) < 1:
        raise ValueError("dataset must be nonempty")

    def per_sample(x_row):
        layer_inputs, probs, deltas = _sample_parts(net, x_row)
        return [np.float64(v) for v in _score_from_parts(layer_inputs, probs, deltas)]

    def zero():
        return [np.zeros(()) for _ in range(net.depth)]

    sums = _accumulate(net, data, per_sample, zero, batch_size, threads)
    n = len(data)
    return LayerTraces([float(s) / n for s in sums], n)


def diag_exact(
    net: Mlp, data: Dataset, batch_size: int = 256, threads: int = 1
) -> LayerDiagonals:
    """Mean Hessian diagonal per layer, shaped like the weights."""
    if len(data) < 1:
        raise ValueError("dataset must be nonempty")

    def per_sample(x_row):
        layer_inputs, probs, deltas = _sample_parts(net, x_row)
        out = []
        for d, delta in enumerate(deltas):
            xsq = layer_inputs[d] ** 2
            mean_sq = (delta * delta) @ probs  # G^2 p per output unit
            centered = mean_sq - (delta @ probs) ** 2
            contrib = np.outer(_clamp_array(centered, mean_sq), xsq)
            out.append(contrib)
        return out

    def zero():
        return [np.zeros_like(w) for w in net.weights]

    sums = _accumulate(net, data, per_sample, zero, batch_size, threads)
    return LayerDiagonals([s / len(data) for s in sums])


def gauss_newton_left_factor(delta: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """G P G^T with P = diag(p) - p p^T; symmetric PSD by construction."""
    p_mat = np.diag(probs) - np.outer(probs, probs)
    return delta @ p_mat @ delta.T


def _kron_trace_diag(left: np.ndarray, right: np.ndarray):
    """Trace and diagonal of kron(left, right), via full materialization.

    Every entry of the product is computed; large products are built in
    row blocks (grouped by left row) to bound peak memory.
    """
    na, nb = left.shape[0], right.shape[0]
    total_bytes = (na * nb) ** 2 * 8
    if total_bytes <= _ORACLE_BLOCK_BYTES:
        full = np.kron(left, right)
        diag = np.diagonal(full).copy()
        return float(diag.sum()), diag
    diag = np.empty(na * nb)
    for i in range(na):
        block = np.kron(left[i : i + 1, :], right)  # rows i*nb .. i*nb+nb-1
        diag[i * nb : (i + 1) * nb] = np.diagonal(
            block[:, i * nb : (i + 1) * nb]
        )
    return float(diag.sum()), diag


def _check_oracle_size(net: Mlp):
    for d, w in enumerate(net.weights):
        if w.size > ORACLE_MAX_LAYER_PARAMS:
            raise ValueError(
                f"layer {d} has {w.size} parameters; the explicit oracle is "
                f"limited to {ORACLE_MAX_LAYER_PARAMS} per layer"
            )


def _oracle_kron(net: Mlp, data: Dataset, want_diag: bool):
    if len(data) < 1:
        raise ValueError("dataset must be nonempty")
    _check_oracle_size(net)
    n = len(data)
    trace_sums = [0.0] * net.depth
    diag_sums = [np.zeros_like(w) for w in net.weights] if want_diag else None
    for i in range(n):
        layer_inputs, probs, deltas = _sample_parts(net, data.features[i])
        for d in range(net.depth):
            left = gauss_newton_left_factor(deltas[d], probs)
            right = np.outer(layer_inputs[d], layer_inputs[d])
            tr, diag = _kron_trace_diag(left, right)
            trace_sums[d] += tr
            if want_diag:
                diag_sums[d] += diag.reshape(net.weights[d].shape)
    traces = LayerTraces([s / n for s in trace_sums], n)
    if want_diag:
        return traces, LayerDiagonals([s / n for s in diag_sums])
    return traces, None


def oracle_kron_trace(net: Mlp, data: Dataset) -> LayerTraces:
    """Ground-truth traces from explicitly materialized Hessian blocks."""
    traces, _ = _oracle_kron(net, data, want_diag=False)
    return traces


def oracle_kron_diag(net: Mlp, data: Dataset) -> LayerDiagonals:
    """Ground-truth diagonals read off the materialized blocks."""
    _, diags = _oracle_kron(net, data, want_diag=True)
    return diags


def _activation_signs(net: Mlp, features: np.ndarray) -> list[np.ndarray]:
    layer_inputs, _, _, _ = _forward_batch(net, features)
    return [h > 0.0 for h in layer_inputs[1:]]


def oracle_fd_diag(net: Mlp, data: Dataset, eps: float = 1e-4) -> FdDiagReport:
    """Central finite differences of the analytic loss gradient.

    H_kk ~ (g_k(w + eps e_k) - g_k(w - eps e_k)) / (2 eps) for every
    weight coordinate.  Coordinates whose perturbation flips any ReLU
    activation sign are flagged; the quotient straddles a kink there.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if len(data) < 1:
        raise ValueError("dataset must be nonempty")
    _check_oracle_size(net)
    diags = []
    flags = []
    work = net.copy()
    for d in range(net.depth):
        w = work.weights[d]
        diag = np.zeros_like(w)
        flag = np.zeros(w.shape, dtype=bool)
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                orig = w[r, c]
                w[r, c] = orig + eps
                g_plus = _grad_loss_batch(work, data.features, data.labels)[d][r, c]
                signs_plus = _activation_signs(work, data.features)
                w[r, c] = orig - eps
                g_minus = _grad_loss_batch(work, data.features, data.labels)[d][r, c]
                signs_minus = _activation_signs(work, data.features)
                w[r, c] = orig
                diag[r, c] = (g_plus - g_minus) / (2.0 * eps)
                flag[r, c] = any(
                    not np.array_equal(a, b)
                    for a, b in zip(signs_plus, signs_minus)
                )
        diags.append(diag)
        flags.append(flag)
    return FdDiagReport(LayerDiagonals(diags), flags, eps)
