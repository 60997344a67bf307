"""No-bias fully connected ReLU network with a softmax head.

The model is f(x) = W_D relu(W_{D-1} relu(... relu(W_1 x)))), trained
with mean cross-entropy.  Weights are indexed 0..D-1; layer_inputs[d]
is the activation vector feeding weights[d], so layer_inputs[0] is the
raw input and the logits are weights[D-1] @ layer_inputs[D-1].

ReLU uses the subgradient convention relu'(0) = 0, which makes every
backward pass a deterministic function of the forward activations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .linalg import Rng, SALT_SHUFFLE, gaussian_fill

LayerGradients = list  # one gradient matrix per layer, shaped like the weights


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch


class CheckpointError(ValueError):
    """Checkpoint file is malformed or internally inconsistent."""


@dataclass
class Mlp:
    dims: list[int]
    weights: list[np.ndarray]

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dimensions")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all layer widths must be >= 1, got {self.dims}")
        if len(self.weights) != len(self.dims) - 1:
            raise ValueError(
                f"{len(self.dims)} dims require {len(self.dims) - 1} weight "
                f"matrices, got {len(self.weights)}"
            )
        for d, w in enumerate(self.weights):
            want = (self.dims[d + 1], self.dims[d])
            if w.shape != want:
                raise ValueError(
                    f"weights[{d}] has shape {w.shape}, expected {want}"
                )

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return self.dims[-1]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def copy(self) -> "Mlp":
        return Mlp(list(self.dims), [w.copy() for w in self.weights])


@dataclass
class ForwardTrace:
    """Per-sample cache: layer inputs, logits, softmax, log partition."""

    layer_inputs: list[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    log_z: float


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 1024
    epochs: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    model: Mlp
    history: list[EpochStats] = field(default_factory=list)


def random_mlp(dims: list[int], rng: Rng) -> Mlp:
    """Gaussian init with stddev sqrt(2 / fan_in) per layer."""
    weights = [
        gaussian_fill(rng, dims[d + 1], dims[d], np.sqrt(2.0 / dims[d]))
        for d in range(len(dims) - 1)
    ]
    return Mlp(list(dims), weights)


def _forward_batch(net: Mlp, x: np.ndarray):
    """Forward over rows of x; returns (layer_inputs, logits, probs, log_z).

    layer_inputs[d] is (n, dims[d]); log-sum-exp is max-shifted so the
    softmax never overflows.
    """
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(
            f"input has shape {x.shape}, expected (n, {net.input_dim})"
        )
    layer_inputs = [x]
    h = x
    for d in range(net.depth - 1):
        h = np.maximum(h @ net.weights[d].T, 0.0)
        layer_inputs.append(h)
    logits = h @ net.weights[-1].T
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    z = ex.sum(axis=1, keepdims=True)
    probs = ex / z
    log_z = (np.log(z) + shift).ravel()
    return layer_inputs, logits, probs, log_z


def forward(net: Mlp, x: np.ndarray) -> ForwardTrace:
    """Single-sample forward pass with the full activation cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"input must be a 1-D vector, got shape {x.shape}")
    layer_inputs, logits, probs, log_z = _forward_batch(net, x[None, :])
    return ForwardTrace(
        [h[0] for h in layer_inputs], logits[0], probs[0], float(log_z[0])
    )


def _check_trace(net: Mlp, trace: ForwardTrace):
    if len(trace.layer_inputs) != net.depth or any(
        trace.layer_inputs[d].shape != (net.dims[d],) for d in range(net.depth)
    ):
        raise ValueError("forward trace does not match this network's shape")
    if trace.logits.shape != (net.num_classes,):
        raise ValueError("forward trace has a mismatched logits vector")


def _backprop(net: Mlp, trace: ForwardTrace, seed: np.ndarray) -> LayerGradients:
    """Reverse-mode gradients of <seed, logits> w.r.t. every weight matrix."""
    grads = [None] * net.depth
    delta = seed
    for d in range(net.depth - 1, -1, -1):
        grads[d] = np.outer(delta, trace.layer_inputs[d])
        if d > 0:
            delta = (net.weights[d].T @ delta) * (trace.layer_inputs[d] > 0.0)
    return grads


def grad_log_z(net: Mlp, trace: ForwardTrace) -> LayerGradients:
    """Gradient of the log partition function; the seed is the softmax."""
    _check_trace(net, trace)
    return _backprop(net, trace, trace.probs.copy())


def grad_logit(net: Mlp, trace: ForwardTrace, label: int) -> LayerGradients:
    """Gradient of the single logit o_label."""
    _check_trace(net, trace)
    if not 0 <= label < net.num_classes:
        raise ValueError(
            f"label {label} out of range [0, {net.num_classes})"
        )
    seed = np.zeros(net.num_classes)
    seed[label] = 1.0
    return _backprop(net, trace, seed)


def _grad_loss_batch(net: Mlp, features: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy gradient over a batch, all layers at once."""
    layer_inputs, _, probs, _ = _forward_batch(net, features)
    n = features.shape[0]
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads = [None] * net.depth
    for d in range(net.depth - 1, -1, -1):
        grads[d] = delta.T @ layer_inputs[d]
        if d > 0:
            delta = (delta @ net.weights[d]) * (layer_inputs[d] > 0.0)
    return grads


def grad_loss(net: Mlp, batch: Dataset) -> LayerGradients:
    """Gradient of the mean negative log-likelihood over the batch."""
    return _grad_loss_batch(net, batch.features, batch.labels)


def loss(net: Mlp, data: Dataset) -> float:
    """Mean negative log-likelihood; always >= 0."""
    _, logits, _, log_z = _forward_batch(net, data.features)
    true_logit = logits[np.arange(len(data)), data.labels]
    return float(np.mean(log_z - true_logit))


def accuracy(net: Mlp, data: Dataset) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest label)."""
    _, logits, _, _ = _forward_batch(net, data.features)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def train(net: Mlp, data: Dataset, cfg: SgdConfig) -> TrainResult:
    """SGD with classic heavy-ball momentum and coupled L2 weight decay.

    Per step: v <- momentum*v - lr*(g + weight_decay*w); w <- w + v.
    Batches come from a seeded shuffle each epoch; a trailing short
    batch is used, not dropped.  Fully deterministic given cfg.seed.
    """
    if data.num_classes != net.num_classes or data.input_dim != net.input_dim:
        raise ValueError(
            f"network {net.dims} does not fit data with input_dim="
            f"{data.input_dim}, classes={data.num_classes}"
        )
    rng = Rng(cfg.seed).split(SALT_SHUFFLE)
    model = net.copy()
    velocity = [np.zeros_like(w) for w in model.weights]
    n = len(data)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grads = _grad_loss_batch(model, data.features[idx], data.labels[idx])
            for d in range(model.depth):
                step = grads[d] + cfg.weight_decay * model.weights[d]
                velocity[d] = cfg.momentum * velocity[d] - cfg.learning_rate * step
                model.weights[d] += velocity[d]
        epoch_loss = loss(model, data)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(EpochStats(epoch, epoch_loss, accuracy(model, data)))
    return TrainResult(model, history)


# Checkpoint files: {"format_version", "dims", "weights", "meta"} with each
# layer stored as a flat row-major list printed at 17 significant digits
# (lossless for float64).  Written by hand so reruns are byte-identical.

CHECKPOINT_VERSION = "1"


def _float_repr(v: float) -> str:
    if not np.isfinite(v):
        raise CheckpointError(f"cannot serialize non-finite weight {v}")
    return format(float(v), ".17g")


def save_checkpoint(path, net: Mlp, meta: dict | None = None) -> None:
    meta_json = json.dumps(meta or {}, sort_keys=True, separators=(", ", ": "))
    lines = [
        "{",
        f'  "format_version": "{CHECKPOINT_VERSION}",',
        f'  "dims": {json.dumps(list(net.dims))},',
        '  "weights": [',
    ]
    for d, w in enumerate(net.weights):
        comma = "," if d < net.depth - 1 else ""
        flat = ", ".join(_float_repr(v) for v in w.ravel())
        lines.append(f"    [{flat}]{comma}")
    lines.append("  ],")
    lines.append(f'  "meta": {meta_json}')
    lines.append("}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[Mlp, dict]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}")
    for key in ("dims", "weights"):
        if key not in doc:
            raise CheckpointError(f"checkpoint {path} is missing '{key}'")
    dims = [int(d) for d in doc["dims"]]
    raw = doc["weights"]
    if len(raw) != len(dims) - 1:
        raise CheckpointError(
            f"checkpoint has {len(raw)} weight arrays for {len(dims)} dims"
        )
    weights = []
    for d, flat in enumerate(raw):
        rows, cols = dims[d + 1], dims[d]
        arr = np.asarray(flat, dtype=np.float64)
        if arr.shape != (rows * cols,):
            raise CheckpointError(
                f"layer {d} holds {arr.size} values, expected {rows}x{cols}"
            )
        weights.append(arr.reshape(rows, cols))
    try:
        net = Mlp(dims, weights)
    except ValueError as e:
        raise CheckpointError(str(e))
    return net, doc.get("meta", {})
