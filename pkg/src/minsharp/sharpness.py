"""Layer rescaling and the scale-invariant minimum sharpness.

A ReLU network is unchanged as a function when layer d's weights are
multiplied by alpha_d > 0 with prod alpha_d = 1, but its Hessian trace
is not: layer d's trace picks up a factor 1/alpha_d^2.  Minimizing the
total trace over all such rescalings has the closed form

    ms = D * (prod_d t_d)^(1/D)

for per-layer traces t_d, attained at the objective weights
a_d = (1/t_d) * (prod t)^(1/D) (these multiply the traces; the weight
scale factors are their inverse square roots).  A projected-gradient
minimizer over the constraint set cross-checks the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .hessian import LayerTraces, trace_exact
from .linalg import Rng
from .network import Mlp, forward, grad_log_z, grad_logit

ALPHA_PRODUCT_TOL = 1e-12


@dataclass(frozen=True, init=False)
class Alpha:
    """Per-layer positive scale factors with product one."""

    per_layer: tuple[float, ...]

    def __init__(self, per_layer):
        values = tuple(float(a) for a in per_layer)
        if any(a <= 0 for a in values):
            raise ValueError(f"scale factors must be positive, got {values}")
        prod = math.prod(values)
        if abs(prod - 1.0) > ALPHA_PRODUCT_TOL * max(1.0, abs(prod)):
            raise ValueError(
                f"scale factors must multiply to 1, got product {prod!r}"
            )
        object.__setattr__(self, "per_layer", values)

    def __len__(self) -> int:
        return len(self.per_layer)

    @staticmethod
    def random(depth: int, rng: Rng, log_range: float = 3.0) -> "Alpha":
        """Log-uniform factors in [e^-log_range, e^log_range], renormalized."""
        u = rng.uniform(-log_range, log_range, depth)
        return Alpha(np.exp(u - u.mean()))


def alpha_transform(net: Mlp, alpha: Alpha) -> Mlp:
    """New network with weights[d] scaled by alpha[d]; input untouched."""
    if len(alpha) != net.depth:
        raise ValueError(
            f"got {len(alpha)} scale factors for a depth-{net.depth} network"
        )
    return Mlp(
        list(net.dims),
        [a * w for a, w in zip(alpha.per_layer, net.weights)],
    )


@dataclass
class GradScalingReport:
    """Worst relative deviation from the inverse scaling law.

    For every layer and every backpropagated quantity (each logit and
    the log partition), the transformed network's gradient must equal
    1/alpha_d times the original's.
    """

    max_deviation: float
    per_layer: list[float]

    @property
    def ok(self) -> bool:
        return self.max_deviation <= 1e-12


def _rel_dev(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.abs(want).max(initial=0.0)), 1e-300)
    return float(np.abs(got - want).max(initial=0.0)) / scale


def grad_scaling_check(net: Mlp, alpha: Alpha, x: np.ndarray) -> GradScalingReport:
    scaled = alpha_transform(net, alpha)
    trace_a = forward(net, x)
    trace_b = forward(scaled, x)
    pairs = [(grad_log_z(net, trace_a), grad_log_z(scaled, trace_b))]
    for label in range(net.num_classes):
        pairs.append(
            (grad_logit(net, trace_a, label), grad_logit(scaled, trace_b, label))
        )
    per_layer = [0.0] * net.depth
    for g_orig, g_scaled in pairs:
        for d in range(net.depth):
            want = g_orig[d] / alpha.per_layer[d]
            per_layer[d] = max(per_layer[d], _rel_dev(g_scaled[d], want))
    return GradScalingReport(max(per_layer), per_layer)


@dataclass
class SharpnessReport:
    """Minimum sharpness value plus the minimizer and its inputs.

    alpha_prime_star holds the objective weights a_d (they multiply the
    per-layer traces); alpha_star holds the equivalent weight-scale
    factors a_d^(-1/2).  Both are None when some layer trace is zero:
    the infimum is then 0 and is not attained.
    """

    ms: float
    alpha_star: Alpha | None
    alpha_prime_star: tuple[float, ...] | None
    layer_traces: LayerTraces
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "ms": self.ms,
            "alpha_star": list(self.alpha_star.per_layer) if self.alpha_star else None,
            "alpha_prime_star": (
                list(self.alpha_prime_star) if self.alpha_prime_star else None
            ),
            "layer_traces": list(self.layer_traces.per_layer),
            "num_samples": self.layer_traces.n,
            "degenerate": self.degenerate,
        }


def minimum_sharpness(layer_traces: LayerTraces) -> SharpnessReport:
    """Closed-form minimum of sum_d a_d t_d over positive product-one a."""
    traces = layer_traces.per_layer
    if any(not math.isfinite(t) for t in traces):
        raise ValueError(f"layer traces must be finite, got {traces}")
    if any(t < 0 for t in traces):
        raise ValueError(f"layer traces must be nonnegative, got {traces}")
    depth = len(traces)
    if any(t == 0.0 for t in traces):
        return SharpnessReport(0.0, None, None, layer_traces, degenerate=True)
    # Geometric mean in log space; direct products under/overflow for
    # deep networks.
    logs = np.log(traces)
    mean_log = float(logs.mean())
    ms = depth * math.exp(mean_log)
    alpha_prime = tuple(math.exp(mean_log - lg) for lg in logs)
    alpha_star = Alpha(tuple(1.0 / math.sqrt(a) for a in alpha_prime))
    return SharpnessReport(ms, alpha_star, alpha_prime, layer_traces, degenerate=False)


def scaled_trace_objective(traces, alpha_prime) -> float:
    """sum_d a_d t_d, the total trace after rescaling by weights a_d."""
    return float(np.dot(traces, alpha_prime))


def minimum_sharpness_numeric(net: Mlp, data: Dataset, budget: int = 500) -> float:
    """Projected gradient descent on the rescaled-trace objective.

    Works in log coordinates u (a = e^u) on the zero-mean hyperplane,
    with step halving on any objective increase.  Exists purely as an
    independent check of the closed form.
    """
    if net.depth < 2:
        raise ValueError("numeric minimization needs depth >= 2")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    traces = np.asarray(trace_exact(net, data).per_layer)
    u = np.zeros(net.depth)
    value = float(np.sum(traces * np.exp(u)))
    best = value
    for _ in range(budget):
        weights = traces * np.exp(u)
        grad = weights - weights.mean()  # projected onto sum(u) = 0
        gnorm = float(np.abs(grad).max())
        if gnorm == 0.0 or value == 0.0:
            break
        step = net.depth / max(value, 1e-300)  # ~ inverse curvature scale
        improved = False
        for _ in range(60):
            trial = u - step * grad
            trial -= trial.mean()
            trial_value = float(np.sum(traces * np.exp(trial)))
            if trial_value < value:
                u, value = trial, trial_value
                improved = True
                break
            step *= 0.5
        best = min(best, value)
        if not improved:
            break
    return best


def minimum_sharpness_of(
    net: Mlp, data: Dataset, batch_size: int = 256, threads: int = 1
) -> SharpnessReport:
    """Exact per-layer traces followed by the closed-form minimum."""
    return minimum_sharpness(trace_exact(net, data, batch_size, threads))
