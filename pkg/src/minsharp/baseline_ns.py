"""Normalized sharpness baseline and the stochastic diagonal estimator.

Normalized sharpness treats each layer separately: with D the Hessian
diagonal reshaped to the weight shape and W2 the elementwise-squared
weights, it minimizes

    f(s1, s2) = s1^T D s2 + (1/s1)^T W2 (1/s2)

over positive vectors s1 (output units) and s2 (input units), each
constrained to product one.  In log coordinates the objective is a sum
of exponentials of affine functions, hence convex, so plain projected
gradient descent finds the optimum.

The stochastic estimator approximates the Hessian diagonal from
gradient differences along Gaussian parameter directions; it exists to
quantify how slowly that approximation converges compared to the exact
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .hessian import LayerDiagonals, diag_exact
from .linalg import Rng
from .network import Mlp, grad_loss


class NsNumericalError(ArithmeticError):
    """The layer objective became non-finite during minimization."""


@dataclass
class NsConfig:
    max_iters: int = 500
    step_size: float = 0.1
    tol: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size <= 0 or self.tol <= 0:
            raise ValueError("step_size and tol must be > 0")


@dataclass
class NsReport:
    total: float
    per_layer: list[float]
    sigma1: list[np.ndarray]
    sigma2: list[np.ndarray]
    converged: bool

    def to_dict(self) -> dict:
        return {
            "ns": self.total,
            "per_layer": self.per_layer,
            "converged": self.converged,
        }


def _layer_objective(diag, weight_sq, e_u, e_v):
    return float(e_u @ diag @ e_v + (1.0 / e_u) @ weight_sq @ (1.0 / e_v))


def ns_layer(diag: np.ndarray, weight_sq: np.ndarray, cfg: NsConfig):
    """Minimize one layer's bilinear objective over product-one sigmas.

    Projected gradient in log coordinates with mean subtraction after
    each step and step halving whenever the objective would increase.
    Returns (value, sigma1, sigma2, converged).
    """
    if diag.shape != weight_sq.shape:
        raise ValueError(
            f"diagonal {diag.shape} and squared weights {weight_sq.shape} differ"
        )
    u = np.zeros(diag.shape[0])
    v = np.zeros(diag.shape[1])
    value = _layer_objective(diag, weight_sq, np.exp(u), np.exp(v))
    if not np.isfinite(value):
        raise NsNumericalError(f"objective non-finite at the start: {value}")
    step = cfg.step_size
    converged = False
    for _ in range(cfg.max_iters):
        e_u, e_v = np.exp(u), np.exp(v)
        pos = diag * np.outer(e_u, e_v)
        neg = weight_sq * np.outer(1.0 / e_u, 1.0 / e_v)
        grad_u = pos.sum(axis=1) - neg.sum(axis=1)
        grad_v = pos.sum(axis=0) - neg.sum(axis=0)
        accepted = False
        for _ in range(60):
            u_try = u - step * grad_u
            v_try = v - step * grad_v
            u_try -= u_try.mean()
            v_try -= v_try.mean()
            trial = _layer_objective(diag, weight_sq, np.exp(u_try), np.exp(v_try))
            if not np.isfinite(trial):
                raise NsNumericalError(f"objective non-finite: {trial}")
            if trial <= value:
                improvement = value - trial
                u, v, value = u_try, v_try, trial
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        if improvement < cfg.tol * abs(value):
            converged = True
            break
        step *= 1.5  # recover step size after halvings
    return value, np.exp(u), np.exp(v), converged


def normalized_sharpness(
    net: Mlp, diags: LayerDiagonals, cfg: NsConfig | None = None
) -> NsReport:
    """Sum of per-layer normalized sharpness values for the network."""
    cfg = cfg or NsConfig()
    if len(diags.per_layer) != net.depth:
        raise ValueError(
            f"{len(diags.per_layer)} diagonal layers for a depth-{net.depth} net"
        )
    per_layer, sig1, sig2 = [], [], []
    all_converged = True
    for d in range(net.depth):
        if diags.per_layer[d].shape != net.weights[d].shape:
            raise ValueError(f"layer {d} diagonal shape mismatch")
        try:
            value, s1, s2, conv = ns_layer(
                diags.per_layer[d], net.weights[d] ** 2, cfg
            )
        except NsNumericalError as e:
            raise NsNumericalError(f"layer {d}: {e}") from None
        per_layer.append(value)
        sig1.append(s1)
        sig2.append(s2)
        all_converged &= conv
    return NsReport(float(sum(per_layer)), per_layer, sig1, sig2, all_converged)


@dataclass
class StochasticDiagReport:
    estimate: LayerDiagonals
    l2_distance: float
    rel_error: float
    num_draws: int


def diag_probe(net: Mlp, data: Dataset, r: float, eps_layers) -> list[np.ndarray]:
    """One symmetric-difference probe along explicit directions eps_layers.

    Returns eps * (grad(w + r*eps) - grad(w - r*eps)) / (2r) per layer;
    with eps a coordinate basis direction this is the central finite
    difference of that diagonal entry.
    """
    if r <= 0:
        raise ValueError("probe radius r must be > 0")
    plus = net.copy()
    minus = net.copy()
    for d in range(net.depth):
        plus.weights[d] += r * eps_layers[d]
        minus.weights[d] -= r * eps_layers[d]
    g_plus = grad_loss(plus, data)
    g_minus = grad_loss(minus, data)
    return [
        eps * (gp - gm) / (2.0 * r)
        for eps, gp, gm in zip(eps_layers, g_plus, g_minus)
    ]


def stochastic_diag(
    net: Mlp, data: Dataset, r: float, num_draws: int, rng: Rng
) -> StochasticDiagReport:
    """Monte-Carlo Hessian-diagonal estimate from Gaussian probes.

    Averages diag_probe over num_draws standard-normal directions and
    reports the L2 distance to the exact diagonal.
    """
    if num_draws < 1:
        raise ValueError("num_draws must be >= 1")
    acc = [np.zeros_like(w) for w in net.weights]
    for _ in range(num_draws):
        eps_layers = [rng.normal(w.shape) for w in net.weights]
        for a, p in zip(acc, diag_probe(net, data, r, eps_layers)):
            a += p
    estimate = LayerDiagonals([a / num_draws for a in acc])
    exact = diag_exact(net, data)
    sq_dist = sum(
        float(np.sum((e - x) ** 2))
        for e, x in zip(estimate.per_layer, exact.per_layer)
    )
    sq_norm = sum(float(np.sum(x**2)) for x in exact.per_layer)
    l2 = float(np.sqrt(sq_dist))
    rel = l2 / max(np.sqrt(sq_norm), 1e-300)
    return StochasticDiagReport(estimate, l2, rel, num_draws)
