"""Numerical verification suite behind the `verify` CLI command.

Each check pits the fast curvature path against an independent route
(explicit Kronecker blocks, finite differences, closed forms, direct
minimization) and reports the worst relative deviation against a fixed
tolerance.  The suite doubles as the core of the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import hessian, sharpness
from .data import Dataset
from .linalg import Rng
from .network import Mlp, _forward_batch, random_mlp


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = (
            f"{status}  {self.name:<24} max_dev={self.max_deviation:.3e} "
            f"tol={self.tolerance:.1e} ({self.seconds:.2f}s)"
        )
        if self.detail:
            msg += f"  {self.detail}"
        return msg


def rel_deviation(got: np.ndarray, want: np.ndarray, floor: float = 1e-300) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.abs(want).max(initial=0.0)), floor)
    return float(np.abs(got - want).max(initial=0.0)) / scale


def _random_net(rng: Rng, min_dim=2, max_dim=8, min_depth=2, max_depth=4) -> Mlp:
    depth = int(rng.integers(min_depth, max_depth + 1))
    dims = [int(rng.integers(min_dim, max_dim + 1)) for _ in range(depth + 1)]
    return random_mlp(dims, rng)


def _random_data(rng: Rng, n: int, input_dim: int, num_classes: int) -> Dataset:
    features = rng.normal((n, input_dim))
    labels = rng.integers(0, num_classes, size=n)
    return Dataset(features, labels, num_classes)


def _timed(fn):
    t0 = time.perf_counter()
    result = fn()
    return result, time.perf_counter() - t0


def check_single_layer_closed_form(seed: int = 0) -> CheckResult:
    """Zero single-layer net: trace must equal (1 - 1/K) * ||x||^2."""
    tol = 1e-12

    def run():
        rng = Rng(seed ^ 0xA1)
        worst = 0.0
        for k in (2, 3, 10):
            input_dim = int(rng.integers(2, 12))
            x = rng.normal((input_dim,))
            net = Mlp([input_dim, k], [np.zeros((k, input_dim))])
            data = Dataset(x[None, :], np.array([0]), k)
            got = hessian.trace_exact(net, data).total()
            want = (1.0 - 1.0 / k) * float(x @ x)
            worst = max(worst, rel_deviation(got, want))
        return worst

    worst, secs = _timed(run)
    return CheckResult("closed-form-1layer", worst <= tol, worst, tol, seconds=secs)


def check_kron_oracle(seed: int = 0, num_nets: int = 20, n: int = 10) -> CheckResult:
    """Fast traces and diagonals vs explicitly materialized blocks."""
    tol = 1e-10

    def run():
        rng = Rng(seed ^ 0xB2)
        worst = 0.0
        for _ in range(num_nets):
            net = _random_net(rng)
            data = _random_data(rng, n, net.input_dim, net.num_classes)
            fast_tr = hessian.trace_exact(net, data)
            fast_diag = hessian.diag_exact(net, data)
            oracle_tr = hessian.oracle_kron_trace(net, data)
            oracle_diag = hessian.oracle_kron_diag(net, data)
            for d in range(net.depth):
                worst = max(
                    worst,
                    rel_deviation(fast_tr.per_layer[d], oracle_tr.per_layer[d]),
                    rel_deviation(fast_diag.per_layer[d], oracle_diag.per_layer[d]),
                )
        return worst

    worst, secs = _timed(run)
    return CheckResult("kron-oracle", worst <= tol, worst, tol, seconds=secs)


def check_fd_diag(seed: int = 0) -> CheckResult:
    """Finite differences of the loss gradient vs the exact diagonal."""
    tol = 1e-4

    def run():
        rng = Rng(seed ^ 0xC3)
        net = random_mlp([5, 7, 4, 3], rng)
        data = _random_data(rng, 5, 5, 3)
        exact = hessian.diag_exact(net, data)
        report = hessian.oracle_fd_diag(net, data, eps=1e-4)
        worst = 0.0
        flagged = 0
        for d in range(net.depth):
            ex = exact.per_layer[d]
            fd = report.diagonals.per_layer[d]
            ok = ~report.kink_flags[d]
            flagged += int(report.kink_flags[d].sum())
            scale = max(float(np.abs(ex).max()), 1e-300)
            live = ok & (np.maximum(np.abs(ex), np.abs(fd)) > 1e-9 * scale)
            if np.any(live):
                dev = np.abs(fd[live] - ex[live]) / np.maximum(
                    np.abs(ex[live]), np.abs(fd[live])
                )
                worst = max(worst, float(dev.max()))
        return worst, flagged

    (worst, flagged), secs = _timed(run)
    return CheckResult(
        "fd-diagonal", worst <= tol, worst, tol,
        detail=f"kink-flagged={flagged}", seconds=secs,
    )


def check_grad_scaling(seed: int = 0, num_alphas: int = 50) -> CheckResult:
    """Rescaled networks must divide each layer gradient by alpha_d."""
    tol = 1e-12

    def run():
        rng = Rng(seed ^ 0xD4)
        worst = 0.0
        for _ in range(num_alphas):
            net = _random_net(rng)
            alpha = sharpness.Alpha.random(net.depth, rng)
            x = rng.normal((net.input_dim,))
            report = sharpness.grad_scaling_check(net, alpha, x)
            worst = max(worst, report.max_deviation)
        return worst

    worst, secs = _timed(run)
    return CheckResult("grad-scaling-law", worst <= tol, worst, tol, seconds=secs)


def check_trace_scaling(seed: int = 0, num_alphas: int = 50) -> CheckResult:
    """Layer traces must scale by 1/alpha_d^2 under rescaling."""
    tol = 1e-10

    def run():
        rng = Rng(seed ^ 0xE5)
        worst = 0.0
        for _ in range(num_alphas):
            net = _random_net(rng)
            data = _random_data(rng, 4, net.input_dim, net.num_classes)
            base = hessian.trace_exact(net, data)
            alpha = sharpness.Alpha.random(net.depth, rng)
            scaled = hessian.trace_exact(sharpness.alpha_transform(net, alpha), data)
            for d in range(net.depth):
                want = base.per_layer[d] / alpha.per_layer[d] ** 2
                worst = max(worst, rel_deviation(scaled.per_layer[d], want))
        return worst

    worst, secs = _timed(run)
    return CheckResult("trace-scaling-law", worst <= tol, worst, tol, seconds=secs)


def check_ms_invariance(seed: int = 0, num_alphas: int = 100) -> CheckResult:
    """Minimum sharpness and network outputs are rescaling-invariant."""
    tol = 1e-8
    output_tol = 1e-10

    def run():
        rng = Rng(seed ^ 0xF6)
        net = _random_net(rng, min_dim=3, max_dim=8, min_depth=2, max_depth=4)
        data = _random_data(rng, 6, net.input_dim, net.num_classes)
        base = sharpness.minimum_sharpness_of(net, data)
        probe = rng.normal((8, net.input_dim))
        _, base_logits, _, _ = _forward_batch(net, probe)
        worst_ms = 0.0
        worst_out = 0.0
        for _ in range(num_alphas):
            alpha = sharpness.Alpha.random(net.depth, rng, log_range=3.0)
            moved = sharpness.alpha_transform(net, alpha)
            report = sharpness.minimum_sharpness_of(moved, data)
            worst_ms = max(worst_ms, rel_deviation(report.ms, base.ms))
            _, logits, _, _ = _forward_batch(moved, probe)
            worst_out = max(worst_out, rel_deviation(logits, base_logits))
        return worst_ms, worst_out

    (worst_ms, worst_out), secs = _timed(run)
    passed = worst_ms <= tol and worst_out <= output_tol
    return CheckResult(
        "ms-invariance", passed, worst_ms, tol,
        detail=f"output_dev={worst_out:.3e} (tol {output_tol:.0e})", seconds=secs,
    )


def check_ms_optimality(seed: int = 0, num_samples: int = 1000) -> CheckResult:
    """Closed form vs direct minimization and Monte-Carlo lower bound."""
    tol = 1e-6

    def run():
        rng = Rng(seed ^ 0x17)
        net = _random_net(rng, min_dim=3, max_dim=8, min_depth=2, max_depth=4)
        data = _random_data(rng, 6, net.input_dim, net.num_classes)
        report = sharpness.minimum_sharpness_of(net, data)
        numeric = sharpness.minimum_sharpness_numeric(net, data, budget=2000)
        worst = rel_deviation(numeric, report.ms)
        traces = np.asarray(report.layer_traces.per_layer)
        # The minimizer itself must be feasible and achieve the optimum.
        prod_dev = abs(float(np.prod(report.alpha_star.per_layer)) - 1.0)
        at_star = sharpness.scaled_trace_objective(traces, report.alpha_prime_star)
        star_dev = rel_deviation(at_star, report.ms)
        beaten = 0
        for _ in range(num_samples):
            u = rng.uniform(-3.0, 3.0, net.depth)
            alpha_prime = np.exp(u - u.mean())
            value = sharpness.scaled_trace_objective(traces, alpha_prime)
            if value < report.ms * (1.0 - 1e-12):
                beaten += 1
        return worst, prod_dev, star_dev, beaten

    (worst, prod_dev, star_dev, beaten), secs = _timed(run)
    passed = worst <= tol and prod_dev <= 1e-12 and star_dev <= 1e-12 and beaten == 0
    return CheckResult(
        "ms-optimality", passed, worst, tol,
        detail=(
            f"alpha_prod_dev={prod_dev:.1e} at_star_dev={star_dev:.1e} "
            f"mc_beaten={beaten}/1000"
        ),
        seconds=secs,
    )


def check_am_gm(seed: int = 0, num_nets: int = 10) -> CheckResult:
    """ms <= total trace always; equality exactly for equal layer traces."""
    tol = 1e-12

    def run():
        rng = Rng(seed ^ 0x28)
        worst = 0.0
        for _ in range(num_nets):
            net = _random_net(rng)
            data = _random_data(rng, 4, net.input_dim, net.num_classes)
            report = sharpness.minimum_sharpness_of(net, data)
            total = report.layer_traces.total()
            worst = max(worst, (report.ms - total) / max(total, 1e-300))
        # Forced-equal traces: the bound must be tight.
        equal = hessian.LayerTraces([0.7, 0.7, 0.7], n=1)
        eq_report = sharpness.minimum_sharpness(equal)
        eq_dev = rel_deviation(eq_report.ms, equal.total())
        return max(worst, 0.0), eq_dev

    (worst, eq_dev), secs = _timed(run)
    passed = worst <= tol and eq_dev <= 1e-10
    return CheckResult(
        "am-gm-bound", passed, worst, tol,
        detail=f"equality_dev={eq_dev:.1e}", seconds=secs,
    )


ALL_CHECKS = (
    check_single_layer_closed_form,
    check_kron_oracle,
    check_fd_diag,
    check_grad_scaling,
    check_trace_scaling,
    check_ms_invariance,
    check_ms_optimality,
    check_am_gm,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in ALL_CHECKS]
