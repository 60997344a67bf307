import numpy as np
import pytest

from minsharp.data import Dataset
from minsharp.hessian import (
    CurvatureError,
    _clamp_array,
    _clamp_scalar,
    diag_exact,
    gauss_newton_left_factor,
    inject_bug,
    oracle_fd_diag,
    oracle_kron_diag,
    oracle_kron_trace,
    score,
    trace_exact,
)
from minsharp.linalg import Rng, kron, trace
from minsharp.network import Mlp, forward, random_mlp
from minsharp.sharpness import Alpha, alpha_transform


def random_problem(seed, dims, n):
    rng = Rng(seed)
    net = random_mlp(dims, rng)
    data = Dataset(
        rng.normal((n, dims[0])), rng.integers(0, dims[-1], size=n), dims[-1]
    )
    return net, data


def rel_dev(got, want):
    scale = max(float(np.abs(np.asarray(want)).max()), 1e-300)
    return float(np.abs(np.asarray(got) - np.asarray(want)).max()) / scale


# ------------------------------------------------------------- score


def test_score_zero_single_layer_k2():
    net = Mlp([2, 2], [np.zeros((2, 2))])
    got = score(net, np.array([1.0, 0.0]), 0)
    assert abs(got[0] - 0.5) < 1e-15  # (1 - 1/2) * ||x||^2


def test_score_zero_single_layer_k3():
    net = Mlp([2, 3], [np.zeros((3, 2))])
    got = score(net, np.array([1.0, 1.0]), 2)
    assert abs(got[0] - 4.0 / 3.0) < 1e-15  # (1 - 1/3) * 2


def test_score_is_label_independent():
    net, data = random_problem(60, [3, 4, 2], 1)
    x = data.features[0]
    assert score(net, x, 0) == score(net, x, 1)


def test_score_rejects_bad_label():
    net, data = random_problem(61, [3, 4, 2], 1)
    with pytest.raises(ValueError):
        score(net, data.features[0], 2)


def test_score_matches_kron_oracle_per_layer():
    net, data = random_problem(62, [3, 4, 2], 1)
    got = score(net, data.features[0], int(data.labels[0]))
    want = oracle_kron_trace(net, data).per_layer
    for g, w in zip(got, want):
        assert abs(g - w) <= 1e-10 * max(abs(w), 1e-300)


# ------------------------------------------------------- trace_exact


def test_trace_single_sample_equals_score():
    net, data = random_problem(63, [4, 5, 3], 1)
    traces = trace_exact(net, data)
    assert traces.n == 1
    got = score(net, data.features[0], int(data.labels[0]))
    assert np.allclose(traces.per_layer, got, rtol=0, atol=0)


def test_trace_invariant_under_duplication():
    net, data = random_problem(64, [4, 5, 3], 6)
    doubled = Dataset(
        np.vstack([data.features, data.features]),
        np.concatenate([data.labels, data.labels]),
        data.num_classes,
    )
    a = trace_exact(net, data)
    b = trace_exact(net, doubled)
    assert np.allclose(a.per_layer, b.per_layer, rtol=1e-15)


def test_trace_linearity_in_data():
    net, data = random_problem(65, [4, 5, 3], 10)
    part1 = data.subset(np.arange(4))
    part2 = data.subset(np.arange(4, 10))
    whole = np.asarray(trace_exact(net, data).per_layer)
    split = (
        4 * np.asarray(trace_exact(net, part1).per_layer)
        + 6 * np.asarray(trace_exact(net, part2).per_layer)
    ) / 10
    assert rel_dev(split, whole) <= 1e-12


def test_trace_is_bitwise_stable_across_thread_counts():
    net, data = random_problem(66, [5, 6, 4], 33)
    base = trace_exact(net, data, batch_size=7, threads=1)
    for threads in (2, 3, 8):
        other = trace_exact(net, data, batch_size=7, threads=threads)
        assert other.per_layer == base.per_layer


def test_trace_is_tolerance_stable_across_chunkings():
    # different chunk sizes reassociate the sample sum; last bits may move
    net, data = random_problem(66, [5, 6, 4], 33)
    base = trace_exact(net, data)
    for batch_size in (1, 7, 13):
        other = trace_exact(net, data, batch_size=batch_size)
        assert rel_dev(other.per_layer, base.per_layer) <= 1e-12


def test_trace_rejects_empty():
    net, data = random_problem(67, [3, 2], 1)
    with pytest.raises(ValueError):
        trace_exact(net, Dataset(data.features[:0], data.labels[:0], 2))


def test_trace_nonnegative_per_layer():
    for seed in range(5):
        net, data = random_problem(70 + seed, [4, 6, 5, 3], 8)
        assert all(t >= 0.0 for t in trace_exact(net, data).per_layer)


# -------------------------------------------------------- diag_exact


def test_diag_zero_single_layer_closed_form():
    net = Mlp([2, 2], [np.zeros((2, 2))])
    data = Dataset(np.array([[1.0, 0.0]]), np.array([0]), 2)
    got = diag_exact(net, data).per_layer[0]
    assert np.allclose(got, [[0.25, 0.0], [0.25, 0.0]], atol=1e-15)
    assert abs(got.sum() - 0.5) < 1e-15


def test_diag_total_matches_trace_total():
    net, data = random_problem(75, [4, 6, 5, 3], 9)
    traces = trace_exact(net, data)
    diags = diag_exact(net, data)
    assert abs(diags.total() - traces.total()) <= 1e-10 * traces.total()
    for d in range(net.depth):
        layer_sum = diags.per_layer[d].sum()
        assert abs(layer_sum - traces.per_layer[d]) <= 1e-10 * max(
            traces.per_layer[d], 1e-300
        )


def test_diag_matches_kron_oracle_entrywise():
    net, data = random_problem(76, [3, 4, 2], 10)
    got = diag_exact(net, data)
    want = oracle_kron_diag(net, data)
    for g, w in zip(got.per_layer, want.per_layer):
        assert rel_dev(g, w) <= 1e-10


# ------------------------------------------------------ kron oracle


def test_left_factor_symmetric_psd_trace():
    net, data = random_problem(77, [3, 4, 3], 1)
    trace_fwd = forward(net, data.features[0])
    delta = np.eye(net.num_classes)  # last layer backprop matrix
    left = gauss_newton_left_factor(delta, trace_fwd.probs)
    assert np.abs(left - left.T).max() <= 1e-12 * np.abs(left).max()
    assert np.trace(left) >= 0.0
    eigs = np.linalg.eigvalsh(left)
    assert eigs.min() >= -1e-12 * max(eigs.max(), 1e-300)


def test_kron_trace_factorizes():
    rng = Rng(78)
    a = rng.normal((3, 3))
    b = rng.normal((4, 4))
    lhs = trace(kron(a, b))
    rhs = trace(a) * trace(b)
    assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_oracle_trace_agrees_with_fast_path():
    net, data = random_problem(79, [3, 4, 2], 10)
    fast = trace_exact(net, data)
    slow = oracle_kron_trace(net, data)
    for f, s in zip(fast.per_layer, slow.per_layer):
        assert abs(f - s) <= 1e-10 * max(abs(s), 1e-300)


def test_oracle_refuses_oversized_layers():
    net = Mlp([1100, 1000], [np.zeros((1000, 1100))])
    data = Dataset(np.zeros((1, 1100)), np.array([0]), 1000)
    with pytest.raises(ValueError, match="parameters"):
        oracle_kron_trace(net, data)


# ------------------------------------------------------- fd oracle


def test_fd_diag_matches_exact_on_linear_model():
    # depth 1: no ReLU, no kinks anywhere
    net, data = random_problem(80, [4, 3], 6)
    exact = diag_exact(net, data).per_layer[0]
    report = oracle_fd_diag(net, data, eps=1e-4)
    assert not report.kink_flags[0].any()
    assert rel_dev(report.diagonals.per_layer[0], exact) <= 1e-6


def test_fd_second_derivative_on_scalar_logistic():
    # one live weight w, logits (w*x, 0): d2 loss / dw2 = p(1-p) x^2
    w, x = 0.7, 1.3
    net = Mlp([1, 2], [np.array([[w], [0.0]])])
    data = Dataset(np.array([[x]]), np.array([0]), 2)
    p = 1.0 / (1.0 + np.exp(-w * x))
    want = p * (1 - p) * x * x
    report = oracle_fd_diag(net, data, eps=1e-4)
    got = report.diagonals.per_layer[0][0, 0]
    assert abs(got - want) <= 1e-8 * want
    exact = diag_exact(net, data).per_layer[0][0, 0]
    assert abs(exact - want) <= 1e-12 * want


def test_fd_diag_matches_exact_on_relu_net_off_kinks():
    net, data = random_problem(81, [4, 5, 3], 4)
    exact = diag_exact(net, data)
    report = oracle_fd_diag(net, data, eps=1e-4)
    for d in range(net.depth):
        ok = ~report.kink_flags[d]
        ex = exact.per_layer[d][ok]
        fd = report.diagonals.per_layer[d][ok]
        live = np.maximum(np.abs(ex), np.abs(fd)) > 1e-9 * np.abs(ex).max()
        dev = np.abs(fd[live] - ex[live]) / np.maximum(
            np.abs(ex[live]), np.abs(fd[live])
        )
        assert dev.max(initial=0.0) <= 1e-4


def test_fd_rejects_bad_eps():
    net, data = random_problem(82, [3, 2], 2)
    with pytest.raises(ValueError):
        oracle_fd_diag(net, data, eps=0.0)


# ----------------------------------------------------- scaling law


def test_traces_scale_inverse_square():
    net, data = random_problem(83, [4, 5, 4, 3], 5)
    base = trace_exact(net, data)
    for seed in range(5):
        alpha = Alpha.random(net.depth, Rng(900 + seed))
        moved = trace_exact(alpha_transform(net, alpha), data)
        for d in range(net.depth):
            want = base.per_layer[d] / alpha.per_layer[d] ** 2
            assert abs(moved.per_layer[d] - want) <= 1e-10 * want


# ---------------------------------------------------------- clamping


def test_clamp_scalar_tolerates_rounding_noise_only():
    assert _clamp_scalar(-1e-12, 1.0) == 0.0
    assert _clamp_scalar(3.0, 1.0) == 3.0
    with pytest.raises(CurvatureError):
        _clamp_scalar(-1e-5, 1.0)


def test_clamp_array_behaves_like_scalar():
    scale = np.ones(3)
    out = _clamp_array(np.array([1.0, -1e-12, 0.0]), scale)
    assert np.array_equal(out, [1.0, 0.0, 0.0])
    with pytest.raises(CurvatureError):
        _clamp_array(np.array([1.0, -1e-3, 0.0]), scale)


def test_inject_bug_rejects_unknown_hook():
    with pytest.raises(ValueError):
        with inject_bug("no-such-hook"):
            pass
