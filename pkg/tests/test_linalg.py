import numpy as np
import pytest

from minsharp.linalg import (
    Rng,
    as_matrix,
    frobenius_sq,
    gaussian_fill,
    hadamard,
    kron,
    matmul,
    outer,
    square,
    trace,
    transpose,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    m = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_case():
    a = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    b = as_matrix([[1.0], [1.0]])
    assert np.array_equal(matmul(a, b), [[3.0], [7.0]])


def test_matmul_matches_triple_loop():
    rng = Rng(11)
    a = rng.normal((5, 7))
    b = rng.normal((7, 3))
    got = matmul(a, b)
    want = naive_matmul(a, b)
    assert np.abs(got - want).max() <= 1e-15 * np.abs(want).max()


def test_matmul_dimension_error_names_shapes():
    with pytest.raises(ValueError, match="2x3.*4x2"):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_frobenius_sq_zero_and_hand():
    assert frobenius_sq(np.zeros((3, 4))) == 0.0
    assert frobenius_sq(as_matrix([[3.0, 4.0]])) == 25.0


def test_frobenius_sq_rank_one_product():
    rng = Rng(12)
    x = rng.normal((6,))
    y = rng.normal((4,))
    lhs = frobenius_sq(outer(x, y))
    rhs = frobenius_sq(x[:, None]) * frobenius_sq(y[:, None])
    assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_outer_basis_and_hand():
    e1 = np.array([1.0, 0.0])
    assert np.array_equal(outer(e1, e1), [[1.0, 0.0], [0.0, 0.0]])
    got = outer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(got, [[3.0, 4.0], [6.0, 8.0]])


def test_outer_rejects_matrices():
    with pytest.raises(ValueError):
        outer(np.zeros((2, 1)), np.zeros(2))


def test_trace_kron_identity():
    rng = Rng(13)
    a = rng.normal((4, 4))
    b = rng.normal((3, 3))
    lhs = trace(kron(a, b))
    rhs = trace(a) * trace(b)
    assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_trace_cyclic_identity():
    rng = Rng(14)
    a = rng.normal((5, 3))
    b = rng.normal((3, 5))
    lhs = trace(matmul(a, b))
    rhs = trace(matmul(b, a))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


def test_frobenius_is_trace_of_gram():
    rng = Rng(15)
    m = rng.normal((4, 6))
    lhs = frobenius_sq(m)
    rhs = trace(matmul(m, transpose(m)))
    assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_trace_requires_square():
    with pytest.raises(ValueError):
        trace(np.zeros((2, 3)))


def test_elementwise_helpers():
    a = as_matrix([[1.0, -2.0], [3.0, 4.0]])
    assert np.array_equal(square(a), a * a)
    assert np.array_equal(hadamard(a, a), a * a)
    with pytest.raises(ValueError):
        hadamard(a, np.zeros((3, 2)))


def test_rng_same_seed_same_stream():
    a = Rng(99).normal((4, 4))
    b = Rng(99).normal((4, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, Rng(100).normal((4, 4)))


def test_rng_split_is_deterministic_and_disjoint():
    base = Rng(5)
    s1 = base.split(0x1234).normal((8,))
    s2 = Rng(5).split(0x1234).normal((8,))
    assert np.array_equal(s1, s2)
    assert not np.array_equal(s1, Rng(5).split(0x9999).normal((8,)))


def test_gaussian_fill_shape_and_scale():
    m = gaussian_fill(Rng(1), 2000, 3, 0.5)
    assert m.shape == (2000, 3)
    assert abs(m.std() - 0.5) < 0.05
