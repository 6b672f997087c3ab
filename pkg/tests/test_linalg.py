import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astromorph import oracles
from astromorph.linalg import (DimensionError, NonFiniteError, SeededRng, as_matrix, col_sum, elementwise,
                               eye, hadamard, matmul, ones, read_matrix_csv, row_sum, scale, transpose,
                               write_matrix_csv, zeros)


def test_identity_times_a(rng):
    A = rng.normal((3, 4))
    assert np.array_equal(matmul(eye(3), A), A)


def test_zeros_times_anything(rng):
    assert np.array_equal(matmul(zeros(2, 3), rng.normal((3, 4))), zeros(2, 4))


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal((5, 4)), rng.normal((4, 3))
    assert np.max(np.abs(matmul(a, b) - oracles.matmul_loop(a, b))) < 1e-12


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(ones(2, 3), ones(2, 3))


def test_hadamard_cases(rng):
    a = rng.normal((4, 3))
    assert np.array_equal(hadamard(a, ones(4, 3)), a)
    assert np.array_equal(hadamard(a, zeros(4, 3)), zeros(4, 3))
    col = rng.normal((4, 1))
    assert np.max(np.abs(hadamard(a, col) - oracles.row_scale_loop(a, col))) < 1e-15


def test_hadamard_rejects_other_broadcasts():
    with pytest.raises(DimensionError):
        hadamard(ones(4, 3), ones(1, 3))
    with pytest.raises(DimensionError):
        hadamard(ones(4, 3), ones(3, 1))


def test_transpose_involution_bit_identical(rng):
    A = rng.normal((5, 7))
    assert np.array_equal(transpose(transpose(A)), A)
    assert transpose(A).flags["C_CONTIGUOUS"]


def test_sums():
    assert np.array_equal(row_sum(ones(3, 4)), np.full((3, 1), 4.0))
    assert col_sum(ones(3, 4)).shape == (1, 4)


def test_col_sum_loop(rng):
    A = rng.normal((6, 5))
    assert np.max(np.abs(col_sum(A) - oracles.col_sum_loop(A))) < 1e-13


def test_elementwise_and_scale(rng):
    A = rng.normal((2, 3))
    assert np.array_equal(elementwise(A, np.abs), np.abs(A))
    assert np.array_equal(scale(A, 2.0), 2.0 * A)
    with pytest.raises(NonFiniteError):
        elementwise(A, lambda x: x / 0.0)


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(NonFiniteError):
        scale(ones(1, 1) * 1e308, 10.0)


def test_as_matrix_shapes():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(DimensionError):
        as_matrix(np.zeros((2, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_matmul_associative(seed, n, k, l, m):
    r = SeededRng(seed)
    a, b, c = r.normal((n, k)), r.normal((k, l)), r.normal((l, m))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_rng_reproducible_and_children_independent():
    a, b = SeededRng(5), SeededRng(5)
    assert np.array_equal(a.normal((3,)), b.normal((3,)))
    # a child stream does not depend on draws taken from the parent
    p = SeededRng(5)
    c1 = p.child("x").normal((4,))
    p.normal((100,))
    assert np.array_equal(c1, p.child("x").normal((4,)))
    assert not np.array_equal(c1, p.child("y").normal((4,)))
    assert not np.array_equal(SeededRng(5).normal((3,)), SeededRng(6).normal((3,)))


def test_rng_frozen_draw():
    # frozen so a silent change of generator or key derivation is caught
    assert SeededRng(0).integers(0, 1000, size=4).tolist() == [563, 524, 660, 856]


def test_csv_roundtrip(tmp_path, rng):
    A = rng.normal((3, 5))
    write_matrix_csv(tmp_path / "a.csv", A)
    text = (tmp_path / "a.csv").read_text()
    assert text.splitlines()[0] == "3,5"
    assert np.array_equal(read_matrix_csv(tmp_path / "a.csv"), A)


def test_csv_bad_header(tmp_path):
    (tmp_path / "b.csv").write_text("3,2\n1,2\n")
    with pytest.raises(DimensionError):
        read_matrix_csv(tmp_path / "b.csv")
