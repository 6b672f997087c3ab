import numpy as np
import pytest

from astromorph import oracles
from astromorph.features import FeatureMapKind
from astromorph.linalg import DimensionError, SeededRng
from astromorph.positional import PositionalBasis, basis_transform, build_distance_matrix, edges, w_astro


def _basis(M, clip_k=8):
    m, n = M.shape
    return PositionalBasis(m, n, M, build_distance_matrix(n, clip_k), clip_k)


def test_distance_matrix_examples():
    assert np.array_equal(build_distance_matrix(1, 8), [[0.0]])
    expected = [[0, .5, 1], [-.5, 0, .5], [-1, -.5, 0]]
    assert np.array_equal(build_distance_matrix(3, 2), expected)


@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_distance_matrix_properties(n):
    P = build_distance_matrix(n, 3)
    assert np.all(np.diag(P) == 0)
    assert np.array_equal(P, -P.T)
    assert np.max(np.abs(P)) <= 1
    assert np.array_equal(P, oracles.distance_matrix(n, 3))


def test_distance_matrix_rejects_bad_args():
    with pytest.raises(ValueError):
        build_distance_matrix(0, 2)
    with pytest.raises(ValueError):
        build_distance_matrix(3, 0)


def test_identity_basis():
    b = _basis(np.eye(5), clip_k=2)
    assert np.allclose(basis_transform(b), b.p_pos)
    assert np.allclose(edges(b), b.p_pos)


def test_zero_basis():
    b = _basis(np.zeros((3, 6)))
    assert np.array_equal(basis_transform(b), np.zeros((3, 3)))
    assert np.array_equal(edges(b), np.zeros((6, 3)))
    assert np.array_equal(w_astro(b), np.ones((3, 6)))
    assert np.array_equal(w_astro(b, FeatureMapKind.IDENTITY), np.zeros((3, 6)))


def test_random_basis_matches_composition_oracle():
    rng = SeededRng(3)
    b = PositionalBasis.init(6, 4, rng)
    D_ref = oracles.matmul_loop(oracles.matmul_loop(b.M, b.p_pos), b.M.T)
    assert np.max(np.abs(basis_transform(b) - D_ref)) < 1e-14
    a_ref = oracles.matmul_loop(b.M.T, D_ref)
    assert np.max(np.abs(edges(b) - a_ref)) < 1e-14
    W = w_astro(b)
    assert W.shape == (6, 4)
    assert np.all(W > 0)
    assert np.max(np.abs(W - oracles.w_astro_loop(b.M, b.p_pos))) < 1e-14


def test_init_scale():
    b = PositionalBasis.init(10, 16, SeededRng(0))
    assert np.max(np.abs(b.M)) <= 1 / 4


def test_sliced_and_bounds():
    b = PositionalBasis.init(3, 8, SeededRng(0))
    M, P = b.sliced(5)
    assert M.shape == (3, 5) and P.shape == (5, 5)
    assert np.array_equal(P, build_distance_matrix(5))
    assert w_astro(b, n=5).shape == (3, 5)
    with pytest.raises(DimensionError):
        b.sliced(9)


def test_dimension_checks():
    with pytest.raises(DimensionError):
        PositionalBasis(3, 4, np.zeros((3, 5)), build_distance_matrix(4))
    with pytest.raises(DimensionError):
        PositionalBasis(3, 4, np.zeros((3, 4)), build_distance_matrix(5))


def test_save_load(tmp_path):
    b = PositionalBasis.init(4, 6, SeededRng(1))
    b.save(tmp_path)
    c = PositionalBasis.load(tmp_path)
    assert np.array_equal(b.M, c.M) and np.array_equal(b.p_pos, c.p_pos)
