import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concgram.exceptions import ContractError, ConvergenceError
from concgram.numerics import (RngStream, frobenius_norm, gaussian_matrix,
                               leading_singular_pairs, leading_singular_values,
                               spectral_norm, sym_eig, top_singular_triplet)


def test_sym_eig_identity():
    vals, vecs = sym_eig(np.eye(3))
    np.testing.assert_allclose(vals, [1, 1, 1])
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)


def test_sym_eig_diagonal_gives_canonical_basis():
    vals, vecs = sym_eig(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(vals, [1, 2, 3])
    np.testing.assert_allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]], atol=1e-12)


def test_sym_eig_reconstruction_and_residuals():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 50))
    a = a + a.T
    vals, vecs = sym_eig(a)
    assert np.all(np.diff(vals) >= 0)
    rec = vecs @ np.diag(vals) @ vecs.T
    assert np.linalg.norm(rec - a) <= 1e-10 * np.linalg.norm(a)
    assert np.max(np.abs(vecs.T @ vecs - np.eye(50))) <= 1e-10
    resid = np.linalg.norm(a @ vecs - vecs * vals, axis=0)
    assert np.all(resid <= 1e-8 * np.linalg.norm(a, 2))
    assert abs(np.trace(a) - vals.sum()) <= 1e-10 * np.abs(vals).sum()


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[1.0, 2.0], [0.0, 1.0]])])
def test_sym_eig_rejects_bad_input(bad):
    with pytest.raises(ContractError):
        sym_eig(bad)


def test_top_singular_triplet_diagonal():
    s, u, v = top_singular_triplet(np.diag([3.0, 1.0]))
    assert s == pytest.approx(3.0, rel=1e-10)
    np.testing.assert_allclose(np.abs(u), [1, 0], atol=1e-8)
    np.testing.assert_allclose(np.abs(v), [1, 0], atol=1e-8)


def test_top_singular_triplet_rank_one():
    a = np.array([2.0, 0.0, 0.0])
    b = np.array([0.0, 3.0, 4.0])
    s, _, _ = top_singular_triplet(np.outer(a, b))
    assert s == pytest.approx(10.0, rel=1e-12)


def test_top_singular_triplet_matches_svd_and_eig():
    w = np.random.default_rng(1).standard_normal((100, 100))
    s, u, v = top_singular_triplet(w, tol=1e-10, max_iter=100_000)
    ref = np.linalg.svd(w, compute_uv=False)[0]
    assert s == pytest.approx(ref, rel=1e-8)
    assert np.linalg.norm(w @ v - s * u) <= 1e-8 * s
    assert s == pytest.approx(np.sqrt(sym_eig(w.T @ w)[0][-1]), rel=1e-8)


def test_top_singular_triplet_reports_last_iterate():
    w = np.random.default_rng(2).standard_normal((60, 60))
    with pytest.raises(ConvergenceError) as err:
        top_singular_triplet(w, tol=1e-14, max_iter=3)
    sigma, u, v = err.value.last
    assert sigma > 0 and u.shape == (60,) and v.shape == (60,)


def test_leading_singular_helpers_agree_with_svd():
    w = np.random.default_rng(3).standard_normal((40, 70))
    ref = np.linalg.svd(w, compute_uv=False)[:3]
    np.testing.assert_allclose(leading_singular_values(w, 3), ref, rtol=1e-10)
    sig, U, V = leading_singular_pairs(w, 3)
    np.testing.assert_allclose(sig, ref, rtol=1e-10)
    np.testing.assert_allclose(np.einsum("ij,ik,kj->j", U, w, V), ref, rtol=1e-10)


@pytest.mark.parametrize("w,expected", [
    (np.zeros((3, 4)), (0.0, 0.0)),
    (np.eye(5), (1.0, np.sqrt(5))),
    (np.diag([1.0, 2.0, 2.0]), (2.0, 3.0)),
])
def test_norm_examples(w, expected):
    assert spectral_norm(w) == pytest.approx(expected[0])
    assert frobenius_norm(w) == pytest.approx(expected[1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_spectral_norm_below_frobenius(r, c, seed):
    w = np.random.default_rng(seed).standard_normal((r, c))
    assert 0 <= spectral_norm(w) <= frobenius_norm(w) + 1e-12


def test_gaussian_matrix_moments():
    x = gaussian_matrix(RngStream(7, 0), 1000, 1000)
    assert abs(x.mean()) <= 4e-3
    assert x.var() == pytest.approx(1.0, rel=0.01)


def test_gaussian_matrix_deterministic():
    a = gaussian_matrix(RngStream(9, 3), 20, 30)
    b = gaussian_matrix(RngStream(9, 3), 20, 30)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_matrix(RngStream(9, 4), 20, 30))


def test_substreams_independent_of_evaluation_order():
    root = RngStream(11, 0)
    first = root.substream(1).generator().standard_normal(5)
    second = root.substream(2).generator().standard_normal(5)
    second_again = root.substream(2).generator().standard_normal(5)
    first_again = root.substream(1).generator().standard_normal(5)
    assert np.array_equal(first, first_again)
    assert np.array_equal(second, second_again)
    assert not np.array_equal(first, second)


def test_advanced_returns_new_token():
    s = RngStream(1, 2)
    t = s.advanced(3)
    assert s.counter == 0 and t.counter == 3
    assert not np.array_equal(s.generator().random(4), t.generator().random(4))
