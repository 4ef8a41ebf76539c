import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from twrelay.errors import (DefinitenessError, DimensionError,
                            IllConditionedError)
from twrelay.linalg import (gsvd, herm, is_psd, kron, mat, solve_hermitian_psd,
                            svd, vec)

from conftest import crandn

seeds = st.integers(0, 2**32 - 1)


def unitary_error(u):
    return np.abs(herm(u) @ u - np.eye(u.shape[1])).max()


# -- svd ---------------------------------------------------------------------

def test_svd_identity():
    res = svd(np.eye(2))
    np.testing.assert_allclose(res.S, [1, 1])
    np.testing.assert_allclose(res.reconstruct(), np.eye(2), atol=1e-14)


def test_svd_diagonal():
    np.testing.assert_allclose(svd(np.diag([3.0, 0.0])).S, [3, 0])


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_svd_reconstruction_random(seed):
    a = crandn(np.random.default_rng(seed), 4, 2)
    res = svd(a)
    assert np.linalg.norm(res.reconstruct() - a) < 1e-10 * np.linalg.norm(a)
    assert unitary_error(res.U) < 1e-10 and unitary_error(res.V) < 1e-10
    assert np.all(np.diff(res.S) <= 0)


# -- gsvd --------------------------------------------------------------------

def check_gsvd(a, b, res):
    m, n = a.shape
    for x, s, u in ((a, res.Sigma1, res.U1), (b, res.Sigma2, res.U2)):
        err = np.linalg.norm(x - res.V @ s @ herm(u))
        assert err <= 1e-9 * np.linalg.norm(x)
        assert unitary_error(u) < 1e-10
    # Row-space normalization; for M == N it equals the column form
    # Sigma1^T Sigma1 + Sigma2^T Sigma2 = I_N.
    gram = res.Sigma1 @ res.Sigma1.T + res.Sigma2 @ res.Sigma2.T
    np.testing.assert_allclose(gram, np.eye(m), atol=1e-9)
    if m == n:
        gram = res.Sigma1.T @ res.Sigma1 + res.Sigma2.T @ res.Sigma2
        np.testing.assert_allclose(gram, np.eye(n), atol=1e-9)
    assert np.all(res.Sigma1[:m - n] == 0) and np.all(res.Sigma2[n:] == 0)
    for lam, block in ((res.lambda1, res.Sigma1[m - n:]),
                       (res.lambda2, res.Sigma2[:n])):
        np.testing.assert_array_equal(block, np.diag(lam))
        assert np.all(lam >= 0)


def test_gsvd_identity_pair():
    res = gsvd(np.eye(2), np.eye(2))
    check_gsvd(np.eye(2), np.eye(2), res)
    np.testing.assert_allclose(res.lambda1, np.sqrt(0.5) * np.ones(2))


def test_gsvd_zero_second_operand_rejected():
    with pytest.raises(IllConditionedError):
        gsvd(np.eye(2), np.zeros((2, 2)))


def test_gsvd_rejects_too_many_rows():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        gsvd(crandn(rng, 5, 2), crandn(rng, 5, 2))


@given(seeds, st.sampled_from([(2, 2), (3, 3), (4, 4), (3, 2), (4, 2),
                               (5, 3)]))
@settings(max_examples=300, deadline=None)
def test_gsvd_invariants_random(seed, shape):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, *shape), crandn(rng, *shape)
    check_gsvd(a, b, gsvd(a, b))


@given(seeds, st.sampled_from([2, 3, 4]))
@settings(max_examples=100, deadline=None)
def test_gsvd_values_match_generalized_eigenproblem(seed, n):
    # With a shared left factor, A A^H = V S1 S1^T V^H and likewise for B,
    # so the eigenvalues of the pencil (A A^H, A A^H + B B^H) are lambda1^2.
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, n, n), crandn(rng, n, n)
    res = gsvd(a, b)
    aa, bb = a @ herm(a), b @ herm(b)
    ref = scipy.linalg.eigh(aa, aa + bb, eigvals_only=True)
    np.testing.assert_allclose(np.sort(res.lambda1**2), ref, atol=1e-9)
    np.testing.assert_allclose(res.lambda1**2 + res.lambda2**2, 1, atol=1e-9)


# -- kron / vec / mat --------------------------------------------------------

def test_kron_identity():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_hand_expansion():
    k = kron([[1, 2], [3, 4]], [[0, 1], [1, 0]])
    assert k.shape == (4, 4)
    np.testing.assert_array_equal(k[0:2, 2:4], [[0, 2], [2, 0]])
    np.testing.assert_array_equal(k[2:4, 0:2], [[0, 3], [3, 0]])


def test_vec_column_stacking():
    np.testing.assert_array_equal(vec(np.array([[1, 3], [2, 4]])),
                                  [1, 2, 3, 4])


def test_mat_round_trip_and_size_check():
    a = crandn(np.random.default_rng(1), 3, 2)
    np.testing.assert_array_equal(mat(vec(a), 3, 2), a)
    with pytest.raises(DimensionError):
        mat(vec(a), 2, 2)


@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
       st.integers(1, 4))
@settings(max_examples=100, deadline=None)
def test_vectorization_identity(seed, p, q, r, s):
    rng = np.random.default_rng(seed)
    a, x, b = crandn(rng, p, q), crandn(rng, q, r), crandn(rng, r, s)
    lhs = vec(a @ x @ b)
    rhs = kron(b.T, a) @ vec(x)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1, np.linalg.norm(lhs)) \
        * 10


def test_kron_vec_identity_square():
    rng = np.random.default_rng(2)
    a, b, x = crandn(rng, 2, 2), crandn(rng, 2, 2), crandn(rng, 2, 2)
    np.testing.assert_allclose(kron(a, b) @ vec(x), vec(b @ x @ a.T),
                               atol=1e-12)


# -- solve / psd -------------------------------------------------------------

def test_solve_identity_and_diagonal():
    b = crandn(np.random.default_rng(3), 3, 2)
    np.testing.assert_allclose(solve_hermitian_psd(np.eye(3), b), b)
    np.testing.assert_allclose(
        solve_hermitian_psd(np.diag([2.0, 4.0]), np.array([2.0, 4.0])),
        [1, 1])


@given(seeds, st.integers(1, 6))
@settings(max_examples=100, deadline=None)
def test_solve_residual(seed, n):
    rng = np.random.default_rng(seed)
    m = crandn(rng, n, n)
    a = herm(m) @ m + np.eye(n)
    b = crandn(rng, n, 2)
    x = solve_hermitian_psd(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_solve_rejects_indefinite():
    with pytest.raises(DefinitenessError):
        solve_hermitian_psd(np.diag([1.0, -1.0]), np.ones(2))


def test_is_psd_examples():
    assert is_psd(np.eye(3))
    assert not is_psd(np.diag([1.0, -1.0]))
    with pytest.raises(DimensionError):
        is_psd(np.ones((2, 3)))


@given(seeds, st.integers(1, 3), st.integers(1, 3))
@settings(max_examples=100, deadline=None)
def test_kron_of_psd_is_psd(seed, n, k):
    rng = np.random.default_rng(seed)
    p, q = crandn(rng, n, n), crandn(rng, k, k)
    assert is_psd(kron(p @ herm(p), q @ herm(q)), 1e-9)
