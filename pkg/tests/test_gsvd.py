import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import assume, given, settings, strategies as st

from fdeminv.errors import CommonNullspace, TruncationOutOfRange
from fdeminv.gsvd import gsvd, tgsvd_step
from fdeminv.regops import build_deriv


def reconstruction_errors(A, L, f):
    ea = np.linalg.norm(A - f.U @ np.diag(f.c) @ f.Zinv) / np.linalg.norm(A)
    el = np.linalg.norm(L - f.V @ np.diag(f.s) @ f.Zinv) / np.linalg.norm(L)
    return ea, el


@settings(max_examples=40, deadline=None)
@given(
    r=st.integers(1, 100),
    n=st.integers(2, 40),
    p=st.sampled_from([0, 1, 2]),
    seed=st.integers(0, 2**32 - 1),
)
def test_reconstruction_and_normalisation(r, n, p, seed):
    assume(r >= p)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((r, n))
    L = build_deriv(p, n) if n > p else np.eye(n)
    f = gsvd(A, L)
    ea, el = reconstruction_errors(A, L, f)
    assert ea <= 1e-10 and el <= 1e-10
    assert np.allclose(f.c**2 + f.s**2, 1, atol=1e-12)
    assert np.all(np.diff(f.c) >= 0)
    assert np.allclose(f.Z @ f.Zinv, np.eye(n), atol=1e-8)


def test_identity_pair_has_unit_values():
    f = gsvd(np.eye(5), np.eye(5))
    assert np.allclose(f.ratios(), 1)


def test_diagonal_pair_matches_pencil_eigenvalues():
    A = np.diag([2.0, 1.0])
    f = gsvd(A, np.eye(2))
    assert np.allclose(np.sort(f.ratios()), [1, 2])
    pencil = np.sqrt(sla.eigh(A.T @ A, np.eye(2), eigvals_only=True))
    assert np.allclose(np.sort(f.ratios()), np.sort(pencil))


def test_random_pair_matches_pencil():
    rng = np.random.default_rng(2)
    A, L = rng.standard_normal((40, 20)), rng.standard_normal((25, 20))
    f = gsvd(A, L)
    ref = np.sqrt(sla.eigh(A.T @ A, L.T @ L, eigvals_only=True))
    assert np.allclose(np.sort(f.ratios()), ref, rtol=1e-8)


def test_derivative_pair_has_nullspace_block_last():
    rng = np.random.default_rng(4)
    f = gsvd(rng.standard_normal((40, 20)), build_deriv(2, 20))
    assert f.p == 18
    assert np.allclose(f.c[18:], 1) and np.all(f.s[18:] == 0)


def test_wide_jacobian():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((12, 20))
    f = gsvd(A, build_deriv(2, 20))
    assert f.kappa == 12 and f.max_truncation == 10
    assert max(reconstruction_errors(A, build_deriv(2, 20), f)) < 1e-10


def test_common_nullspace_detected():
    # both annihilate e_3
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(CommonNullspace):
        gsvd(A, build_deriv(1, 3)[:1])
    with pytest.raises(CommonNullspace):
        gsvd(A[:1], build_deriv(1, 3)[:1])


@settings(max_examples=30, deadline=None)
@given(r=st.integers(5, 60), n=st.integers(2, 25), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_tsvd_reduction(r, n, seed, data):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((r, n))
    rhs = rng.standard_normal(r)
    k = data.draw(st.integers(1, min(r, n)))
    f = gsvd(A, np.eye(n))
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    ref = -Vt[:k].T @ ((U[:, :k].T @ rhs) / S[:k])
    assert np.allclose(tgsvd_step(f, rhs, k), ref, atol=1e-8 * max(1, np.abs(ref).max()))


def test_full_truncation_is_least_squares():
    rng = np.random.default_rng(6)
    A, rhs = rng.standard_normal((30, 8)), rng.standard_normal(30)
    q = tgsvd_step(gsvd(A, np.eye(8)), rhs, 8)
    assert np.allclose(q, -np.linalg.solve(A.T @ A, A.T @ rhs), atol=1e-8)


def test_zero_residual_gives_zero_step():
    f = gsvd(np.random.default_rng(0).standard_normal((10, 6)), build_deriv(1, 6))
    assert np.array_equal(tgsvd_step(f, np.zeros(10), 3), np.zeros(6))


def test_fewer_components_give_smoother_steps():
    A = np.array([[3.0, 1.0], [1.0, 2.0], [0.5, 0.5]])
    L = np.eye(2)
    rhs = np.array([1.0, -2.0, 0.5])
    f = gsvd(A, L)
    q1, q2 = tgsvd_step(f, rhs, 1), tgsvd_step(f, rhs, 2)
    assert np.linalg.norm(L @ q1) <= np.linalg.norm(L @ q2)


def test_truncation_bounds():
    f = gsvd(np.random.default_rng(0).standard_normal((12, 20)), build_deriv(2, 20))
    with pytest.raises(TruncationOutOfRange):
        tgsvd_step(f, np.zeros(12), 11)
    with pytest.raises(TruncationOutOfRange):
        tgsvd_step(f, np.zeros(12), 0)


def test_augmented_pair_admits_fifteen():
    rng = np.random.default_rng(1)
    J = 1e-3 * rng.standard_normal((24, 20))
    A = np.vstack([J, 1e-2 * np.eye(20)])
    f = gsvd(A, build_deriv(2, 20))
    assert f.max_truncation == 18
    assert tgsvd_step(f, rng.standard_normal(44), 15).shape == (20,)
