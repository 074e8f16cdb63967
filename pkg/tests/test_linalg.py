import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distobs.exceptions import DimensionMismatch, NotStabilizable, RankDeficient, UnstableF
from distobs.linalg import (
    Tolerance,
    annihilator,
    as_matrix,
    care_residual,
    gram_schmidt_rowspace,
    is_detectable,
    numerical_rank,
    orthonormal_complement,
    orthonormal_range_basis,
    solve_care,
    solve_lyapunov,
    spans_equal,
    spectral_abscissa,
    spectrum_real_parts,
    subspace_angle,
)

seeds = st.integers(0, 2**32 - 1)


def test_tolerance_must_be_positive():
    with pytest.raises(ValueError):
        Tolerance(relative=0.0)
    assert Tolerance().threshold(1e6) == pytest.approx(1e-3)


def test_as_matrix_rejects_nonfinite_and_bad_shape():
    with pytest.raises(ValueError):
        as_matrix([[np.nan]])
    with pytest.raises(DimensionMismatch):
        as_matrix(np.zeros((2, 2, 2)))
    with pytest.raises(DimensionMismatch):
        as_matrix(np.zeros((2, 3)), rows=3)


def test_range_basis_identity():
    Q = orthonormal_range_basis(np.eye(3))
    assert Q.shape == (3, 3)
    assert np.allclose(Q.T @ Q, np.eye(3))


def test_range_basis_single_column():
    Q = orthonormal_range_basis([[1.0], [1.0]])
    assert np.allclose(np.abs(Q[:, 0]), [2 ** -0.5, 2 ** -0.5])


def test_range_basis_rank_two_product(rng):
    M = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 3))
    Q = orthonormal_range_basis(M)
    assert Q.shape == (5, 2)
    assert np.linalg.norm(M - Q @ Q.T @ M) < 1e-8


def test_range_basis_zero_matrix():
    assert orthonormal_range_basis(np.zeros((3, 2))).shape == (3, 0)


def test_annihilator_axis():
    Xi = annihilator([[1.0], [0.0]])
    assert Xi.shape == (1, 2)
    assert np.allclose(np.abs(Xi), [[0.0, 1.0]])


def test_annihilator_full_row_rank_is_empty():
    assert annihilator(np.eye(2)).shape == (0, 2)


def test_annihilator_random(rng):
    M = rng.standard_normal((4, 2))
    Xi = annihilator(M)
    assert Xi.shape == (2, 4)
    assert np.linalg.norm(Xi @ M) < 1e-10
    assert np.allclose(Xi @ Xi.T, np.eye(2), atol=1e-10)


def test_annihilator_of_no_columns_is_identity():
    assert np.allclose(annihilator(np.zeros((3, 0))), np.eye(3))


def test_gram_schmidt_scaling():
    Tt, T = gram_schmidt_rowspace([[2.0, 0.0, 0.0]])
    assert np.allclose(Tt, [[0.5]])
    assert np.allclose(T, [[1], [0], [0]])


def test_gram_schmidt_identity():
    Tt, T = gram_schmidt_rowspace(np.eye(2))
    assert np.allclose(Tt, np.eye(2)) and np.allclose(T, np.eye(2))


def test_gram_schmidt_defining_equation():
    M = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    Tt, T = gram_schmidt_rowspace(M)
    assert np.linalg.norm(Tt @ M - T.T) < 1e-10
    assert np.linalg.norm(T.T @ T - np.eye(2)) < 1e-10


def test_gram_schmidt_rank_deficient():
    with pytest.raises(RankDeficient):
        gram_schmidt_rowspace([[1.0, 2.0], [2.0, 4.0]])


def test_care_scalar_observer_closed_form():
    X = solve_care([[0.0]], [[1.0]], [[1.0]], shift=0.2, form="observer")
    assert X[0, 0] == pytest.approx(0.2 + np.sqrt(1.04), abs=1e-12)


def test_care_zero_forcing():
    X = solve_care(-np.eye(2), np.zeros((2, 0)), np.zeros((2, 2)))
    assert np.allclose(X, 0.0)


def test_care_nine_state_control():
    from distobs.scenarios import builtin_scenario

    cfg = builtin_scenario("example2")
    A = np.array(cfg.A)
    B = np.hstack([np.array(ch.B) for ch in cfg.channels])
    X = solve_care(A, B, np.eye(9), shift=0.2)
    assert np.linalg.norm(care_residual(A, B, np.eye(9), X, 0.2)) < 1e-8
    assert spectral_abscissa(A + 0.2 * np.eye(9) - B @ B.T @ X) < 0
    assert np.allclose(X, X.T, atol=1e-10)


def test_care_matches_scipy(rng):
    import scipy.linalg as sla

    for _ in range(20):
        A = rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 2))
        X = solve_care(A, B, np.eye(4), shift=0.3)
        Xs = sla.solve_continuous_are(A + 0.3 * np.eye(4), B, np.eye(4), np.eye(2))
        assert np.allclose(X, Xs, atol=1e-8)


def test_care_not_stabilizable():
    with pytest.raises(NotStabilizable):
        solve_care(np.eye(2), np.array([[1.0], [0.0]]), np.eye(2))


def test_lyapunov_diagonal():
    assert np.allclose(solve_lyapunov(-np.eye(2), 2 * np.eye(2)), np.eye(2))


def test_lyapunov_residual():
    F = np.array([[0.0, 1.0], [-1.0, -1.0]])
    P = solve_lyapunov(F, np.eye(2))
    assert np.linalg.norm(F.T @ P + P @ F + np.eye(2)) < 1e-9
    assert np.allclose(P, P.T)


def test_lyapunov_unstable():
    with pytest.raises(UnstableF):
        solve_lyapunov(np.eye(2), np.eye(2))


def test_spectrum_examples():
    assert spectrum_real_parts(np.diag([-1.0, -2.0])) == [-1.0, -2.0]
    assert np.allclose(spectrum_real_parts([[0.0, 1.0], [-1.0, 0.0]]), [0.0, 0.0])
    comp = np.array([[0, 1, 0], [0, 0, 1], [-6, -11, -6]], float)
    assert np.allclose(spectrum_real_parts(comp), [-1, -2, -3], atol=1e-8)


def test_spans_equal_examples():
    e1, e2 = np.eye(2)[:, :1], np.eye(2)[:, 1:]
    assert spans_equal(e1, 2 * e1)
    assert not spans_equal(e1, e2)
    assert spans_equal(np.eye(2), np.array([[1.0, 1.0], [1.0, -1.0]]))


def test_subspace_angle_dimensions():
    assert subspace_angle(np.eye(3)[:, :1], np.eye(3)[:, :2]) == pytest.approx(np.pi / 2)
    assert subspace_angle(np.eye(3)[:, :2], np.eye(3)[:, [1, 0]]) < 1e-12


def test_is_detectable():
    assert is_detectable(np.diag([-1.0, 1.0]), [[0.0, 1.0]])
    assert not is_detectable(np.diag([-1.0, 1.0]), [[1.0, 0.0]])


# -- properties ---------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 6), st.integers(0, 6))
def test_range_basis_properties(seed, r, c, k):
    rng = np.random.default_rng(seed)
    k = min(k, r, c)
    M = rng.standard_normal((r, k)) @ rng.standard_normal((k, c)) if k else np.zeros((r, c))
    Q = orthonormal_range_basis(M)
    assert Q.shape[1] == numerical_rank(M)
    assert np.allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-10)
    assert np.linalg.norm(M - Q @ Q.T @ M) <= 1e-9 * max(1.0, np.linalg.norm(M))


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_annihilator_properties(seed, r, c):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((r, c))
    Xi = annihilator(M)
    assert np.linalg.norm(Xi @ M) < 1e-10
    assert Xi.shape[0] + numerical_rank(M) == r
    T = orthonormal_complement(M)
    assert np.allclose(T.T @ T, np.eye(T.shape[1]), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 5))
def test_solver_symmetry_and_residuals(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, 1))
    X = solve_care(A, B, np.eye(n), shift=0.2)
    assert np.allclose(X, X.T, atol=1e-10)
    assert np.linalg.norm(care_residual(A, B, np.eye(n), X, 0.2)) < 1e-8
    F = A - (spectral_abscissa(A) + 1.0) * np.eye(n)
    P = solve_lyapunov(F, np.eye(n))
    assert np.allclose(P, P.T, atol=1e-10)
    assert np.linalg.norm(F.T @ P + P @ F + np.eye(n)) < 1e-9 * max(1.0, np.linalg.norm(P))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 6), st.integers(1, 3))
def test_spans_equal_is_equivalence(seed, n, k):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    Ta = rng.standard_normal((n, k))
    Tb = Ta @ rng.standard_normal((k, k))
    Tc = Tb @ rng.standard_normal((k, k))
    Td = rng.standard_normal((n, k))
    assert spans_equal(Ta, Ta)
    assert spans_equal(Ta, Tb) == spans_equal(Tb, Ta)
    assert spans_equal(Ta, Tb) and spans_equal(Tb, Tc) and spans_equal(Ta, Tc)
    assert spans_equal(Ta, Td) == spans_equal(Td, Ta)
