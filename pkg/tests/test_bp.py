from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secread.bp import SolverError, basis_pursuit, basis_pursuit_lp, independent_rows


def sparse_instance(seed, m, n, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(0, 1 / np.sqrt(m), (m, n))
    x0 = np.zeros(n)
    x0[rng.choice(n, k, replace=False)] = rng.standard_normal(k)
    return A, x0


def test_zero_measurements():
    res = basis_pursuit(np.ones((2, 4)), np.zeros(2))
    np.testing.assert_array_equal(res.x, np.zeros(4))


def test_one_sparse_4x8():
    A, x0 = sparse_instance(3, 4, 8, 1)
    x = basis_pursuit(A, A @ x0).x
    assert np.linalg.norm(x - x0) <= 1e-5


def test_dense_signal_matches_lp_not_truth():
    A, x0 = sparse_instance(4, 6, 12, 12)
    y = A @ x0
    x = basis_pursuit(A, y).x
    ref = basis_pursuit_lp(A, y)
    assert np.linalg.norm(A @ x - y) <= 1e-6 * np.linalg.norm(y)
    assert abs(np.abs(x).sum() - np.abs(ref).sum()) <= 10 * 1e-6 * np.abs(ref).sum()
    assert np.linalg.norm(x - x0) > 1e-3


@given(st.integers(0, 10_000), st.integers(4, 14), st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_certificate_against_lp(seed, m, k):
    n = 2 * m + 3
    A, x0 = sparse_instance(seed, m, n, k)
    y = A @ x0
    tol = 1e-6
    res = basis_pursuit(A, y, tol)
    ref = basis_pursuit_lp(A, y)
    assert np.linalg.norm(A @ res.x - y) <= tol * np.linalg.norm(y) * (1 + 1e-9)
    l1, l1_ref = np.abs(res.x).sum(), np.abs(ref).sum()
    assert l1 <= l1_ref + 10 * tol * l1_ref


def test_deterministic():
    A, x0 = sparse_instance(7, 10, 30, 3)
    a = basis_pursuit(A, A @ x0).x
    b = basis_pursuit(A, A @ x0).x
    np.testing.assert_array_equal(a, b)


def test_dependent_rows_dropped(caplog):
    A, x0 = sparse_instance(8, 14, 30, 2)
    A = np.vstack([A, A[0] + A[1]])
    res = basis_pursuit(A, A @ x0)
    assert res.rows_used == 14
    assert np.linalg.norm(res.x - x0) < 1e-6
    assert "dependent" in caplog.text


def test_independent_rows():
    A = np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    assert independent_rows(A).size == 2


def test_nonconvergence_carries_residual():
    A, x0 = sparse_instance(9, 10, 40, 8)
    with pytest.raises(SolverError) as exc:
        basis_pursuit(A, A @ x0, tol=1e-6, max_iter=1)
    assert exc.value.residual >= 0


def test_phase_transition_sanity():
    hits = 0
    for seed in range(10):
        A, x0 = sparse_instance(seed, 24, 64, 3)
        x = basis_pursuit(A, A @ x0).x
        hits += np.linalg.norm(x - x0) / np.linalg.norm(x0) < 1e-4
    assert hits >= 9
