from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secread.basis import (
    apply_perm,
    compose_perm,
    haar_analysis,
    haar_basis,
    haar_synthesis,
    invert_perm,
    is_permutation,
    pad_signal,
    switching_permutation,
    unsort_dictionary,
)


def kron_haar(n):
    """Full-depth orthonormal Haar matrix (rows = basis functions), built recursively."""
    if n == 1:
        return np.array([[1.0]])
    h = kron_haar(n // 2)
    top = np.kron(h, [1.0, 1.0])
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([top, bottom]) / math.sqrt(2.0)


@pytest.mark.parametrize("n", [2, 8, 64, 128])
def test_orthonormal(n):
    B = haar_basis(n).matrix
    np.testing.assert_allclose(B.T @ B, np.eye(n), atol=1e-12)


@pytest.mark.parametrize("n", [4, 16, 32])
def test_matches_recursive_construction(n):
    # the full-depth basis spans the same functions as the Kronecker construction
    B = haar_basis(n, levels=int(math.log2(n))).matrix
    K = kron_haar(n)
    # each of our columns must be (up to sign) one of the oracle's rows
    G = np.abs(K @ B)
    np.testing.assert_allclose(np.sort(G.max(axis=0)), np.ones(n), atol=1e-12)
    np.testing.assert_allclose(G.sum(axis=0), np.ones(n), atol=1e-12)


def test_default_levels_capped():
    assert haar_basis(1024).levels == 7
    assert haar_basis(16).levels == 4


def test_bad_levels():
    with pytest.raises(ValueError):
        haar_basis(16, levels=5)
    with pytest.raises(ValueError):
        haar_basis(16, levels=0)


def test_padding():
    b = haar_basis(12)
    assert b.n == 16 and b.n_orig == 12 and b.padded
    d = np.arange(12.0)
    np.testing.assert_allclose(b.synthesize(b.analyze(d)), d, atol=1e-12)
    np.testing.assert_array_equal(pad_signal(d, 16)[12:], [11.0] * 4)


def test_piecewise_constant_is_sparse():
    d = np.repeat([1.0, 5.0], 64)
    x = haar_basis(128).analyze(d)
    assert np.count_nonzero(np.abs(x) > 1e-9) == 2


@given(st.lists(st.floats(-1e3, 1e3), min_size=32, max_size=32))
@settings(max_examples=50, deadline=None)
def test_analysis_synthesis_roundtrip(values):
    v = np.array(values)
    np.testing.assert_allclose(haar_synthesis(haar_analysis(v, 5), 5), v, atol=1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_switching_sorts(values):
    d = np.array(values)
    perm = switching_permutation(d)
    assert is_permutation(perm, d.size)
    assert np.all(np.diff(apply_perm(perm, d)) >= 0)
    np.testing.assert_array_equal(apply_perm(invert_perm(perm), apply_perm(perm, d)), d)


def test_switching_ties_stable():
    np.testing.assert_array_equal(switching_permutation([2.0, 1.0, 2.0, 1.0]), [1, 3, 0, 2])


def test_switching_rejects_nan():
    with pytest.raises(ValueError):
        switching_permutation([1.0, math.nan])


def test_apply_perm_length_mismatch():
    with pytest.raises(ValueError):
        apply_perm(np.arange(3), np.zeros(4))


def test_compose_perm(rng):
    a, b = rng.permutation(10), rng.permutation(10)
    v = rng.random(10)
    np.testing.assert_array_equal(apply_perm(compose_perm(a, b), v), apply_perm(a, apply_perm(b, v)))


def test_unsort_dictionary_represents_d(rng):
    b = haar_basis(64)
    d = rng.random(64)
    perm = switching_permutation(d)
    x = b.analyze(apply_perm(perm, d))
    np.testing.assert_allclose(unsort_dictionary(perm, b) @ x, d, atol=1e-12)
    # dense form agrees with P^T Psi
    P = np.eye(64)[perm]
    np.testing.assert_allclose(unsort_dictionary(perm, b), P.T @ b.matrix, atol=0)
