"""Orthonormal Haar wavelet synthesis matrices and sorting permutations.

The collector represents a reading vector ``d`` as ``d = P^{-1} Psi x`` where
``P`` sorts ``d`` ascending and ``Psi`` is a multi-level Haar synthesis
matrix.  A sorted vector is monotone, hence close to piecewise constant, and
its Haar coefficients ``x`` are compressible.

Permutations are always kept as index arrays: ``perm[k]`` is the original
position of the k-th smallest entry, so ``apply_perm(perm, d) == d[perm]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DEFAULT_LEVELS = 7


@dataclass(frozen=True)
class WaveletBasis:
    """Haar synthesis operator for signals of (padded) length ``n``.

    Attributes
    ----------
    n : int
        Padded, power-of-two signal length.
    levels : int
        Number of decomposition levels.
    matrix : ndarray, shape (n, n)
        Synthesis matrix; column ``j`` is the j-th basis function, ordered
        coarsest-first (approximation, then details from coarse to fine).
    n_orig : int
        Length of the unpadded signal. Rows ``n_orig:`` are padding.
    """

    n: int
    levels: int
    matrix: np.ndarray = field(repr=False)
    n_orig: int

    @property
    def padded(self) -> bool:
        return self.n != self.n_orig

    def synthesize(self, x: np.ndarray) -> np.ndarray:
        """Return ``Psi @ x`` truncated to the original length."""
        return (self.matrix @ x)[: self.n_orig]

    def analyze(self, d: np.ndarray) -> np.ndarray:
        """Return the Haar coefficients of ``d`` (edge-padded if needed)."""
        return self.matrix.T @ pad_signal(d, self.n)


def _haar_step(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    even, odd = v[0::2], v[1::2]
    return (even + odd) / math.sqrt(2.0), (even - odd) / math.sqrt(2.0)


def haar_analysis(v: np.ndarray, levels: int) -> np.ndarray:
    """Multi-level orthonormal Haar analysis of a power-of-two length vector.

    Output layout is ``[approx_L, detail_L, detail_{L-1}, ..., detail_1]``.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if n & (n - 1) or n == 0:
        raise ValueError(f"length must be a power of two, got {n}")
    if levels > int(math.log2(n)):
        raise ValueError(f"levels={levels} exceeds log2(n)={int(math.log2(n))}")
    details = []
    approx = v
    for _ in range(levels):
        approx, det = _haar_step(approx)
        details.append(det)
    return np.concatenate([approx] + details[::-1])


def haar_synthesis(x: np.ndarray, levels: int) -> np.ndarray:
    """Inverse of :func:`haar_analysis`."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    n_approx = n >> levels
    approx = x[:n_approx]
    pos = n_approx
    for _ in range(levels):
        det = x[pos : pos + approx.shape[0]]
        pos += approx.shape[0]
        out = np.empty(2 * approx.shape[0])
        out[0::2] = (approx + det) / math.sqrt(2.0)
        out[1::2] = (approx - det) / math.sqrt(2.0)
        approx = out
    return approx


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def pad_signal(d: np.ndarray, n: int) -> np.ndarray:
    """Pad ``d`` to length ``n`` by replicating its last value."""
    d = np.asarray(d, dtype=float)
    if d.shape[0] == n:
        return d
    if d.shape[0] > n:
        raise ValueError("signal longer than basis")
    return np.concatenate([d, np.full(n - d.shape[0], d[-1])])


def haar_basis(n: int, levels: int | None = None) -> WaveletBasis:
    """Build the orthonormal Haar synthesis matrix for length-``n`` signals.

    Non power-of-two ``n`` is padded up to the next power of two; the padding
    is recorded in ``n_orig``.  ``levels`` defaults to ``log2(n_padded)``
    capped at 7.
    """
    if n < 1:
        raise ValueError("n must be positive")
    n_pad = max(2, next_pow2(n))
    max_levels = int(math.log2(n_pad))
    if levels is None:
        levels = min(max_levels, MAX_DEFAULT_LEVELS)
    if levels < 1 or levels > max_levels:
        raise ValueError(f"levels must be in [1, {max_levels}], got {levels}")
    eye = np.eye(n_pad)
    matrix = np.column_stack([haar_synthesis(eye[:, j], levels) for j in range(n_pad)])
    return WaveletBasis(n=n_pad, levels=levels, matrix=matrix, n_orig=n)


# -- switching permutations -------------------------------------------------


def switching_permutation(d: np.ndarray) -> np.ndarray:
    """Index map sorting ``d`` ascending; ties keep their original order."""
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("reading vector must be finite")
    return np.argsort(d, kind="stable")


def apply_perm(perm: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``H v`` for the permutation ``H`` stored as ``perm``."""
    perm = np.asarray(perm)
    v = np.asarray(v)
    if perm.shape[0] != v.shape[0]:
        raise ValueError(f"length mismatch: perm {perm.shape[0]} vs vector {v.shape[0]}")
    return v[perm]


def invert_perm(perm: np.ndarray) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    return inv


def compose_perm(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Index map of ``outer @ inner`` (apply ``inner`` first)."""
    return np.asarray(inner)[np.asarray(outer)]


def is_permutation(perm: np.ndarray, n: int | None = None) -> bool:
    perm = np.asarray(perm)
    if n is not None and perm.shape[0] != n:
        return False
    return bool(np.array_equal(np.sort(perm), np.arange(perm.shape[0])))


def unsort_dictionary(perm: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    """Dense ``H^{-1} Psi`` restricted to the ``len(perm)`` real rows.

    With ``perm`` sorting ``d`` ascending, ``d = H^{-1} Psi x`` means the k-th
    smallest reading lives at position ``perm[k]``.  Padding rows (if any)
    always sit at the top of the sorted order, after the real entries.
    """
    n = basis.n_orig
    perm = np.asarray(perm)
    if perm.shape[0] != n:
        raise ValueError(f"permutation length {perm.shape[0]} != basis length {n}")
    out = np.empty((n, basis.n))
    out[perm] = basis.matrix[:n]
    return out
