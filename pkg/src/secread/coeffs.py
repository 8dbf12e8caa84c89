"""Per-node Gaussian coefficient streams and sensing-matrix tools.

Every node and the collector derive the same coefficients from the node ID
alone, so the sensing matrix never travels over the network.  The generator
is pinned (see ``docs/protocol.md``):

* seed   = first 8 bytes (big-endian) of ``SHA-256(b"secread/phi/v1" || id_be8)``
* PRNG   = PCG64 seeded with that integer, consumed via ``random_raw``
* normal = Box-Muller on pairs of 53-bit uniforms
* phi(id, l, m) = stream(id)[l - 1] / sqrt(m)

so entry ``(l, j)`` of the ``m x n`` matrix is Gaussian with variance ``1/m``
and row ``l`` is the same for every ``m``, up to scaling.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

PROTOCOL_TAG = b"secread/phi/v1"
ENUMERATION_LIMIT = 10**6


class EnumerationLimitError(ValueError):
    """Raised when an exact estimator would enumerate too many supports."""


def stream_seed(node_id: int) -> int:
    digest = hashlib.sha256(PROTOCOL_TAG + int(node_id).to_bytes(8, "big")).digest()
    return int.from_bytes(digest[:8], "big")


@lru_cache(maxsize=4096)
def _stream_block(node_id: int, length: int) -> np.ndarray:
    n_pairs = (length + 1) // 2
    raw = np.random.PCG64(stream_seed(node_id)).random_raw(2 * n_pairs)
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * n_pairs)
    out[0::2] = radius * np.cos(2.0 * np.pi * u2)
    out[1::2] = radius * np.sin(2.0 * np.pi * u2)
    out = out[:length]
    out.setflags(write=False)
    return out


def _round_up(length: int) -> int:
    # cache on power-of-two block sizes so different m share one entry
    return max(64, 1 << (length - 1).bit_length())


def gaussian_stream(node_id: int, length: int) -> np.ndarray:
    """First ``length`` standard-normal draws of node ``node_id``'s stream."""
    return _stream_block(int(node_id), _round_up(length))[:length]


def phi(node_id: int, l: int, m: int) -> float:
    """Coefficient in row ``l`` (1-based) for ``node_id`` at compression ``m``."""
    if l < 1:
        raise ValueError("row index l is 1-based")
    if m < 1:
        raise ValueError("m must be positive")
    return float(gaussian_stream(node_id, l)[l - 1] / math.sqrt(m))


def phi_column(node_id: int, m: int) -> np.ndarray:
    """All ``m`` coefficients of ``node_id`` (rows 1..m)."""
    return gaussian_stream(node_id, m) / math.sqrt(m)


def quantize(values, scale: int):
    """Round ``scale * values`` to Python ints (elementwise for arrays)."""
    if np.ndim(values) == 0:
        return int(round(float(values) * scale))
    return [int(v) for v in np.rint(np.asarray(values, dtype=float) * scale)]


@dataclass(frozen=True)
class SensingMatrix:
    m: int
    n: int
    entries: np.ndarray = field(repr=False)
    column_ids: tuple[int, ...]

    def quantized(self, scale: int) -> list[list[int]]:
        """Integer matrix ``round(scale * Phi)`` as nested Python ints."""
        return [quantize(row, scale) for row in self.entries]

    def column(self, node_id: int) -> np.ndarray:
        return self.entries[:, self.column_ids.index(node_id)]


def assemble_sensing_matrix(ids: Sequence[int], m: int) -> SensingMatrix:
    ids = tuple(int(i) for i in ids)
    if not ids:
        raise ValueError("need at least one node id")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    if m < 1:
        raise ValueError("m must be positive")
    entries = np.column_stack([phi_column(i, m) for i in ids])
    entries.setflags(write=False)
    return SensingMatrix(m=m, n=len(ids), entries=entries, column_ids=ids)


# -- RIP and restricted norms -----------------------------------------------


def _check_enumerable(n: int, k: int) -> None:
    if math.comb(n, k) > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"C({n},{k}) = {math.comb(n, k)} supports exceeds limit {ENUMERATION_LIMIT}"
        )


def estimate_rip(
    A: np.ndarray,
    k: int,
    mode: str = "exact",
    samples: int = 10_000,
    seed: int = 0,
) -> float:
    """Restricted isometry constant of order ``k``.

    ``exact`` enumerates every k-column support and returns
    ``max(1 - smin^2, smax^2 - 1)``.  ``montecarlo`` draws ``samples`` random
    unit-norm k-sparse vectors and returns the largest ``| ||Az||^2 - 1 |``,
    which can only under-estimate the true constant.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    if mode == "exact":
        _check_enumerable(n, k)
        delta = 0.0
        for support in itertools.combinations(range(n), k):
            s = np.linalg.svd(A[:, support], compute_uv=False)
            smin = s[-1] if len(s) == k else 0.0
            delta = max(delta, 1.0 - smin**2, s[0] ** 2 - 1.0)
        return float(delta)
    if mode == "montecarlo":
        rng = np.random.default_rng(seed)
        delta = 0.0
        for _ in range(samples):
            support = rng.choice(n, size=k, replace=False)
            z = rng.standard_normal(k)
            z /= np.linalg.norm(z)
            delta = max(delta, abs(float(np.sum((A[:, support] @ z) ** 2)) - 1.0))
        return delta
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class NormEstimate:
    """Restricted spectral norm estimate; ``upper`` always bounds the truth."""

    value: float
    upper: float
    mode: str


def submatrix_norm(X: np.ndarray, k: int, mode: str = "exact") -> NormEstimate:
    """Largest spectral norm over all k-column submatrices of ``X``.

    ``greedy`` grows a support one column at a time, keeping the column that
    maximises the spectral norm, and reports that as a lower estimate; the full
    spectral norm is the upper bound in both modes.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    full = float(np.linalg.norm(X, 2)) if X.size else 0.0
    if k == n:
        return NormEstimate(full, full, mode)
    if mode == "exact":
        _check_enumerable(n, k)
        best = max(
            float(np.linalg.norm(X[:, list(s)], 2)) for s in itertools.combinations(range(n), k)
        )
        return NormEstimate(best, best, mode)
    if mode == "greedy":
        chosen = [int(np.argmax(np.linalg.norm(X, axis=0)))]
        best = float(np.linalg.norm(X[:, chosen[0]]))
        while len(chosen) < k:
            cand_best, cand_j = -1.0, -1
            for j in range(n):
                if j in chosen:
                    continue
                val = float(np.linalg.norm(X[:, chosen + [j]], 2))
                if val > cand_best:
                    cand_best, cand_j = val, j
            chosen.append(cand_j)
            best = cand_best
        return NormEstimate(best, full, mode)
    raise ValueError(f"unknown mode {mode!r}")
