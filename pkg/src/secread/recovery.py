"""Snapshot and stream reconstruction, perturbation error bounds, increment sparsity.

The collector never sees the true sorting permutation after the first round.
Round ``t`` is solved in the dictionary ``H(t-1)^{-1} Psi`` built from the
previous estimate, and the new estimate is re-sorted to give ``H(t)``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .analysis import snr
from .basis import (
    WaveletBasis,
    apply_perm,
    compose_perm,
    haar_basis,
    invert_perm,
    is_permutation,
    switching_permutation,
    unsort_dictionary,
)
from .bp import basis_pursuit
from .coeffs import SensingMatrix, assemble_sensing_matrix, estimate_rip, submatrix_norm
from .protocol import run_full_round, run_plain_round
from .topology import Topology
from .trace import ReadingTrace

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
SPARSITY_THRESHOLD = 1e-10
ENERGY_FRACTION = 0.99


@dataclass(frozen=True)
class BPProblem:
    """``min ||x||_1`` subject to ``||A x - y|| <= tol ||y||``."""

    A: np.ndarray
    y: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if A.ndim != 2 or y.shape != (A.shape[0],):
            raise ValueError(f"shape mismatch: A {A.shape}, y {y.shape}")
        if A.shape[0] > A.shape[1]:
            raise ValueError("more measurements than unknowns; use least squares")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)

    def solve(self, max_iter: int = 200) -> np.ndarray:
        return basis_pursuit(self.A, self.y, self.tol, max_iter).x


def _phi_matrix(Phi) -> np.ndarray:
    return np.asarray(Phi.entries if isinstance(Phi, SensingMatrix) else Phi, dtype=float)


def _dictionary(basis) -> np.ndarray:
    if isinstance(basis, WaveletBasis):
        return basis.matrix[: basis.n_orig]
    return np.asarray(basis, dtype=float)


def reconstruct_snapshot(y, Phi, H, basis: WaveletBasis, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Recover ``d`` from ``y = Phi d`` assuming ``H d`` is sparse in ``basis``."""
    H = np.asarray(H)
    if not is_permutation(H, basis.n_orig):
        raise ValueError("H is not a permutation of the basis length")
    D = unsort_dictionary(H, basis)
    x = basis_pursuit(_phi_matrix(Phi) @ D, np.asarray(y, dtype=float), tol).x
    return D @ x


def incremental_reconstruct(
    y_next, y_prev, d_prev, Phi, H, basis: WaveletBasis, tol: float = DEFAULT_TOL
) -> np.ndarray:
    """Recover ``d(t+1)`` as ``d(t)`` plus the increment solved in ``H(t)^{-1} Psi``."""
    dy = np.asarray(y_next, dtype=float) - np.asarray(y_prev, dtype=float)
    return np.asarray(d_prev, dtype=float) + reconstruct_snapshot(dy, Phi, H, basis, tol)


# -- error bound --------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """Perturbation bound ``C beta gamma ||y||`` and its ingredients.

    ``bound`` is None whenever the report is infeasible.
    """

    gamma_A: float
    beta_A: float
    gamma_A_prime: float
    delta_k: float
    delta_k_prime: float
    C: float
    bound: float | None
    estimation_mode: str
    feasible: bool
    k: int

    @property
    def threshold(self) -> float:
        """Largest admissible ``delta_k'``."""
        return math.sqrt(2.0) / (1.0 + self.gamma_A_prime) ** 2 - 1.0


def error_bound(Phi, basis, H_inv, k: int, y, mode: str = "exact", samples: int = 2000,
                seed: int = 0) -> BoundReport:
    """Bound the error of solving with the perturbed dictionary ``H_inv @ basis``.

    Parameters
    ----------
    Phi : ndarray or SensingMatrix
        Sensing matrix, shape (M, N).
    basis : WaveletBasis or ndarray
        True sparsifying dictionary (rows = readings).  For a stream round this
        is ``H(t)^{-1} Psi``.
    H_inv : index array
        Row permutation of the dictionary used by the solver, in the
        ``apply_perm`` convention.  For a stream round it is the index form
        of ``H(t-1)^{-1} H(t)``, see :func:`stream_perturbation`.
    k : int
        Sparsity order.
    mode : {"exact", "estimated"}
        ``exact`` enumerates supports; ``estimated`` uses Monte-Carlo RIP
        sampling and greedy restricted norms (both lower estimates).

    Notes
    -----
    ``delta_k'`` is taken as the order-``2k`` isometry constant.
    """
    if mode not in ("exact", "estimated"):
        raise ValueError(f"unknown mode {mode!r}")
    D = _dictionary(basis)
    A = _phi_matrix(Phi) @ D
    A_pert = _phi_matrix(Phi) @ apply_perm(np.asarray(H_inv), D)
    n = A.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    k2 = min(2 * k, n)
    norm_mode = "exact" if mode == "exact" else "greedy"
    rip_mode = "exact" if mode == "exact" else "montecarlo"

    def ratio(order: int) -> float:
        num = submatrix_norm(A_pert - A, order, norm_mode).value
        den = submatrix_norm(A, order, norm_mode).value
        if den == 0.0:
            return math.inf if num > 0 else 0.0
        return num / den

    gamma, gamma_p = ratio(k), ratio(k2)
    delta = estimate_rip(A, k, rip_mode, samples, seed)
    delta_p = estimate_rip(A, k2, rip_mode, samples, seed + 1)
    nan = math.nan
    if delta >= 1.0:
        return BoundReport(gamma, math.inf, gamma_p, delta, delta_p, nan, None, mode, False, k)
    beta = math.sqrt(1.0 + delta) / math.sqrt(1.0 - delta)
    feasible = delta_p < math.sqrt(2.0) / (1.0 + gamma_p) ** 2 - 1.0
    if not feasible:
        return BoundReport(gamma, beta, gamma_p, delta, delta_p, nan, None, mode, False, k)
    C = 4.0 * math.sqrt(1.0 + delta_p) * (1.0 + gamma_p) / (
        1.0 - (math.sqrt(2.0) + 1.0) * ((1.0 + delta_p) * (1.0 + gamma_p) ** 2 - 1.0)
    )
    bound = C * beta * gamma * float(np.linalg.norm(y))
    return BoundReport(gamma, beta, gamma_p, delta, delta_p, C, bound, mode, True, k)


def stream_perturbation(H_prev, H_true) -> np.ndarray:
    """Index form of ``H(t-1)^{-1} H(t)``.

    Applied to the true dictionary ``H(t)^{-1} Psi`` it yields the dictionary
    ``H(t-1)^{-1} Psi`` the collector actually solves with.
    """
    return compose_perm(invert_perm(np.asarray(H_prev)), np.asarray(H_true))


# -- increments ---------------------------------------------------------------


def increment_sparsity(n_inc, H, basis: WaveletBasis, K: int) -> tuple[bool, float]:
    """Sparsity of an increment in the domain ``H^{-1} Psi``.

    Returns whether at most ``K`` coefficients exceed ``1e-10`` in magnitude,
    and the l1 mass of everything outside the ``K`` largest.
    """
    z = basis.analyze(apply_perm(np.asarray(H), np.asarray(n_inc, dtype=float)))
    if not 0 <= K <= z.size:
        raise ValueError(f"K must be in [0, {z.size}]")
    mags = np.sort(np.abs(z))[::-1]
    exact = int(np.count_nonzero(mags > SPARSITY_THRESHOLD)) <= K
    return exact, float(np.sum(mags[K:]))


def energy_sparsity(d, basis: WaveletBasis, fraction: float = ENERGY_FRACTION) -> int:
    """Fewest sorted-Haar coefficients holding ``fraction`` of the energy of ``d``."""
    x = basis.analyze(apply_perm(switching_permutation(d), np.asarray(d, dtype=float)))
    e = np.sort(x**2)[::-1]
    total = float(e.sum())
    if total == 0.0:
        return 1
    return int(np.searchsorted(np.cumsum(e), fraction * total * (1 - 1e-12)) + 1)


# -- streams ------------------------------------------------------------------


@dataclass
class StreamRound:
    """One reconstructed round; ``skipped`` rounds carry ``H`` forward unchanged."""

    t: int
    d_hat: np.ndarray | None
    H: np.ndarray
    bound: BoundReport | None
    cost: int
    skipped: bool = False
    full: bool = False
    y: np.ndarray | None = field(default=None, repr=False)
    snr_db: float = math.nan
    err_l2: float = math.nan

    def record(self) -> dict:
        b = self.bound
        return {
            "round": self.t,
            "snr_db": self.snr_db,
            "err_l2": self.err_l2,
            "bound": "" if b is None or b.bound is None else b.bound,
            "feasible": bool(b.feasible) if b is not None else False,
            "k": b.k if b is not None else "",
            "mode": b.estimation_mode if b is not None else "",
        }


CSV_FIELDS = ("round", "snr_db", "err_l2", "bound", "feasible", "k", "mode")


def stream_reconstruct(
    trace: ReadingTrace,
    topo: Topology,
    M: int,
    tol: float = DEFAULT_TOL,
    *,
    k: int | None = None,
    bound_mode: str | None = "estimated",
    bound_samples: int = 2000,
    scale: int | None = None,
    round_topologies: Mapping[int, Topology] | None = None,
    basis: WaveletBasis | None = None,
    seed: int = 0,
    collect: Callable | None = None,
) -> list[StreamRound]:
    """Collect and reconstruct every round of ``trace`` over ``topo``.

    Round 0 is a full plaintext round giving the exact readings and ``H``.
    Every later round is compressed with factor ``M`` and solved with the
    permutation of the previous estimate.  ``round_topologies`` overrides the
    tree for individual rounds; a round whose tree leaves meters unreachable
    is skipped.  ``bound_mode=None`` disables the per-round bound, which
    needs the true readings (available in simulation only).

    ``k`` for the bound defaults to the number of coefficients holding 99% of
    the round-0 energy.  ``collect(t, topo, d)`` replaces the plain
    compressed round; it must return an object with ``y``, ``cost`` and
    ``partial`` attributes (the secure driver uses this).
    """
    if trace.n_rounds < 2:
        raise ValueError("need at least two rounds")
    ids = list(trace.node_ids)
    if sorted(ids) != sorted(set(topo.meter_ids) | set(topo.unreachable)):
        raise ValueError("trace node ids do not match the topology")
    overrides = dict(round_topologies or {})
    basis = basis if basis is not None else haar_basis(len(ids))
    Phi = assemble_sensing_matrix(ids, M)

    d0 = trace.round(0)
    first = overrides.get(0, topo)
    full = run_full_round(first, d0, meter_ids=ids)
    if full.partial:
        raise ValueError("the bootstrap round needs every meter reachable")
    H = switching_permutation(d0)
    if k is None:
        k = energy_sparsity(d0, basis)
    out = [StreamRound(0, d0.copy(), H, None, full.cost, full=True, snr_db=math.inf, err_l2=0.0)]

    for t in range(1, trace.n_rounds):
        d = trace.round(t)
        round_topo = overrides.get(t, topo)
        if collect is None:
            res = run_plain_round(round_topo, d, M, scale=scale, meter_ids=ids)
        else:
            res = collect(t, round_topo, d)
        if res.partial:
            log.warning("round %d skipped: meters unreachable", t)
            out.append(StreamRound(t, None, H, None, res.cost, skipped=True, y=res.y))
            continue
        D = unsort_dictionary(H, basis)
        y = np.asarray(res.y, dtype=float)
        x = basis_pursuit(Phi.entries @ D, y, tol).x
        d_hat = D @ x
        report = None
        if bound_mode is not None:
            H_true = switching_permutation(d)
            report = error_bound(
                Phi, unsort_dictionary(H_true, basis), stream_perturbation(H, H_true), k,
                y, bound_mode, bound_samples, seed + t,
            )
        err = float(np.linalg.norm(d - d_hat))
        H = switching_permutation(d_hat)
        out.append(StreamRound(t, d_hat, H, report, res.cost, y=y, snr_db=snr(d, d_hat),
                               err_l2=err))
    return out


def write_rounds_csv(rounds: Iterable[StreamRound], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rounds:
            if not r.skipped:
                w.writerow(r.record())
