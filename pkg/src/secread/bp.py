"""Basis pursuit: ``min ||x||_1  s.t.  A x = y``.

The solver is a primal-dual interior-point method on the split linear
program.  Once the iterate is primal feasible it tries to finish early by
re-solving least squares on the current support ("polishing").  A candidate
is accepted only with a certificate:

* primal feasibility ``||Ax - y|| <= tol * ||y||``, and
* duality gap ``||x||_1 - y^T w <= 10 * tol * ||x||_1`` for a dual point
  ``w`` with ``||A^T w||_inf <= 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Basis pursuit did not certify within the iteration budget."""

    def __init__(self, message: str, residual: float, gap: float):
        super().__init__(f"{message} (residual={residual:.3e}, gap={gap:.3e})")
        self.residual = residual
        self.gap = gap


@dataclass
class BPResult:
    x: np.ndarray
    residual: float
    gap: float
    iterations: int
    polished: bool
    rows_used: int


def independent_rows(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of ``A``'s rows."""
    if A.shape[0] == 0:
        return np.arange(0)
    _, r, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rtol * max(diag[0], 1e-300)))
    return np.sort(piv[:rank])


def _dual_bound(A: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """``y^T w`` after scaling ``w`` into the dual feasible set ``||A^T w||_inf <= 1``."""
    scale = float(np.max(np.abs(A.T @ w))) if A.size else 0.0
    if scale > 1.0:
        w = w / scale
    return float(y @ w)


def _certificate(A, y, x, w) -> tuple[float, float]:
    res = float(np.linalg.norm(A @ x - y))
    gap = max(float(np.sum(np.abs(x))) - _dual_bound(A, y, w), 0.0)
    return res, gap


def _polish(A: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray | None:
    mags = np.abs(x)
    if mags.max() == 0.0:
        return None
    support = np.flatnonzero(mags > 1e-7 * mags.max())
    if support.size > A.shape[0]:
        return None
    coef, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
    out = np.zeros_like(x)
    out[support] = coef
    return out


def _solve_normal(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(K), rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


def basis_pursuit(
    A: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> BPResult:
    """Solve basis pursuit to the certificate described in the module docstring.

    Works on the LP ``min 1^T(u + v)  s.t.  A(u - v) = y,  u, v >= 0`` with a
    Mehrotra predictor-corrector interior-point iteration; the normal
    equations are only ``m x m``.  Rows of ``A`` that are numerically
    dependent on the others are dropped with a warning.  Raises
    :class:`SolverError` if no certified point is found within ``max_iter``
    iterations.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise ValueError(f"shape mismatch: A {A.shape}, y {y.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = A.shape[1]
    if not np.any(y):
        return BPResult(np.zeros(n), 0.0, 0.0, 0, False, A.shape[0])

    A_full, y_full = A, y
    rows = independent_rows(A)
    if rows.size < A.shape[0]:
        log.warning("dropping %d dependent rows of %d", A.shape[0] - rows.size, A.shape[0])
        A, y = A[rows], y[rows]
    ynorm = float(np.linalg.norm(y_full))
    feas_tol = tol * ynorm

    def accept(x: np.ndarray, w: np.ndarray) -> tuple[bool, float, float]:
        res_full = float(np.linalg.norm(A_full @ x - y_full))
        _, gap = _certificate(A, y, x, w)
        l1 = float(np.sum(np.abs(x)))
        return res_full <= feas_tol and gap <= 10.0 * tol * l1, res_full, gap

    # Mehrotra starting point for the split problem, variables xs = [u; v]
    AAt = A @ A.T
    lam = _solve_normal(2.0 * AAt, y)
    u = A.T @ lam
    xs = np.concatenate([u, -u])
    w = np.zeros(A.shape[0])
    s = np.ones(2 * n)
    dx = max(-1.5 * xs.min(), 0.0)
    xs = xs + dx
    xs = xs + 0.5 * (xs @ s) / s.sum()
    s = s + 0.5 * (xs @ s) / xs.sum()

    def Abar(v):
        return A @ (v[:n] - v[n:])

    def Abar_t(v):
        t = A.T @ v
        return np.concatenate([t, -t])

    best_res, best_gap = float("inf"), float("inf")
    fallback: BPResult | None = None
    extra_iter = 15
    for it in range(1, max_iter + 1):
        rp = y - Abar(xs)
        rd = 1.0 - Abar_t(w) - s
        mu = float(xs @ s) / (2 * n)

        x_cur = xs[:n] - xs[n:]
        if it > 1 and np.linalg.norm(rp) <= 0.1 * feas_tol:
            for cand, polished in ((_polish(A, y, x_cur), True), (x_cur, False)):
                if cand is None:
                    continue
                ok, res, gap = accept(cand, w)
                best_res, best_gap = min(best_res, res), min(best_gap, gap)
                if not ok:
                    continue
                result = BPResult(cand, res, gap, it, polished, A.shape[0])
                # a clean polished support or a gap far inside tolerance ends the
                # run; otherwise keep it as a fallback and iterate further
                if polished or gap <= 1e-3 * tol * float(np.sum(np.abs(cand))):
                    return result
                if fallback is None:
                    fallback = result
            if fallback is not None and it - fallback.iterations >= extra_iter:
                return fallback

        d = xs / s
        K = (A * (d[:n] + d[n:])) @ A.T
        K = K + 1e-14 * np.trace(K) / K.shape[0] * np.eye(K.shape[0])
        chol = None
        try:
            chol = scipy.linalg.cho_factor(K)
        except np.linalg.LinAlgError:
            pass

        def solve(rhs):
            if chol is not None:
                return scipy.linalg.cho_solve(chol, rhs)
            return np.linalg.lstsq(K, rhs, rcond=None)[0]

        def direction(rc):
            dw = solve(rp + Abar(d * rd - rc / s))
            ds = rd - Abar_t(dw)
            dxs = (rc - xs * ds) / s
            return dxs, dw, ds

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        dx_a, dw_a, ds_a = direction(-xs * s)
        ap = max_step(xs, dx_a)
        ad = max_step(s, ds_a)
        mu_aff = float((xs + ap * dx_a) @ (s + ad * ds_a)) / (2 * n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx_c, dw_c, ds_c = direction(-xs * s + sigma * mu - dx_a * ds_a)
        ap = min(1.0, 0.99 * max_step(xs, dx_c))
        ad = min(1.0, 0.99 * max_step(s, ds_c))
        xs = xs + ap * dx_c
        w = w + ad * dw_c
        s = s + ad * ds_c
        xs = np.maximum(xs, 1e-300)
        s = np.maximum(s, 1e-300)

        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(w))):
            break

    if fallback is not None:
        return fallback
    raise SolverError("basis pursuit did not converge", best_res, best_gap)


def basis_pursuit_lp(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Reference solution through the linear program ``x = x+ - x-``.

    Used as an independent oracle; relies on scipy's HiGHS solver.
    """
    from scipy.optimize import linprog

    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    res = linprog(
        c=np.ones(2 * n),
        A_eq=np.hstack([A, -A]),
        b_eq=np.asarray(y, dtype=float),
        bounds=[(0, None)] * (2 * n),
        method="highs",
    )
    if res.status != 0:
        raise SolverError(f"LP oracle failed: {res.message}", float("nan"), float("nan"))
    return res.x[:n] - res.x[n:]
