"""Meter-reading traces: CSV ingest/export and a correlated synthetic generator."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class ReadingTrace:
    """Readings in watts, indexed ``readings[round, node]``."""

    readings: np.ndarray = field(repr=False)
    node_ids: tuple[int, ...]
    filtered: int = 0

    def __post_init__(self):
        r = np.array(self.readings, dtype=np.float64)
        if r.ndim != 2:
            raise TraceError("readings must be a (rounds, nodes) matrix")
        if r.shape[1] != len(self.node_ids):
            raise TraceError(f"{r.shape[1]} columns but {len(self.node_ids)} node ids")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise TraceError("node ids must be unique")
        if any(int(i) < 1 for i in self.node_ids):
            raise TraceError("node ids must be positive")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise TraceError("readings must be finite and nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "readings", r)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))

    @property
    def n_nodes(self) -> int:
        return self.readings.shape[1]

    @property
    def n_rounds(self) -> int:
        return self.readings.shape[0]

    def round(self, t: int) -> np.ndarray:
        return self.readings[t]


def load_trace(path: str | os.PathLike) -> ReadingTrace:
    """Read the ``round,node_<id>,...`` CSV format.

    Any round with a negative, empty or non-numeric reading is dropped whole;
    the number of dropped rounds is recorded in ``filtered``.  Kept rounds are
    returned sorted by their round index.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if not rows:
        raise TraceError("zero valid rounds: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[0].strip() != "round":
        raise TraceError("header must start with 'round'")
    try:
        ids = [int(h.strip().removeprefix("node_")) for h in header[1:]]
    except ValueError as exc:
        raise TraceError(f"bad node column in header: {exc}") from exc
    if not ids:
        raise TraceError("no node columns")

    kept: list[tuple[int, list[float]]] = []
    dropped = 0
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise TraceError(f"line {lineno}: {len(row)} columns, expected {len(header)}")
        try:
            t = int(row[0])
        except ValueError as exc:
            raise TraceError(f"line {lineno}: bad round index {row[0]!r}") from exc
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            dropped += 1
            continue
        if any(not math.isfinite(v) or v < 0 for v in vals):
            dropped += 1
            continue
        kept.append((t, vals))
    if dropped:
        log.info("filtered %d invalid rounds from %s", dropped, path)
    if not kept:
        raise TraceError("zero valid rounds after filtering")
    kept.sort(key=lambda item: item[0])
    return ReadingTrace(np.array([v for _, v in kept]), tuple(ids), filtered=dropped)


def save_trace(trace: ReadingTrace, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round"] + [f"node_{i}" for i in trace.node_ids])
        for t, row in enumerate(trace.readings):
            w.writerow([t] + [repr(float(v)) for v in row])


# -- synthetic traces -------------------------------------------------------

BASE_LOW = 70.0
BASE_HIGH = 130.0
REVERSION = 0.5


def _simulate(base: np.ndarray, noise: np.ndarray, alpha: float, reversion: float) -> np.ndarray:
    # noise[0] seeds the initial deviation from the stationary law, so the
    # process has no warm-up transient
    stationary_sd = alpha / math.sqrt(1.0 - (1.0 - reversion) ** 2)
    out = np.empty((noise.shape[0], base.shape[0]))
    out[0] = np.abs(base + stationary_sd * noise[0])
    for t in range(1, noise.shape[0]):
        prev = out[t - 1]
        out[t] = np.abs(prev + alpha * noise[t] - reversion * (prev - base))
    return out


def _mean_round_corr(readings: np.ndarray) -> float:
    from .analysis import round_correlation

    r = round_correlation(readings)
    r = r[np.isfinite(r)]
    return float(np.mean(r)) if r.size else 1.0


def synthesize_trace(
    n: int,
    rounds: int,
    target_corr: float = 0.9995,
    seed: int = 0,
    base_low: float = BASE_LOW,
    base_high: float = BASE_HIGH,
    reversion: float = REVERSION,
    node_ids=None,
) -> ReadingTrace:
    """Synthetic trace whose consecutive rounds correlate at ``target_corr``.

    Node ``i`` has a base load drawn uniformly from ``[base_low, base_high]``
    W and follows a mean-reverting AR(1), started in its stationary law::

        d_i(t+1) = | d_i(t) + alpha * eta_i(t) - reversion * (d_i(t) - base_i) |

    with ``eta`` standard normal.  ``alpha`` is found by bisection so that the
    mean Pearson correlation between consecutive rounds hits ``target_corr``
    for this seed's noise draw.
    """
    if n < 2 or rounds < 2:
        raise TraceError("need n >= 2 and rounds >= 2")
    if not 0.0 < target_corr <= 1.0:
        raise TraceError(f"target_corr must be in (0, 1], got {target_corr}")
    if not 0.0 < reversion <= 1.0:
        raise TraceError("reversion must be in (0, 1]")
    if not 0.0 <= base_low < base_high:
        raise TraceError("need 0 <= base_low < base_high")
    rng = np.random.default_rng(seed)
    base = rng.uniform(base_low, base_high, n)
    noise = rng.standard_normal((rounds, n))
    ids = tuple(range(1, n + 1)) if node_ids is None else tuple(node_ids)

    if target_corr == 1.0:
        return ReadingTrace(np.tile(base, (rounds, 1)), ids)

    lo, hi = 0.0, base_high - base_low
    while _mean_round_corr(_simulate(base, noise, hi, reversion)) > target_corr:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _mean_round_corr(_simulate(base, noise, mid, reversion)) > target_corr:
            lo = mid
        else:
            hi = mid
    return ReadingTrace(_simulate(base, noise, 0.5 * (lo + hi), reversion), ids)
