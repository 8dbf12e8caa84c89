"""Plain (unencrypted) compressed reading over a collection tree.

One round, per node in leaves-to-root order:

* a forwarder sends its own reading plus every plaintext reading it received,
  one packet each;
* an aggregator sends exactly ``M`` packets, row ``l`` carrying
  ``phi_li d_i + sum_{j in F_i} phi_lj d_j + sum_{a in A_i} m_a^(l)`` where
  ``F_i`` are the plaintext readings it received and ``A_i`` its aggregator
  children;
* the collector weights the plaintext readings it receives itself and adds
  the aggregates, which yields ``y = Phi d``.

Every term list is summed in ascending node-id order so results are
bit-reproducible.  With ``scale`` set, coefficients and readings are rounded
to integers (``round(scale * phi)``, ``round(scale * d)``) and all arithmetic
is exact Python-int arithmetic; this is the model the encrypted protocol
reproduces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .coeffs import phi_column, quantize
from .topology import Role, Topology, classify_roles

log = logging.getLogger(__name__)


@dataclass
class RoundResult:
    """Outcome of one simulated collection round.

    ``y`` is in reading units.  In quantized runs ``y_int`` holds the exact
    integer measurements and ``y == y_int / scale**2``.
    """

    y: np.ndarray | None
    cost: int
    per_link: dict[tuple[int, int], int]
    raw_received: dict[int, float]
    missing: tuple[int, ...] = ()
    y_int: list[int] | None = None
    scale: int | None = None
    coefficients: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def partial(self) -> bool:
        return bool(self.missing)


def _as_reading_map(topo: Topology, d, meter_ids=None) -> dict[int, float]:
    if isinstance(d, dict):
        return {int(k): float(v) for k, v in d.items()}
    ids = list(meter_ids) if meter_ids is not None else sorted(set(topo.meter_ids) | set(topo.unreachable))
    d = np.asarray(d, dtype=float)
    if d.shape != (len(ids),):
        raise ValueError(f"reading vector has shape {d.shape}, expected ({len(ids)},)")
    return dict(zip(ids, d.tolist()))


def run_plain_round(topo: Topology, d, M: int, scale: int | None = None, meter_ids=None) -> RoundResult:
    """Simulate one compressed-reading round.

    Parameters
    ----------
    topo : Topology
        Ready collection tree.
    d : array or dict
        Readings, either keyed by node id or aligned with ``meter_ids``
        (default: all meter ids ascending, including unreachable ones).
    M : int
        Compression factor.
    scale : int, optional
        Fixed-point scale for the exact integer model.

    Unreachable meters contribute nothing; their ids are listed in
    ``missing`` and the round should not be used for reconstruction.
    """
    readings = _as_reading_map(topo, d, meter_ids)
    roles = classify_roles(topo, M)
    kids = topo.children()
    missing = tuple(sorted(i for i in readings if i not in topo.parent))
    for i in topo.parent:
        if i not in readings:
            raise ValueError(f"no reading for meter {i}")

    coeff = {i: phi_column(i, M) for i in topo.parent}
    if scale is None:
        weight = {i: coeff[i] for i in topo.parent}
        value = {i: readings[i] for i in topo.parent}
        zero = np.zeros(M)
    else:
        weight = {i: quantize(coeff[i], scale) for i in topo.parent}
        value = {i: quantize(readings[i], scale) for i in topo.parent}
        zero = [0] * M

    def weighted(j):
        if scale is None:
            return weight[j] * value[j]
        return [w * value[j] for w in weight[j]]

    plain_out: dict[int, list[int]] = {}  # node -> origin ids of plaintext it sends
    agg_out: dict[int, object] = {}
    per_link: dict[tuple[int, int], int] = {}

    for i in topo.postorder():
        origins = [i]
        aggs: dict[int, object] = {}
        for c in kids[i]:
            if c in agg_out:
                aggs[c] = agg_out[c]
            else:
                origins.extend(plain_out[c])
        if roles[i].role is Role.FORWARDER:
            plain_out[i] = sorted(origins)
            per_link[(i, topo.parent[i])] = len(origins)
        else:
            terms: dict = {j: weighted(j) for j in origins}
            terms.update({(c, "agg"): v for c, v in aggs.items()})
            agg_out[i] = _accumulate_mixed(terms, zero, scale)
            per_link[(i, topo.parent[i])] = M

    terms = {}
    raw_received: dict[int, float] = {}
    for c in kids[topo.root]:
        if c in agg_out:
            terms[(c, "agg")] = agg_out[c]
        else:
            for j in plain_out[c]:
                terms[j] = weighted(j)
                raw_received[j] = readings[j]
    y_acc = _accumulate_mixed(terms, zero, scale)

    if missing:
        log.warning("partial round: %d unreachable meters %s", len(missing), list(missing))
    if scale is None:
        y = np.asarray(y_acc, dtype=float)
        y_int = None
    else:
        y_int = [int(v) for v in y_acc]
        y = np.array([v / scale**2 for v in y_int])
    return RoundResult(
        y=y,
        cost=sum(per_link.values()),
        per_link=per_link,
        raw_received=raw_received,
        missing=missing,
        y_int=y_int,
        scale=scale,
        coefficients=coeff,
    )


def _sort_key(key):
    if isinstance(key, tuple):
        return (key[0], 1)
    return (key, 0)


def _accumulate_mixed(terms: dict, zero, scale):
    if scale is None:
        acc = np.array(zero, dtype=float)
        for key in sorted(terms, key=_sort_key):
            acc = acc + terms[key]
        return acc
    acc = list(zero)
    for key in sorted(terms, key=_sort_key):
        acc = [a + b for a, b in zip(acc, terms[key])]
    return acc


def run_full_round(topo: Topology, d, meter_ids=None) -> RoundResult:
    """Bootstrap round: every meter forwards plaintext, nothing is aggregated."""
    readings = _as_reading_map(topo, d, meter_ids)
    kids = topo.children()
    missing = tuple(sorted(i for i in readings if i not in topo.parent))
    sent: dict[int, int] = {}
    per_link: dict[tuple[int, int], int] = {}
    for i in topo.postorder():
        sent[i] = 1 + sum(sent[c] for c in kids[i])
        per_link[(i, topo.parent[i])] = sent[i]
    received = {i: readings[i] for i in sorted(topo.parent)}
    return RoundResult(
        y=None,
        cost=sum(per_link.values()),
        per_link=per_link,
        raw_received=received,
        missing=missing,
    )


# -- closed-form costs --------------------------------------------------------


def cost_bounds(N: int, M: int) -> tuple[int, int]:
    """Minimum ``N`` and maximum ``M (N - M/2 + 1/2)`` packets per round.

    ``M (2N - M + 1)`` is always even, so both bounds are integers.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    if M > N:
        raise ValueError(f"M={M} exceeds N={N}")
    return N, M * (2 * N - M + 1) // 2


def nonaggregation_cost(topo: Topology) -> int:
    """Packets needed when every meter relays its whole subtree in plaintext."""
    return sum(c + 1 for c in topo.descendant_counts().values())


def baseline_cost(N: int, M: int) -> int:
    """Cost of the scheme where every link carries exactly ``M`` packets."""
    return N * M


def pary_aggregator_depth(p: int, L: int, M: int) -> int:
    """Number ``l`` of bottom layers that forward (the rest aggregate).

    ``l`` is the smallest integer with ``sum_{j<=l} p^j - 1 >= M``, capped at
    ``L`` when no layer has enough descendants.
    """
    l = 0
    while sum(p**j for j in range(l + 1)) - 1 < M:
        l += 1
        if l >= L:
            return L
    return l


def pary_cost(p: int, L: int, M: int) -> int:
    """Closed-form round cost on the complete ``p``-ary tree of depth ``L``."""
    if p < 2 or L < 1 or M < 2:
        raise ValueError("need p >= 2, L >= 1, M >= 2")
    l = pary_aggregator_depth(p, L, M)
    forwarders = sum(p ** (L - j) * sum(p**i for i in range(j + 1)) for j in range(l))
    aggregators = M * sum(p**j for j in range(1, L - l + 1))
    return forwarders + aggregators


def pary_n(p: int, L: int) -> int:
    return sum(p**j for j in range(1, L + 1))


def log_base(x: float, base: float) -> float:
    return math.log(x) / math.log(base)
