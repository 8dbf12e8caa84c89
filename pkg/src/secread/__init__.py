"""Compressed, encrypted meter reading over collection trees."""

from __future__ import annotations

__version__ = "0.1.0"

from .analysis import boxplot_stats, error_trend, round_correlation, snr
from .basis import haar_basis, switching_permutation
from .bp import basis_pursuit
from .coeffs import assemble_sensing_matrix, phi
from .crypto import decrypt, encrypt, hom_add, hom_scale, paillier_keygen, sign, signing_keygen, verify
from .protocol import (
    baseline_cost,
    cost_bounds,
    nonaggregation_cost,
    pary_cost,
    run_full_round,
    run_plain_round,
)
from .recovery import (
    error_bound,
    incremental_reconstruct,
    reconstruct_snapshot,
    stream_reconstruct,
)
from .secure import Attack, AttackKind, SecureSession, inject_adversary, validate
from .topology import Topology, classify_roles, diagnose_links, gen_pary_tree, gen_random_tree
from .trace import ReadingTrace, load_trace, synthesize_trace

__all__ = [
    "Attack",
    "AttackKind",
    "ReadingTrace",
    "SecureSession",
    "Topology",
    "assemble_sensing_matrix",
    "baseline_cost",
    "basis_pursuit",
    "boxplot_stats",
    "classify_roles",
    "cost_bounds",
    "decrypt",
    "diagnose_links",
    "encrypt",
    "error_bound",
    "error_trend",
    "gen_pary_tree",
    "gen_random_tree",
    "haar_basis",
    "hom_add",
    "hom_scale",
    "incremental_reconstruct",
    "inject_adversary",
    "load_trace",
    "nonaggregation_cost",
    "paillier_keygen",
    "pary_cost",
    "phi",
    "reconstruct_snapshot",
    "round_correlation",
    "run_full_round",
    "run_plain_round",
    "sign",
    "signing_keygen",
    "snr",
    "stream_reconstruct",
    "switching_permutation",
    "synthesize_trace",
    "validate",
    "verify",
]
