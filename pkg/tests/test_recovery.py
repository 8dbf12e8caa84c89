from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from secread.analysis import error_trend, snr
from secread.basis import apply_perm, haar_basis, invert_perm, switching_permutation, unsort_dictionary
from secread.bp import basis_pursuit_lp
from secread.coeffs import assemble_sensing_matrix
from secread.recovery import (
    BPProblem,
    energy_sparsity,
    error_bound,
    incremental_reconstruct,
    increment_sparsity,
    reconstruct_snapshot,
    stream_perturbation,
    stream_reconstruct,
    write_rounds_csv,
)
from secread.topology import Topology, gen_random_tree
from secread.trace import ReadingTrace, synthesize_trace


def gaussian(m, n, seed):
    return np.random.default_rng(seed).normal(0, 1 / math.sqrt(m), (m, n))


def test_bpproblem_validation():
    with pytest.raises(ValueError):
        BPProblem(np.ones((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        BPProblem(np.ones((2, 3)), np.ones(2), tol=0)
    A = gaussian(4, 8, 0)
    x0 = np.zeros(8)
    x0[3] = 2.0
    np.testing.assert_allclose(BPProblem(A, A @ x0).solve(), x0, atol=1e-6)


def test_snapshot_sorted_piecewise_constant():
    b = haar_basis(128)
    d = np.repeat([10.0, 30.0, 40.0, 45.0], [32, 32, 32, 32])
    K = int(np.count_nonzero(np.abs(b.analyze(d)) > 1e-9))
    M = 4 * K + 8
    Phi = assemble_sensing_matrix(range(1, 129), M)
    d_hat = reconstruct_snapshot(Phi.entries @ d, Phi, switching_permutation(d), b)
    assert np.linalg.norm(d_hat - d) / np.linalg.norm(d) <= 1e-4


def test_snapshot_unsorted_uses_h(rng):
    b = haar_basis(64)
    d = rng.permutation(np.repeat([5.0, 9.0], 32))
    Phi = gaussian(12, 64, 1)
    d_hat = reconstruct_snapshot(Phi @ d, Phi, switching_permutation(d), b)
    assert np.linalg.norm(d_hat - d) / np.linalg.norm(d) <= 1e-4


def test_snapshot_identity_h(rng):
    b = haar_basis(64)
    x = np.zeros(64)
    x[[0, 5, 40]] = [3.0, -1.0, 2.0]
    d = b.synthesize(x)
    Phi = gaussian(24, 64, 2)
    d_hat = reconstruct_snapshot(Phi @ d, Phi, np.arange(64), b)
    assert np.linalg.norm(d_hat - d) / np.linalg.norm(d) <= 1e-4


def test_snapshot_determined_system(rng):
    b = haar_basis(16)
    Phi = gaussian(16, 16, 3)
    d = rng.random(16)
    d_hat = reconstruct_snapshot(Phi @ d, Phi, rng.permutation(16), b)
    np.testing.assert_allclose(d_hat, np.linalg.solve(Phi, Phi @ d), atol=1e-6)


def test_snapshot_bad_permutation():
    with pytest.raises(ValueError):
        reconstruct_snapshot(np.ones(4), gaussian(4, 8, 0), np.zeros(8, int), haar_basis(8))


def test_stream_perturbation_convention(rng):
    b = haar_basis(32)
    H0, H1 = rng.permutation(32), rng.permutation(32)
    q = stream_perturbation(H0, H1)
    np.testing.assert_array_equal(apply_perm(q, unsort_dictionary(H1, b)), unsort_dictionary(H0, b))


def test_bound_identity_is_zero():
    b = haar_basis(16)
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((16, 16)))
    y = np.ones(16)
    rep = error_bound(Q, b, np.arange(16), 2, y)
    assert rep.gamma_A == 0 and rep.feasible and rep.bound == 0.0


def test_bound_zero_column_infeasible():
    Phi = np.eye(4)
    Phi[:, 1] = 0
    rep = error_bound(Phi, np.eye(4), np.arange(4), 1, np.ones(4))
    assert rep.delta_k >= 1 and not rep.feasible and rep.bound is None


def test_bound_fields_and_feasibility_rule():
    rep = error_bound(gaussian(8, 12, 1), haar_basis(12), np.r_[1, 0, 2:12], 2, np.ones(8))
    assert rep.feasible == (rep.delta_k_prime < math.sqrt(2) / (1 + rep.gamma_A_prime) ** 2 - 1)
    assert rep.estimation_mode == "exact" and rep.k == 2
    if not rep.feasible:
        assert rep.bound is None


def test_bound_soundness_sweep():
    """Measured error never exceeds the bound when the bound is feasible."""
    b = haar_basis(12)
    D = b.matrix[:12]
    feasible = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        Phi = gaussian(8, 12, trial)
        x = np.zeros(16)
        x[rng.choice(16, 2, replace=False)] = rng.standard_normal(2)
        d = D @ x
        perm = np.arange(12)
        if trial % 10:
            i, j = rng.choice(12, 2, replace=False)
            perm[[i, j]] = perm[[j, i]]
        y = Phi @ d
        rep = error_bound(Phi, D, perm, 2, y)
        if rep.feasible:
            feasible += 1
            Dp = apply_perm(perm, D)
            d_hat = Dp @ basis_pursuit_lp(Phi @ Dp, y)
            assert np.linalg.norm(d - d_hat) <= rep.bound + 1e-6 * np.linalg.norm(d)
    print(f"feasible trials: {feasible}/100")


def test_bound_estimated_mode():
    Phi = assemble_sensing_matrix(range(1, 129), 38)
    b = haar_basis(128)
    rep = error_bound(Phi, b, np.arange(128), 3, np.ones(38), mode="estimated", samples=200)
    assert rep.estimation_mode == "estimated" and rep.gamma_A == 0


def test_increment_sparsity_zero():
    assert increment_sparsity(np.zeros(16), np.arange(16), haar_basis(16), 2) == (True, 0.0)


def test_increment_exactly_sparse_reconstructs():
    b = haar_basis(64)
    rng = np.random.default_rng(4)
    d0 = rng.uniform(50, 150, 64)
    H = switching_permutation(d0)
    D = unsort_dictionary(H, b)
    z = np.zeros(64)
    z[[0, 3, 17]] = [2.0, -1.0, 0.5]
    inc = D @ z
    exact, eps = increment_sparsity(inc, H, b, 3)
    assert exact and eps < 1e-10
    d1 = d0 + inc
    Phi = assemble_sensing_matrix(range(1, 65), 24).entries
    d1_hat = incremental_reconstruct(Phi @ d1, Phi @ d0, d0, Phi, H, b)
    assert np.linalg.norm(d1_hat - d1) / np.linalg.norm(d1) < 1e-5


def test_increment_generic_has_tail():
    b = haar_basis(32)
    inc = np.random.default_rng(5).standard_normal(32)
    exact, eps = increment_sparsity(inc, np.arange(32), b, 4)
    assert not exact and eps > 0


def test_energy_sparsity():
    b = haar_basis(64)
    assert energy_sparsity(np.full(64, 3.0), b) == 1
    assert energy_sparsity(np.repeat([1.0, 100.0], 32), b) <= 2


def test_stream_identical_rounds():
    d = np.random.default_rng(1).permutation(np.repeat([60.0, 80.0, 95.0, 130.0], 16))
    tr = ReadingTrace(np.tile(d, (5, 1)), tuple(range(1, 65)))
    topo = gen_random_tree(64, 1)
    M = 20
    Phi = assemble_sensing_matrix(tr.node_ids, M)
    rounds = stream_reconstruct(tr, topo, M, bound_mode=None)
    snap = reconstruct_snapshot(Phi.entries @ d, Phi, switching_permutation(d), haar_basis(64))
    snap_err = np.linalg.norm(snap - d)
    assert rounds[0].full and rounds[0].cost == sum(c + 1 for c in topo.descendant_counts().values())
    for r in rounds[1:]:
        # H may only permute tied readings, so it still sorts d
        np.testing.assert_array_equal(apply_perm(r.H, d), np.sort(d))
        assert r.err_l2 == pytest.approx(snap_err, abs=1e-6 * np.linalg.norm(d))


def test_stream_skips_partial_round():
    tr = synthesize_trace(16, 4, seed=2)
    topo = gen_random_tree(16, 2)
    broken = Topology({c: p for c, p in topo.parent.items() if c != 16 and p != 16},
                      unreachable=(16,) + tuple(c for c, p in topo.parent.items() if p == 16))
    rounds = stream_reconstruct(tr, topo, 6, bound_mode=None, round_topologies={2: broken})
    assert rounds[2].skipped and rounds[2].d_hat is None
    np.testing.assert_array_equal(rounds[2].H, rounds[1].H)
    assert not rounds[3].skipped


def test_stream_never_uses_truth_after_bootstrap(monkeypatch):
    import secread.recovery as rec

    tr = synthesize_trace(32, 4, seed=3)
    calls = []
    orig = rec.switching_permutation

    def spy(v):
        calls.append(np.asarray(v).copy())
        return orig(v)

    monkeypatch.setattr(rec, "switching_permutation", spy)
    rounds = stream_reconstruct(tr, gen_random_tree(32, 3), 10, k=2, bound_mode=None)
    # round 0 sorts the truth, every later sort is of an estimate
    np.testing.assert_array_equal(calls[0], tr.round(0))
    for t, v in enumerate(calls[1:], start=1):
        np.testing.assert_array_equal(v, rounds[t].d_hat)


def test_stream_rejects_mismatched_ids():
    tr = synthesize_trace(8, 3, seed=0)
    with pytest.raises(ValueError):
        stream_reconstruct(tr, gen_random_tree(9, 0), 3)
    with pytest.raises(ValueError):
        stream_reconstruct(ReadingTrace(np.ones((1, 8)), tuple(range(1, 9))), gen_random_tree(8, 0), 3)


def test_rounds_csv(tmp_path):
    tr = synthesize_trace(16, 3, seed=0)
    rounds = stream_reconstruct(tr, gen_random_tree(16, 0), 6, bound_mode="estimated", bound_samples=50)
    write_rounds_csv(rounds, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == ["round", "snr_db", "err_l2", "bound", "feasible", "k", "mode"]
    assert len(rows) == 3 and rows[1]["mode"] == "estimated"


def test_stream_error_does_not_grow_in_db():
    """Error relative to round 1, in dB, has a least-squares slope within 0.01 dB/round."""
    tr = synthesize_trace(128, 50, target_corr=0.9995, seed=0)
    rounds = stream_reconstruct(tr, gen_random_tree(128, 0), 38, bound_mode=None)
    errs = np.array([r.err_l2 for r in rounds[1:]])
    rel_db = 20 * np.log10(errs / errs[0])
    assert abs(error_trend(rel_db)) <= 0.01
