"""
Recovering one round of readings
=================================

Sort the readings, take 38 Gaussian measurements of 128 meters and solve a
basis pursuit in the Haar basis of the sorted signal.
"""

from __future__ import annotations

import numpy as np

from secread import haar_basis, reconstruct_snapshot, snr, switching_permutation, synthesize_trace
from secread.coeffs import assemble_sensing_matrix

N, M = 128, 38
d = synthesize_trace(N, 2, seed=0).round(0)

# the sorted vector is close to piecewise smooth, hence compressible in Haar
basis = haar_basis(N)
coeffs = basis.analyze(np.sort(d))
energy = np.cumsum(np.sort(coeffs**2)[::-1]) / np.sum(coeffs**2)
print(f"coefficients holding 99% of the energy: {int(np.searchsorted(energy, 0.99)) + 1} of {N}")

# measurements y = Phi d, with Phi derived from the meter ids
Phi = assemble_sensing_matrix(range(1, N + 1), M)
y = Phi.entries @ d

# the collector knows the ordering H from an earlier round
H = switching_permutation(d)
d_hat = reconstruct_snapshot(y, Phi, H, basis)
print(f"SNR with the exact ordering: {snr(d, d_hat):.1f} dB")

# without the ordering the signal is not sparse and recovery collapses
d_id = reconstruct_snapshot(y, Phi, np.arange(N), basis)
print(f"SNR with the identity ordering: {snr(d, d_id):.1f} dB")
