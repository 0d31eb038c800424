import numpy as np
import pytest

from pinchcomp.channel import effective_channel_matrix
from pinchcomp.geometry import build_geometry, PinchingState
from pinchcomp.rate import (BeamformingState, user_rate, sum_rate, power_check,
                            power_used, wdma_rate, wdma_beamforming)
from conftest import random_instance


def test_single_user_no_interference():
    geom, state, W = random_instance(1, n_users=1)
    a = effective_channel_matrix(geom, state)
    rate, sinr, i1, i2 = user_rate(a, W, 0, geom.noise_power)
    assert i1 == 0.0 and i2 == 0.0
    sig = a[0, 0] @ W.w[0, :, 0] + a[0, 1] @ W.w[1, :, 0]
    assert rate == pytest.approx(np.log2(1 + abs(sig) ** 2 / geom.noise_power))


def test_zero_beamforming_zero_rate():
    geom, state, W = random_instance(2)
    a = effective_channel_matrix(geom, state)
    zero = BeamformingState(np.zeros_like(W.w))
    rate, sinr, *_ = user_rate(a, zero, 0, geom.noise_power)
    assert rate == 0.0 and sinr == 0.0


def test_user_rate_against_term_by_term_recomputation():
    """Independent rebuild of the SINR expression, seed 3."""
    geom, state, W = random_instance(3)
    a = effective_channel_matrix(geom, state)
    for k in range(geom.n_users):
        rate, sinr, i1, i2 = user_rate(a, W, k, geom.noise_power)

        # desired: coherent across both BSs
        sig = 0j
        for b in range(2):
            for n in range(geom.n_waveguides):
                sig += a[k, b, n] * W.w[b, n, k]
        interference = [0.0, 0.0]
        for b in range(2):
            for kp in range(geom.n_users):
                if kp == k:
                    continue
                dot = 0j
                for n in range(geom.n_waveguides):
                    dot += a[k, b, n] * W.w[b, n, kp]
                interference[b] += abs(dot) ** 2
        expect_sinr = abs(sig) ** 2 / (sum(interference) + geom.noise_power)
        assert sinr == pytest.approx(expect_sinr, rel=1e-12)
        assert i1 == pytest.approx(interference[0], rel=1e-12)
        assert i2 == pytest.approx(interference[1], rel=1e-12)
        assert rate == pytest.approx(np.log2(1 + expect_sinr), rel=1e-12)


def test_sum_rate_aggregates():
    geom, state, W = random_instance(4)
    a = effective_channel_matrix(geom, state)
    report = sum_rate(a, W, geom.noise_power, geom.rate_threshold)
    assert report.sum_rate == pytest.approx(float(np.sum(report.per_user_rate)))
    rates = [user_rate(a, W, k, geom.noise_power)[0] for k in range(geom.n_users)]
    np.testing.assert_allclose(report.per_user_rate, rates, rtol=1e-12)


def test_user_exchange_symmetry():
    """Swapping users and their beam columns swaps the per-user rates."""
    geom, state, W = random_instance(5)
    a = effective_channel_matrix(geom, state)
    base = sum_rate(a, W, geom.noise_power)
    a_swapped = a[::-1].copy()
    w_swapped = W.w[:, :, ::-1].copy()
    swapped = sum_rate(a_swapped, BeamformingState(w_swapped), geom.noise_power)
    np.testing.assert_allclose(swapped.per_user_rate, base.per_user_rate[::-1],
                               rtol=1e-12)
    assert swapped.sum_rate == pytest.approx(base.sum_rate, rel=1e-12)


def test_common_phase_rotation_invariance():
    geom, state, W = random_instance(6)
    a = effective_channel_matrix(geom, state)
    base = sum_rate(a, W, geom.noise_power)
    w2 = W.w.copy()
    k = 0
    w2[0, :, k] *= np.exp(1j * 0.713)
    w2[1, :, k] *= np.exp(1j * 0.713)   # same rotation at both BSs
    rotated = sum_rate(a, BeamformingState(w2), geom.noise_power)
    np.testing.assert_allclose(rotated.per_user_rate, base.per_user_rate, rtol=1e-12)


def test_sinr_monotone_in_noise():
    geom, state, W = random_instance(8)
    a = effective_channel_matrix(geom, state)
    r1 = sum_rate(a, W, geom.noise_power)
    r2 = sum_rate(a, W, geom.noise_power * 10)
    assert np.all(r2.per_user_sinr <= r1.per_user_sinr)


def test_power_check_examples():
    w = np.zeros((2, 2, 2), dtype=complex)
    used, ok = power_check(BeamformingState(w), (0.063, 0.063))
    assert ok and np.all(used == 0)

    w[0, 0, 0] = np.sqrt(0.063)
    used, ok = power_check(BeamformingState(w), (0.063, 0.063))
    assert ok
    assert used[0] == pytest.approx(0.063)

    w *= 2.0
    used, ok = power_check(BeamformingState(w), (0.063, 0.063))
    assert not ok


def test_wdma_single_user_matches_user_rate():
    geom, state, _ = random_instance(9, n_users=1)
    a = effective_channel_matrix(geom, state)
    assignment = np.array([[0, 1]])
    powers = np.zeros((2, geom.n_waveguides))
    powers[0, 0] = 0.02
    powers[1, 1] = 0.03
    report = wdma_rate(a, assignment, powers, geom.noise_power)
    W = wdma_beamforming(assignment, powers, geom.n_waveguides)
    rate, *_ = user_rate(a, W, 0, geom.noise_power)
    assert report.per_user_rate[0] == pytest.approx(rate, rel=1e-12)


def test_wdma_no_other_power_no_interference():
    geom, state, _ = random_instance(10)
    a = effective_channel_matrix(geom, state)
    assignment = np.array([[0, 0], [1, 1]])
    powers = np.zeros((2, geom.n_waveguides))
    powers[:, 0] = 0.03   # only user 0's waveguides radiate
    report = wdma_rate(a, assignment, powers, geom.noise_power)
    assert report.interference[0].sum() == 0.0


def test_wdma_equals_sparse_beamforming_sum_rate():
    """Two code paths, one truth: 20 random instances at 1e-12."""
    for seed in range(20):
        geom, state, _ = random_instance(seed + 100)
        a = effective_channel_matrix(geom, state)
        assignment = np.array([[0, 1], [1, 0]])
        powers = np.tile(np.asarray(geom.power_budget)[:, None] / geom.n_waveguides,
                         (1, geom.n_waveguides))
        direct = wdma_rate(a, assignment, powers, geom.noise_power)
        W = wdma_beamforming(assignment, powers, geom.n_waveguides)
        via_w = sum_rate(a, W, geom.noise_power)
        np.testing.assert_allclose(direct.per_user_rate, via_w.per_user_rate,
                                   rtol=1e-12)
        assert direct.sum_rate == pytest.approx(via_w.sum_rate, rel=1e-12)


def test_wdma_rejects_non_injective_assignment():
    geom, state, _ = random_instance(12)
    a = effective_channel_matrix(geom, state)
    with pytest.raises(ValueError):
        wdma_rate(a, np.array([[0, 0], [0, 1]]), np.ones((2, 2)), geom.noise_power)


def test_dimension_mismatch_rejected():
    geom, state, W = random_instance(13)
    a = effective_channel_matrix(geom, state)
    bad = BeamformingState(np.zeros((2, geom.n_waveguides + 1, geom.n_users),
                                    dtype=complex))
    with pytest.raises(ValueError):
        user_rate(a, bad, 0, geom.noise_power)
