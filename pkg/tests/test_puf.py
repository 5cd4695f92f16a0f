import math

import numpy as np
import pytest

from ldacs_puf.encoding import EncodingError
from ldacs_puf.puf import (AgingPolicy, CalibrationError, Challenge, Response, age_device,
                           calibrate_sigma_for_ber, evaluate, evaluate_many, features, generate_device,
                           majority_read, measure_ber, random_challenges, threshold)


def test_features_match_product_definition():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 2, 32)
    expected = [math.prod(1 - 2 * int(c[k]) for k in range(j, 32)) for j in range(32)] + [1]
    assert np.array_equal(features(c), np.array(expected, dtype=float))


def test_threshold_ties_resolve_to_one():
    assert list(threshold(np.array([-1e-9, 0.0, 2.0]))) == [0, 1, 1]


def test_challenge_subspace_and_bounds():
    c = Challenge.from_subspace(1, 16)
    assert c.value == 1 << 16 and c.bits[15] == 1 and c.bits[16:].sum() == 0
    with pytest.raises(ValueError):
        Challenge.from_subspace(1 << 16, 16)
    with pytest.raises(EncodingError):
        Challenge(1 << 32)
    with pytest.raises(EncodingError):
        Response.from_bits([0] * 127)


def test_device_deterministic_per_seed():
    a, b = generate_device(3, 0.1), generate_device(3, 0.1)
    assert np.array_equal(a.chains, b.chains) and a.base_ber == b.base_ber
    assert not np.array_equal(a.chains, generate_device(4, 0.1).chains)


def test_noiseless_evaluate_is_stable(device):
    c = Challenge(0xDEADBEEF)
    assert evaluate(device, c) == evaluate(device, c, noisy=True, rng_seed=1)
    bits = evaluate_many(device, c.bits[None, :])
    assert Response.from_bits(bits[0]) == evaluate(device, c)


def test_response_is_balanced(device):
    bits = evaluate_many(device, random_challenges(np.random.default_rng(1), 5000))
    assert abs(bits.mean() - 0.5) < 0.05


def test_calibration_hits_target_ber(noisy_device):
    assert abs(noisy_device.base_ber - 0.02) < 0.001
    measured = measure_ber(noisy_device, 4000, 5, np.random.default_rng(2))
    assert abs(measured - 0.02) < 0.002


def test_calibration_monotone_and_errors():
    assert calibrate_sigma_for_ber(11, 0.01) < calibrate_sigma_for_ber(11, 0.02) < calibrate_sigma_for_ber(11, 0.05)
    with pytest.raises(ValueError):
        calibrate_sigma_for_ber(11, 0.5)
    with pytest.raises(CalibrationError) as info:
        calibrate_sigma_for_ber(11, 0.4999, n_challenges=20)
    assert info.value.best_ber < 0.4999


def test_intra_distance_matches_ber(noisy_device):
    # Averaged over challenges: E[HD] = 128 * BER.
    rng = np.random.default_rng(3)
    ch = random_challenges(rng, 2000)
    ref = evaluate_many(noisy_device, ch)
    hd = (evaluate_many(noisy_device, ch, noisy=True, rng=rng) != ref).sum(axis=1).mean()
    assert abs(hd - 128 * noisy_device.base_ber) < 0.15


def test_aging_multiplicative_exact(noisy_device):
    aged = age_device(noisy_device, 2)
    assert aged.effective_ber / noisy_device.base_ber == pytest.approx(1.19, abs=1e-12)
    assert age_device(noisy_device, 4).effective_ber == pytest.approx(noisy_device.base_ber * 1.19 ** 2, abs=1e-15)


def test_aging_additive_option():
    policy = AgingPolicy(additive=True)
    assert policy.ber_at(0.02, 2) == pytest.approx(0.21)
    assert policy.ber_at(0.02, 100) == 0.5


def test_aged_sigma_reproduces_target_ber(noisy_device):
    aged = age_device(noisy_device, 6)
    assert aged.effective_sigma > noisy_device.noise_sigma
    measured = measure_ber(aged, 4000, 5, np.random.default_rng(4))
    assert abs(measured - aged.effective_ber) < 0.003
    with pytest.raises(ValueError):
        age_device(noisy_device, -1)


def test_majority_read(noisy_device):
    c = Challenge(12345)
    with pytest.raises(ValueError):
        majority_read(noisy_device, c, 4, 0)
    truth = evaluate(noisy_device, c)
    single = np.mean([majority_read(noisy_device, c, 1, s).hamming(truth) for s in range(300)])
    voted = np.mean([majority_read(noisy_device, c, 5, s).hamming(truth) for s in range(300)])
    assert voted < single
