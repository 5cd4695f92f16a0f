"""Simulated aircraft PUF: 128 arbiter chains over a 32-bit challenge.

Each response bit is the sign of a linear delay model evaluated on the
arbiter parity features of the challenge.  Measurement noise is additive
Gaussian delay noise; aging grows the bit error rate per an AgingPolicy,
and the noise level is re-derived from that BER.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .encoding import EncodingError, bits_to_int, int_to_bits

CHALLENGE_BITS = 32
RESPONSE_BITS = 128
FEATURE_DIM = CHALLENGE_BITS + 1

# Monte-Carlo sizes for the cached manufacturing-time BER.
BER_MC_CHALLENGES = 10_000
BER_MC_READS = 10
# Challenge sample behind the smooth BER(sigma) curve used to age a device.
BER_CURVE_CHALLENGES = 2_000

# Sub-stream tags for np.random.default_rng([seed, tag]).
_STREAM_CHAINS = 0
_STREAM_BER_CHALLENGES = 1
_STREAM_BER_NOISE = 2
_STREAM_CAL_CHALLENGES = 3
_STREAM_CAL_NOISE = 4


class CalibrationError(RuntimeError):
    def __init__(self, message: str, best_sigma: float, best_ber: float):
        super().__init__(message)
        self.best_sigma = best_sigma
        self.best_ber = best_ber


@dataclass(frozen=True)
class Challenge:
    value: int

    def __post_init__(self):
        if not isinstance(self.value, (int, np.integer)) or self.value < 0 or self.value >> CHALLENGE_BITS:
            raise EncodingError(f"challenge must be a {CHALLENGE_BITS}-bit value, got {self.value!r}")

    @classmethod
    def from_bits(cls, bits) -> Challenge:
        arr = np.asarray(bits).ravel()
        if arr.size != CHALLENGE_BITS:
            raise EncodingError(f"challenge must have {CHALLENGE_BITS} bits, got {arr.size}")
        return cls(bits_to_int(arr))

    @classmethod
    def from_subspace(cls, index: int, space_bits: int) -> Challenge:
        """Challenge whose first `space_bits` bits are `index` and the rest zero."""
        if not 0 <= space_bits <= CHALLENGE_BITS or index >> space_bits:
            raise ValueError(f"index {index} outside a {space_bits}-bit subspace")
        return cls(index << (CHALLENGE_BITS - space_bits))

    @property
    def bits(self) -> np.ndarray:
        return int_to_bits(self.value, CHALLENGE_BITS)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(CHALLENGE_BITS // 8, "big")


@dataclass(frozen=True)
class Response:
    value: int

    def __post_init__(self):
        if not isinstance(self.value, (int, np.integer)) or self.value < 0 or self.value >> RESPONSE_BITS:
            raise EncodingError(f"response must be a {RESPONSE_BITS}-bit value, got {self.value!r}")

    @classmethod
    def from_bits(cls, bits) -> Response:
        arr = np.asarray(bits).ravel()
        if arr.size != RESPONSE_BITS:
            raise EncodingError(f"response must have {RESPONSE_BITS} bits, got {arr.size}")
        return cls(bits_to_int(arr))

    @property
    def bits(self) -> np.ndarray:
        return int_to_bits(self.value, RESPONSE_BITS)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(RESPONSE_BITS // 8, "big")

    def hamming(self, other: Response) -> int:
        return (self.value ^ other.value).bit_count()


def features(challenges) -> np.ndarray:
    """Arbiter parity map: phi_j = prod_{k>=j} (1 - 2 c_k) for j < 32, phi_32 = 1.

    Accepts a single (32,) bit vector or an (N, 32) matrix; returns float64
    of shape (33,) or (N, 33).
    """
    c = np.asarray(challenges)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if c.shape[1] != CHALLENGE_BITS:
        raise EncodingError(f"challenge must have {CHALLENGE_BITS} bits, got {c.shape[1]}")
    signs = 1.0 - 2.0 * c.astype(np.float64)
    phi = np.empty((c.shape[0], FEATURE_DIM))
    phi[:, :CHALLENGE_BITS] = np.cumprod(signs[:, ::-1], axis=1)[:, ::-1]
    phi[:, CHALLENGE_BITS] = 1.0
    return phi[0] if single else phi


def threshold(x: np.ndarray) -> np.ndarray:
    """1 where x >= 0, else 0 (ties resolve to 1)."""
    return (np.asarray(x) >= 0).astype(np.uint8)


def random_challenges(rng: np.random.Generator, n: int, space_bits: int = CHALLENGE_BITS) -> np.ndarray:
    """(n, 32) challenge bits; with space_bits < 32 the trailing bits are zero."""
    out = np.zeros((n, CHALLENGE_BITS), dtype=np.uint8)
    out[:, :space_bits] = rng.integers(0, 2, size=(n, space_bits), dtype=np.uint8)
    return out


@dataclass(frozen=True)
class AgingPolicy:
    factor_per_period: float = 1.19
    period_years: float = 2.0
    # Alternative reading of the 19%-per-two-years figure: +0.19 BER per period.
    additive: bool = False

    def __post_init__(self):
        if self.factor_per_period < 1:
            raise ValueError("factor_per_period must be >= 1")
        if self.period_years <= 0:
            raise ValueError("period_years must be > 0")

    def ber_at(self, base_ber: float, years: float) -> float:
        periods = years / self.period_years
        if self.additive:
            return min(0.5, base_ber + (self.factor_per_period - 1.0) * periods)
        return base_ber * self.factor_per_period ** periods


@dataclass(frozen=True, eq=False)
class PufDevice:
    chains: np.ndarray
    noise_sigma: float
    base_ber: float
    seed: int | None = None
    age_years: float = 0.0
    aging: AgingPolicy = field(default_factory=AgingPolicy)

    def __post_init__(self):
        if self.chains.shape != (RESPONSE_BITS, FEATURE_DIM):
            raise ValueError(f"chains must have shape ({RESPONSE_BITS}, {FEATURE_DIM})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def effective_ber(self) -> float:
        return self.aging.ber_at(self.base_ber, self.age_years)

    @cached_property
    def _ber_curve_delays(self) -> np.ndarray:
        # Fixed challenge sample for the smooth BER(sigma) curve used by aging.
        rng = np.random.default_rng([self.seed or 0, _STREAM_BER_CHALLENGES])
        return np.abs(self.delays(random_challenges(rng, BER_CURVE_CHALLENGES))).ravel()

    def expected_ber(self, sigma: float) -> float:
        """Mean flip probability over the device's challenge sample at noise sigma."""
        if sigma <= 0:
            return 0.0
        return float(ndtr(-self._ber_curve_delays / sigma).mean())

    def _sigma_for_expected_ber(self, ber: float) -> float:
        lo, hi = -12.0, 12.0
        if ber >= self.expected_ber(math.exp(hi)):
            return math.exp(hi)
        return math.exp(brentq(lambda s: self.expected_ber(math.exp(s)) - ber, lo, hi, xtol=1e-12))

    @cached_property
    def effective_sigma(self) -> float:
        """Noise sigma reproducing effective_ber at the device's current age.

        The manufacturing-time sigma is scaled by the ratio of curve inverses,
        so age 0 maps back to noise_sigma exactly.
        """
        if self.noise_sigma == 0 or self.base_ber == 0:
            return self.noise_sigma
        target = self.effective_ber
        if target == self.base_ber:
            return self.noise_sigma
        ref = self._sigma_for_expected_ber(self.base_ber)
        return self.noise_sigma * self._sigma_for_expected_ber(min(target, 0.5)) / ref

    def delays(self, challenges) -> np.ndarray:
        """Noiseless delay differences, shape (N, 128) (or (128,) for one challenge)."""
        return features(challenges) @ self.chains.T

    def flip_probabilities(self, challenge: Challenge) -> np.ndarray:
        """Per-bit probability that one noisy read disagrees with the noiseless bit."""
        sigma = self.effective_sigma
        if sigma == 0:
            return np.zeros(RESPONSE_BITS)
        return ndtr(-np.abs(self.delays(challenge.bits)) / sigma)


def generate_device(seed: int, noise_sigma: float, aging: AgingPolicy | None = None) -> PufDevice:
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    chains = np.random.default_rng([seed, _STREAM_CHAINS]).standard_normal((RESPONSE_BITS, FEATURE_DIM))
    base_ber = _monte_carlo_ber(chains, noise_sigma, seed) if noise_sigma > 0 else 0.0
    return PufDevice(chains=chains, noise_sigma=float(noise_sigma), base_ber=base_ber,
                     seed=seed, aging=aging or AgingPolicy())


def _monte_carlo_ber(chains: np.ndarray, sigma: float, seed: int) -> float:
    rng = np.random.default_rng([seed, _STREAM_BER_NOISE])
    challenges = random_challenges(rng, BER_MC_CHALLENGES)
    x = features(challenges) @ chains.T
    ref = x >= 0
    flips = 0
    for _ in range(BER_MC_READS):
        flips += np.count_nonzero((x + sigma * rng.standard_normal(x.shape) >= 0) != ref)
    return flips / (x.size * BER_MC_READS)


def evaluate(device: PufDevice, challenge: Challenge | np.ndarray, noisy: bool = False,
             rng_seed=None) -> Response:
    """R = PUF(C).  Noise uses the device's age-adjusted sigma."""
    if not isinstance(challenge, Challenge):
        challenge = Challenge.from_bits(challenge)
    x = device.delays(challenge.bits)
    if noisy and device.effective_sigma > 0:
        x = x + device.effective_sigma * np.random.default_rng(rng_seed).standard_normal(RESPONSE_BITS)
    return Response.from_bits(threshold(x))


def evaluate_many(device: PufDevice, challenges: np.ndarray, noisy: bool = False,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Vectorized evaluate over an (N, 32) bit matrix; returns (N, 128) uint8 bits."""
    x = device.delays(challenges)
    if noisy and device.effective_sigma > 0:
        if rng is None:
            raise ValueError("noisy evaluation needs an explicit generator")
        x = x + device.effective_sigma * rng.standard_normal(x.shape)
    return threshold(np.atleast_2d(x))


def majority_read(device: PufDevice, challenge: Challenge, votes: int, rng_seed) -> Response:
    """Per-bit majority over `votes` independent noisy reads (votes odd)."""
    if votes < 1 or votes % 2 == 0:
        raise ValueError("votes must be a positive odd number")
    x = device.delays(challenge.bits)
    sigma = device.effective_sigma
    if sigma == 0:
        return Response.from_bits(threshold(x))
    noise = np.random.default_rng(rng_seed).standard_normal((votes, RESPONSE_BITS))
    ones = threshold(x + sigma * noise).sum(axis=0)
    return Response.from_bits((2 * ones > votes).astype(np.uint8))


def age_device(device: PufDevice, years: float, policy: AgingPolicy | None = None) -> PufDevice:
    if years < 0:
        raise ValueError("years must be >= 0")
    return replace(device, age_years=device.age_years + years, aging=policy or device.aging)


def calibrate_sigma_for_ber(device_seed: int, target_ber: float, n_challenges: int = BER_MC_CHALLENGES) -> float:
    """Noise sigma whose single-read BER on this device equals target_ber.

    With a fixed challenge sample and fixed standard-normal draws z, a read of
    delay x flips iff sign(z) opposes x and sigma >= |x|/|z|, so the BER is an
    empirical CDF of those thresholds and the solution is a quantile of it.
    """
    if not 0 < target_ber < 0.5:
        raise ValueError("target_ber must lie strictly between 0 and 0.5")
    chains = np.random.default_rng([device_seed, _STREAM_CHAINS]).standard_normal((RESPONSE_BITS, FEATURE_DIM))
    x = features(random_challenges(np.random.default_rng([device_seed, _STREAM_CAL_CHALLENGES]), n_challenges)) @ chains.T
    z = np.random.default_rng([device_seed, _STREAM_CAL_NOISE]).standard_normal(x.shape)
    opposed = (x >= 0) != (z >= 0)
    t = np.sort(np.abs(x[opposed]) / np.abs(z[opposed]))
    total = x.size
    k = int(math.ceil(target_ber * total))
    if k >= t.size:
        best = float(t[-1])
        raise CalibrationError(f"BER {target_ber} unreachable; max {t.size / total:.4f}",
                               best_sigma=best, best_ber=t.size / total)
    # Any sigma in (t[k-1], t[k]) flips exactly k reads.
    return float(0.5 * (t[k - 1] + t[k]))


def measure_ber(device: PufDevice, n_challenges: int, reads: int, rng: np.random.Generator) -> float:
    """Intra-device BER: noisy reads vs the noiseless response."""
    challenges = random_challenges(rng, n_challenges)
    ref = evaluate_many(device, challenges)
    flips = 0
    for _ in range(reads):
        flips += np.count_nonzero(evaluate_many(device, challenges, noisy=True, rng=rng) != ref)
    return flips / (ref.size * reads)
