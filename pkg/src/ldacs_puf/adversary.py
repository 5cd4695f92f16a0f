"""Attacks on the PUF handshake: passive linkability, model-based (C, R)
disclosure with bit-flip correction, impersonation and cost arithmetic.

Candidate search order
----------------------
A sweep over 2^16 challenges with every 2-flip correction is about 5e8
hashes.  Instead, flip patterns are enumerated pattern-major: pattern p is
tried on every challenge (ascending C) before pattern p+1.  Patterns are
subsets of *ranks*, where rank 0 is the response bit whose model margin
|w . phi(C)| is smallest for that C; patterns are ordered by their largest
rank, then by size, then lexicographically.  Model mistakes sit close to the
decision boundary, so the true correction usually shows up after a few
dozen patterns.  With no test cap the search is still exhaustive over all
patterns of at most `flip_budget` flips.

A 24-bit tau test alone yields false hits at rate 2^-24 per candidate.  If
the attacker has also sniffed omega from M2 (it is sent in clear), a hit is
only accepted when omega xor trunc32(h(R)) == C, which removes them.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Iterator

import numpy as np

from .crp import CrpTable
from .encoding import EncodingError, ints_to_bits_matrix
from .modeling import FitOptions, bit_accuracy, fit_puf_model
from .primitives import h, trunc_bits
from .protocol import (OMEGA_BITS, TAG_M1, TAU_BITS, Aircraft, AircraftRecord, Channel,
                       HandshakeResult, IcaoAddress, Tau, Tower, compute_tau, decode, run_handshake)
from .puf import CHALLENGE_BITS, Challenge, Response, features, threshold


class WrongFrameError(EncodingError):
    pass


# -- passive linkability ---------------------------------------------------------

@dataclass(frozen=True)
class SniffedSession:
    frames: tuple[bytes, ...]
    extracted_tau: Tau
    timestamp: int


def extract_tau(frame: bytes) -> Tau:
    if not frame:
        raise EncodingError("empty frame")
    if frame[0] != TAG_M1:
        raise WrongFrameError(f"expected an M1 frame, got tag {frame[0]:#04x}")
    return decode(frame).tau


def parse_tap(lines: Iterable[str]) -> list[SniffedSession]:
    """Group channel-tap lines ("<tick> <hex>") into sessions; each M1 opens one."""
    sessions, current, tick = [], None, 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            tick_text, hex_text = line.split()
            frame = bytes.fromhex(hex_text)
            tick = int(tick_text)
        except ValueError as exc:
            raise EncodingError(f"bad tap line {line!r}") from exc
        if frame[:1] == bytes([TAG_M1]):
            if current:
                sessions.append(current)
            current = [tick, extract_tau(frame), [frame]]
        elif current:
            current[2].append(frame)
    if current:
        sessions.append(current)
    return [SniffedSession(tuple(fr), tau, t) for t, tau, fr in sessions]


@dataclass(frozen=True)
class LinkEntry:
    tau: Tau
    icao: IcaoAddress | None
    confidence: float
    candidates: frozenset


@dataclass
class LinkTable:
    entries: list[LinkEntry] = field(default_factory=list)

    def for_tau(self, tau: Tau) -> LinkEntry | None:
        return next((e for e in self.entries if e.tau == tau), None)

    def all_certain(self) -> bool:
        return bool(self.entries) and all(e.confidence == 1.0 for e in self.entries)


def link_tau_to_icao(observations: list[SniffedSession], schedule) -> LinkTable:
    """Co-occurrence matching of observed tau values to scheduled aircraft.

    `schedule` is a list of (icao, (start, end)) flights, end inclusive.  Each
    observation restricts its tau to the aircraft airborne at that tick, and
    candidate sets of one tau intersect across observations.  Since tau is a
    static one-to-one pseudonym, a tau pinned to a single aircraft removes
    that aircraft from every other tau's set; this repeats to a fixed point.
    """
    cands: dict[Tau, set] = {}
    for obs in observations:
        active = {icao for icao, (start, end) in schedule if start <= obs.timestamp <= end}
        tau = obs.extracted_tau
        cands[tau] = cands[tau] & active if tau in cands else set(active)

    changed = True
    while changed:
        changed = False
        pinned = {tau: next(iter(s)) for tau, s in cands.items() if len(s) == 1}
        for tau, s in cands.items():
            drop = {icao for other, icao in pinned.items() if other != tau} & s
            if drop and len(s) > 1:
                s -= drop
                changed = True

    entries = []
    for tau in sorted(cands, key=lambda t: t.value):
        s = cands[tau]
        icao = next(iter(s)) if len(s) == 1 else None
        entries.append(LinkEntry(tau, icao, 1.0 / len(s) if s else 0.0, frozenset(s)))
    return LinkTable(entries)


# -- model-based disclosure --------------------------------------------------------

@dataclass
class AttackModel:
    weights: np.ndarray          # (L, 33)
    heldout_accuracy: float

    @property
    def response_bits(self) -> int:
        return self.weights.shape[0]


def train_attack_model(train: CrpTable, heldout: CrpTable, budget: int = 50_000, seed: int = 0,
                       options: FitOptions | None = None) -> AttackModel:
    model = fit_puf_model(train, budget=budget, seed=seed, options=options)
    return AttackModel(model.weights, float(bit_accuracy(model, heldout).mean()))


def permutation_count(n: int, k: int) -> int:
    """Ordered selections of k distinct items from n: n! / (n - k)!."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    return math.perm(n, k)


def combination_count(n: int, k: int) -> int:
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    return math.comb(n, k)


def quantum_cost_bits(n_bits: int, attack: str) -> float:
    """log2 query cost of a quantum attack on an n-bit value.

    Asymptotic-exponent arithmetic only, nothing is simulated: Grover search
    costs 2^(n/2) and a quantum hash preimage attack 2^(n/3).
    """
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    if attack == "grover_search":
        return n_bits / 2
    if attack == "preimage":
        return n_bits / 3
    raise ValueError(f"unknown attack {attack!r}")


def recover_challenge_from_omega(omega: int, r: Response | bytes) -> Challenge:
    rb = r.to_bytes() if isinstance(r, Response) else bytes(r)
    return Challenge(omega ^ trunc_bits(h(rb), OMEGA_BITS))


def flip_patterns(response_bits: int, flip_budget: int) -> Iterator[tuple[int, ...]]:
    """Rank subsets of size <= flip_budget, by largest rank, then size, then lexicographic."""
    yield ()
    for top in range(response_bits):
        for size in range(1, flip_budget + 1):
            for rest in combinations(range(top), size - 1):
                yield rest + (top,)


@dataclass
class AttackResult:
    target_tau: Tau
    outcome: str                 # "success" | "not-found"
    candidates_tested: int
    flips_used: int | None
    wall_time: float
    challenge: Challenge | None = None
    response_value: int | None = None
    response_bits: int = 128

    @property
    def response(self) -> Response | None:
        if self.response_value is None or self.response_bits != 128:
            return None
        return Response(self.response_value)

    def to_report(self) -> dict:
        return {
            "target_tau": str(self.target_tau),
            "candidates_tested": self.candidates_tested,
            "flips_used": self.flips_used,
            "wall_time": round(self.wall_time, 6),
            "outcome": self.outcome,
            "challenge": None if self.challenge is None else f"{self.challenge.value:08x}",
            "response": None if self.response_value is None
            else f"{self.response_value:0{self.response_bits // 4}x}",
        }


def _subspace_challenges(space_bits: int) -> np.ndarray:
    values = np.arange(1 << space_bits, dtype=np.uint64) << np.uint64(CHALLENGE_BITS - space_bits)
    return ints_to_bits_matrix(values.tolist(), CHALLENGE_BITS)


def algorithm1_attack(model: AttackModel, target_tau: Tau, icao: IcaoAddress,
                      challenge_space_bits: int = 16, flip_budget: int = 2, *,
                      omega: int | None = None, max_tests: int | None = None,
                      tau_bits: int = TAU_BITS) -> AttackResult:
    """Search the challenge subspace for a (C, R) with trunc(h(ICAO || R)) = tau.

    R is the model's prediction for C, corrected by up to `flip_budget` bit
    flips.  `omega`, when given, is the value sniffed from M2 and filters
    tau false positives.  `max_tests` caps the number of hashed candidates.
    """
    if not 0 <= challenge_space_bits <= CHALLENGE_BITS:
        raise ValueError("challenge_space_bits must be in 0..32")
    if not 0 <= flip_budget <= 3:
        raise ValueError("flip_budget must be in 0..3")
    L = model.response_bits
    if L % 8:
        raise ValueError("response width must be a multiple of 8 bits")
    t0 = time.perf_counter()
    shift = TAU_BITS - tau_bits
    want = target_tau.value >> shift

    chal_bits = _subspace_challenges(challenge_space_bits)
    n = len(chal_bits)
    margins = features(chal_bits) @ model.weights.T
    if flip_budget:
        order = np.argsort(np.abs(margins), axis=1, kind="stable")      # rank -> bit position
        byte_of = (3 + order // 8).astype(np.intp)
        mask_of = (0x80 >> (order % 8)).astype(np.uint8)
    base = np.hstack([np.tile(np.frombuffer(icao.to_bytes(), np.uint8), (n, 1)),
                      np.packbits(threshold(margins), axis=1)])
    width = base.shape[1]
    rows = np.arange(n)
    sha = hashlib.sha256
    tested = 0

    for pattern in flip_patterns(L, flip_budget):
        count = n if max_tests is None else min(n, max_tests - tested)
        if count <= 0:
            break
        buf = base.copy()
        for rank in pattern:
            buf[rows, byte_of[:, rank]] ^= mask_of[:, rank]
        raw = buf.tobytes()
        hits = [i for i in range(count)
                if int.from_bytes(sha(raw[i * width:(i + 1) * width]).digest()[:3], "big") >> shift == want]
        tested += count
        for i in hits:                                               # ascending C
            r_bytes = raw[i * width + 3:(i + 1) * width]
            c_value = i << (CHALLENGE_BITS - challenge_space_bits)
            if omega is not None and omega ^ trunc_bits(h(r_bytes), OMEGA_BITS) != c_value:
                continue
            assert compute_tau(icao, r_bytes, tau_bits) == Tau(want << shift), "unsound attack result"
            return AttackResult(target_tau, "success", tested, len(pattern), time.perf_counter() - t0,
                                Challenge(c_value), int.from_bytes(r_bytes, "big"), L)
    return AttackResult(target_tau, "not-found", tested, None, time.perf_counter() - t0, response_bits=L)


def algorithm1_campaign(collect: Callable[[int], CrpTable], heldout: CrpTable, target_tau: Tau,
                        icao: IcaoAddress, *, initial_crps: int = 20_000, max_crps: int = 80_000,
                        challenge_space_bits: int = 16, flip_budget: int = 2, omega: int | None = None,
                        max_tests: int | None = None, fit_budget: int = 50_000, seed: int = 0,
                        options: FitOptions | None = None) -> tuple[AttackResult, list[dict]]:
    """Train, attack, and on failure retrain on twice the CRPs until max_crps.

    `collect(n)` returns n training CRPs from the target device; the trace
    holds one report per round.
    """
    trace = []
    n = initial_crps
    while True:
        model = train_attack_model(collect(n), heldout, budget=fit_budget, seed=seed, options=options)
        result = algorithm1_attack(model, target_tau, icao, challenge_space_bits, flip_budget,
                                   omega=omega, max_tests=max_tests)
        trace.append({"training_crps": n, "heldout_accuracy": model.heldout_accuracy, **result.to_report()})
        if result.outcome == "success" or n * 2 > max_crps:
            return result, trace
        n *= 2


# -- impersonation -----------------------------------------------------------------

def impersonate(recovered: tuple[Challenge, Response] | None, icao: IcaoAddress, tower: Tower,
                nonce_seed: int = 0, kem_seed: int = 0, channel: Channel | None = None,
                tau_bits: int = TAU_BITS) -> HandshakeResult:
    """Run the aircraft role with a recovered R standing in for the PUF.

    Result.reason is "impersonation-failed" plus the tower/aircraft abort
    reason when the pair is wrong.
    """
    if not recovered or recovered[1] is None:
        raise ValueError("impersonation needs a recovered (C, R) pair")
    _, response = recovered
    record = AircraftRecord(compute_tau(icao, response.to_bytes(), tau_bits), h(response.to_bytes()))
    fake = Aircraft(record, lambda _challenge: response, nonce_seed, kem_seed)
    result = run_handshake(fake, tower, channel)
    if not result.success:
        result.reason = f"impersonation-failed:{result.reason}"
    return result
