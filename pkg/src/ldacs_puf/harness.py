"""Experiment drivers and report emission.

Registration writes two files into the output directory:

* ``tower_db.json``: the tower's table of (ICAO, C, R, tau) records.
* ``aircraft.json``: the radio-side (tau, theta) plus the simulated silicon
  (device seed, noise sigma), which a real deployment would not have as data.

Every experiment returns an `ExperimentReport`.  Its rows go to
``<name>.csv`` with the config hash and seed on every row; the summary and
any nested traces go to ``<name>.json``.  CSV rows are bit-exact for a given
config; the JSON traces additionally carry wall-clock timings.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import (AttackModel, algorithm1_attack, algorithm1_campaign, combination_count, impersonate,
                        link_tau_to_icao, parse_tap, permutation_count, quantum_cost_bits)
from .config import ScenarioConfig
from .crp import collect_crps
from .encoding import EncodingError, from_hex, to_hex
from .modeling import FitOptions
from .pki import CertificateAuthority, PkiParty, pki_handshake
from .primitives import h, trunc_bits
from .protocol import (OMEGA_BITS, Aircraft, AircraftRecord, Channel, IcaoAddress, PufResponder,
                       RegistrationRecord, Tau, Tower, TowerDatabase, TowerRecord, decode,
                       majority_failure_probability, omega_for, register, run_handshake)
from .puf import (AgingPolicy, Challenge, PufDevice, Response, age_device, calibrate_sigma_for_ber,
                  evaluate, generate_device)

EXPERIMENTS = ("handshake", "linkability", "alg1", "aging_curve", "quantum_table", "flip_cost", "pki_compare")
TOWER_DB = "tower_db.json"
AIRCRAFT_DB = "aircraft.json"


class MissingArtifact(FileNotFoundError):
    pass


class InvariantViolation(AssertionError):
    pass


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any tuple of ints and strings."""
    return int.from_bytes(hashlib.sha256(repr(parts).encode()).digest()[:8], "big") >> 1


def aging_policy(cfg: ScenarioConfig) -> AgingPolicy:
    a = cfg.aging
    return AgingPolicy(factor_per_period=a.factor_per_period, period_years=a.period_years, additive=a.additive)


# -- registration ------------------------------------------------------------------

@dataclass
class Fleet:
    records: list[RegistrationRecord]
    devices: list[PufDevice]
    db: TowerDatabase

    def __len__(self) -> int:
        return len(self.records)


def build_fleet(n: int, seed: int, *, icao_base: int = 0x3C0000, space_bits: int = 16, tau_bits: int = 24,
                target_ber: float = 0.0, aging: AgingPolicy | None = None, label: str = "fleet") -> Fleet:
    """Manufacture n devices, pick each a challenge in the subspace and register it.

    Raises RegistrationError if two aircraft end up with the same tau.
    """
    records, devices, db = [], [], TowerDatabase()
    for i in range(n):
        device_seed = derive_seed(seed, label, "device", i) % (1 << 31)
        sigma = calibrate_sigma_for_ber(device_seed, target_ber) if target_ber > 0 else 0.0
        device = generate_device(device_seed, sigma, aging)
        challenge = Challenge.from_subspace(derive_seed(seed, label, "challenge", i) % (1 << space_bits), space_bits)
        rec = register(IcaoAddress(icao_base + i), device, challenge, tau_bits)
        db.add(rec.tower_side)
        records.append(rec)
        devices.append(device)
    return Fleet(records, devices, db)


def check_c_recovery(records) -> None:
    for rec in records:
        t = rec.tower_side if isinstance(rec, RegistrationRecord) else rec
        if omega_for(t.challenge, t.response) ^ trunc_bits(h(t.response.to_bytes()), OMEGA_BITS) != t.challenge.value:
            raise InvariantViolation(f"C-recovery identity fails for ICAO {t.icao}")


def _registration_key(cfg: ScenarioConfig) -> str:
    fields = [cfg.seed, cfg.aircraft, cfg.icao_base, cfg.challenge_space_bits, cfg.tau_bits, cfg.noise.target_ber]
    return hashlib.sha256(json.dumps(fields).encode()).hexdigest()[:16]


def run_registration(cfg: ScenarioConfig, out_dir=None) -> Fleet:
    """Register cfg.aircraft aircraft and persist both sides; same config gives identical files."""
    out = Path(out_dir or cfg.output_dir)
    fleet = build_fleet(cfg.aircraft, cfg.seed, icao_base=cfg.icao_base, space_bits=cfg.challenge_space_bits,
                        tau_bits=cfg.tau_bits, target_ber=cfg.noise.target_ber, aging=aging_policy(cfg))
    check_c_recovery(fleet.records)
    out.mkdir(parents=True, exist_ok=True)
    head = {"schema_version": 1, "registration_key": _registration_key(cfg), "tau_bits": cfg.tau_bits}
    tower = {**head, "records": [
        {"icao": str(r.tower_side.icao), "challenge": to_hex(r.tower_side.challenge.value, 32),
         "response": to_hex(r.tower_side.response.value, 128), "tau": str(r.tower_side.tau)}
        for r in fleet.records]}
    aircraft = {**head, "records": [
        {"icao": str(r.tower_side.icao), "tau": str(r.aircraft_side.tau), "theta": r.aircraft_side.theta.hex(),
         "device_seed": d.seed, "noise_sigma": d.noise_sigma}
        for r, d in zip(fleet.records, fleet.devices)]}
    (out / TOWER_DB).write_text(json.dumps(tower, indent=2, sort_keys=True) + "\n")
    (out / AIRCRAFT_DB).write_text(json.dumps(aircraft, indent=2, sort_keys=True) + "\n")
    return fleet


def load_fleet(cfg: ScenarioConfig, out_dir=None) -> Fleet:
    out = Path(out_dir or cfg.output_dir)
    paths = [out / TOWER_DB, out / AIRCRAFT_DB]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise MissingArtifact(f"registration artifacts missing: {', '.join(missing)} (run `register` first)")
    tower, aircraft = (json.loads(p.read_text()) for p in paths)
    if tower.get("registration_key") != _registration_key(cfg):
        raise MissingArtifact(f"{paths[0]} was registered under a different configuration")
    records, devices, db = [], [], TowerDatabase()
    try:
        for t, a in zip(tower["records"], aircraft["records"], strict=True):
            tr = TowerRecord(IcaoAddress(from_hex(t["icao"], 24)), Challenge(from_hex(t["challenge"], 32)),
                             Response(from_hex(t["response"], 128)), Tau(from_hex(t["tau"], 24)))
            ar = AircraftRecord(Tau(from_hex(a["tau"], 24)), bytes.fromhex(a["theta"]))
            device = generate_device(a["device_seed"], a["noise_sigma"], aging_policy(cfg))
            records.append(RegistrationRecord(ar, tr))
            devices.append(device)
            db.add(tr)
    except (KeyError, ValueError, EncodingError) as exc:
        raise MissingArtifact(f"registration artifacts unreadable: {exc}") from exc
    for rec, device in zip(records, devices):
        if evaluate(device, rec.tower_side.challenge) != rec.tower_side.response:
            raise InvariantViolation(f"device for {rec.tower_side.icao} no longer reproduces its registered R")
    check_c_recovery(records)
    return Fleet(records, devices, db)


# -- reports -----------------------------------------------------------------------

@dataclass
class ExperimentReport:
    name: str
    config_hash: str
    seed: int
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append({"config_hash": self.config_hash, "seed": self.seed, **row})

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{self.name}.csv", out / f"{self.name}.json"
        columns = list(dict.fromkeys(k for row in self.rows for k in row))
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)
        doc = {"experiment": self.name, "config_hash": self.config_hash, "seed": self.seed,
               "summary": self.summary, "violations": self.violations, "trace": self.trace}
        json_path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        return csv_path, json_path


# -- experiments -------------------------------------------------------------------

def _noiseless(device: PufDevice):
    return lambda challenge: evaluate(device, challenge)


def _handshake(cfg: ScenarioConfig, fleet: Fleet, report: ExperimentReport) -> None:
    channel = Channel()
    keys = set()
    for s in range(cfg.handshake.sessions):
        i = s % len(fleet)
        rec, device = fleet.records[i], fleet.devices[i]
        responder = (PufResponder(device, cfg.votes, derive_seed(cfg.seed, "hs-read", s))
                     if cfg.handshake.noisy else _noiseless(device))
        channel.tick = s
        aircraft = Aircraft(rec.aircraft_side, responder, derive_seed(cfg.seed, "hs-a", s), derive_seed(cfg.seed, "hs-ka", s))
        tower = Tower(fleet.db, derive_seed(cfg.seed, "hs-t", s), derive_seed(cfg.seed, "hs-kt", s))
        res = run_handshake(aircraft, tower, channel)
        equal = res.success and res.aircraft_key == res.tower_key
        if res.success:
            if not equal:
                report.violations.append(f"session {s}: parties derived different keys")
            keys.add(res.tower_key.key)
        omega = decode(res.frames[1]).omega if len(res.frames) > 1 else None
        if omega is not None and omega ^ trunc_bits(rec.aircraft_side.theta, OMEGA_BITS) != rec.tower_side.challenge.value:
            report.violations.append(f"session {s}: omega does not recover C")
        report.add(session=s, icao=str(rec.tower_side.icao), tau=str(rec.aircraft_side.tau), success=res.success,
                   reason=res.reason or "", keys_equal=equal, bytes_on_air=res.bytes_on_air)
    ok = sum(r["success"] for r in report.rows)
    if not cfg.handshake.noisy and ok != len(report.rows):
        report.violations.append(f"noiseless handshakes failed: {len(report.rows) - ok}")
    if len(keys) != ok:
        report.violations.append("two sessions share a session key")
    report.summary = {"sessions": len(report.rows), "completed": ok, "success_rate": ok / len(report.rows)}
    report.trace = channel.tap


def _schedule(cfg: ScenarioConfig, rng: np.random.Generator, icaos: list[IcaoAddress]):
    lk = cfg.linkability
    flights = []
    for j in range(lk.flights_per_aircraft):
        shared = j * (lk.window_ticks // lk.flights_per_aircraft)
        for icao in icaos:
            start = shared if lk.overlapping else int(rng.integers(0, max(1, lk.window_ticks - lk.flight_ticks + 1)))
            flights.append((icao, (start, start + lk.flight_ticks - 1)))
    return flights


def _linkability(cfg: ScenarioConfig, report: ExperimentReport) -> None:
    lk = cfg.linkability
    all_certain = 0
    for s in range(lk.scenarios):
        fleet = build_fleet(lk.aircraft, derive_seed(cfg.seed, "link", s), icao_base=cfg.icao_base,
                            space_bits=cfg.challenge_space_bits, label="link")
        rng = np.random.default_rng(derive_seed(cfg.seed, "link-schedule", s))
        icaos = [r.tower_side.icao for r in fleet.records]
        schedule = _schedule(cfg, rng, icaos)
        events = sorted((int(rng.integers(a, b + 1)), icaos.index(icao)) for icao, (a, b) in schedule)
        channel = Channel()
        for k, (tick, i) in enumerate(events):
            channel.tick = tick
            run_handshake(Aircraft(fleet.records[i].aircraft_side, _noiseless(fleet.devices[i]),
                                   derive_seed(cfg.seed, "link-a", s, k), derive_seed(cfg.seed, "link-ka", s, k)),
                          Tower(fleet.db, derive_seed(cfg.seed, "link-t", s, k), derive_seed(cfg.seed, "link-kt", s, k)),
                          channel)
        table = link_tau_to_icao(parse_tap(channel.tap), schedule)
        truth = {r.aircraft_side.tau: r.tower_side.icao for r in fleet.records}
        false_certain = sum(e.confidence == 1.0 and e.icao != truth[e.tau] for e in table.entries)
        certain = table.all_certain() and len(table.entries) == lk.aircraft
        all_certain += certain
        max_conf = max(e.confidence for e in table.entries)
        if false_certain:
            report.violations.append(f"scenario {s}: {false_certain} confident links are wrong")
        if lk.overlapping and max_conf > 1 / lk.aircraft:
            report.violations.append(f"scenario {s}: overlapping schedules produced confidence {max_conf}")
        report.add(scenario=s, overlapping=lk.overlapping, observed_tau=len(table.entries),
                   certain_links=sum(e.confidence == 1.0 for e in table.entries), all_linked=certain,
                   min_confidence=min(e.confidence for e in table.entries), max_confidence=max_conf,
                   false_certain=false_certain)
        if s == 0:
            report.trace = channel.tap
    report.summary = {"scenarios": lk.scenarios, "all_linked_fraction": all_certain / lk.scenarios,
                      "max_confidence": max(r["max_confidence"] for r in report.rows)}


def _alg1(cfg: ScenarioConfig, report: ExperimentReport) -> None:
    at = cfg.attack
    wins = 0
    for s in range(at.scenarios):
        fleet = build_fleet(1, derive_seed(cfg.seed, "alg1", s), icao_base=cfg.icao_base + s % 256,
                            space_bits=cfg.challenge_space_bits, tau_bits=cfg.tau_bits, label="alg1")
        rec, device = fleet.records[0], fleet.devices[0]
        icao = rec.tower_side.icao
        # Passive capture of one honest session gives tau (M1) and omega (M2).
        channel = Channel()
        run_handshake(Aircraft(rec.aircraft_side, _noiseless(device), derive_seed(cfg.seed, "alg1-a", s), 1),
                      Tower(fleet.db, derive_seed(cfg.seed, "alg1-t", s), 2), channel)
        sniffed = parse_tap(channel.tap)[0]
        tau = sniffed.extracted_tau
        omega = decode(sniffed.frames[1]).omega if at.use_omega else None

        if at.model == "true":
            result = algorithm1_attack(AttackModel(device.chains, 1.0), tau, icao, cfg.challenge_space_bits,
                                       at.flip_budget, omega=omega, max_tests=at.max_tests, tau_bits=cfg.tau_bits)
            trace = [{"training_crps": 0, "heldout_accuracy": 1.0, **result.to_report()}]
        else:
            crp_seed = derive_seed(cfg.seed, "alg1-crps", s)
            heldout = collect_crps(device, at.heldout_crps, np.random.default_rng([crp_seed, 1]))
            result, trace = algorithm1_campaign(
                lambda n: collect_crps(device, n, np.random.default_rng([crp_seed, 0, n])), heldout, tau, icao,
                initial_crps=at.training_crps, max_crps=at.max_training_crps,
                challenge_space_bits=cfg.challenge_space_bits, flip_budget=at.flip_budget, omega=omega,
                max_tests=at.max_tests, fit_budget=at.fit_budget, seed=s, options=FitOptions(patience=at.patience))

        matches = (result.outcome == "success" and result.challenge == rec.tower_side.challenge
                   and result.response_value == rec.tower_side.response.value)
        established = False
        imp_reason = "not-attempted"
        if result.outcome == "success" and result.response is not None:
            tower = Tower(fleet.db, derive_seed(cfg.seed, "alg1-imp-t", s), 3)
            imp = impersonate((result.challenge, result.response), icao, tower,
                              derive_seed(cfg.seed, "alg1-imp-a", s), 4, tau_bits=cfg.tau_bits)
            established = imp.success and imp.aircraft_key == imp.tower_key
            imp_reason = "established" if established else imp.reason
        wins += matches and established
        last = trace[-1]
        report.add(scenario=s, icao=str(icao), tau=str(tau), model=at.model,
                   training_crps=last["training_crps"], heldout_accuracy=last["heldout_accuracy"],
                   outcome=result.outcome, pair_matches_registration=matches,
                   candidates_tested=result.candidates_tested, flips_used=result.flips_used,
                   impersonation=imp_reason)
        report.trace.append({"scenario": s, "rounds": trace})
    report.summary = {"scenarios": at.scenarios, "success_rate": wins / at.scenarios,
                      "mean_heldout_accuracy": float(np.mean([r["heldout_accuracy"] for r in report.rows]))}


def _aging_rates(cfg: ScenarioConfig, fleet: Fleet, years: float, trials: int, label: str):
    """Monte-Carlo handshake failure rate and closed-form prediction at a device age.

    Trial t re-reads the PUF with the same noise draws at every age, so
    the measured curve is monotone in the noise level.
    """
    idx = cfg.aging.aircraft_index
    if idx >= len(fleet):
        raise InvariantViolation(f"aging.aircraft_index {idx} outside the registered fleet")
    rec = fleet.records[idx]
    aged = age_device(fleet.devices[idx], years, aging_policy(cfg))
    failures = 0
    for t in range(trials):
        responder = PufResponder(aged, cfg.votes, derive_seed(cfg.seed, label, t))
        aircraft = Aircraft(rec.aircraft_side, responder, derive_seed(cfg.seed, label, "a", t), t)
        tower = Tower(fleet.db, derive_seed(cfg.seed, label, "t", t), t + 1)
        failures += not run_handshake(aircraft, tower).success
    return aged, failures / trials, majority_failure_probability(aged, rec.tower_side.challenge, cfg.votes)


def _aging_curve(cfg: ScenarioConfig, fleet: Fleet, report: ExperimentReport) -> None:
    a = cfg.aging
    prev = -1.0
    for years in range(0, a.horizon_years + 1, a.step_years):
        aged, mc, closed = _aging_rates(cfg, fleet, years, a.trials, "aging")
        base = aged.base_ber
        report.add(years=years, base_ber=base, effective_ber=aged.effective_ber,
                   ber_ratio=aged.effective_ber / base if base else float("nan"),
                   effective_sigma=aged.effective_sigma, trials=a.trials, mc_failure_rate=mc,
                   closed_form_failure_rate=closed, abs_diff=abs(mc - closed))
        if mc < prev:
            report.violations.append(f"failure rate decreased at {years} years")
        if abs(mc - closed) > 0.02:
            report.violations.append(f"Monte-Carlo {mc:.4f} vs closed form {closed:.4f} at {years} years")
        prev = mc
    report.summary = {"years": [r["years"] for r in report.rows],
                      "mc_failure_rate": [r["mc_failure_rate"] for r in report.rows],
                      "closed_form_failure_rate": [r["closed_form_failure_rate"] for r in report.rows]}


def _pki_compare(cfg: ScenarioConfig, fleet: Fleet, report: ExperimentReport) -> None:
    a = cfg.aging
    horizon = a.horizon_years
    ca = CertificateAuthority.create(b"LDACS-CA", derive_seed(cfg.seed, "ca"))
    aircraft = PkiParty.enroll(ca, str(fleet.records[0].tower_side.icao).encode(), derive_seed(cfg.seed, "pki-a"),
                               (0, horizon))
    tower = PkiParty.enroll(ca, b"TOWER", derive_seed(cfg.seed, "pki-t"), (0, horizon))
    puf_bytes = run_handshake(
        Aircraft(fleet.records[0].aircraft_side, _noiseless(fleet.devices[0]), 0, 0), Tower(fleet.db, 1, 1)).bytes_on_air
    for years in range(0, horizon + 1, a.step_years):
        _, mc, closed = _aging_rates(cfg, fleet, years, cfg.pki.puf_trials, "pki-puf")
        report.add(years=years, protocol="puf", success_rate=1 - mc, closed_form_success_rate=1 - closed,
                   messages=4, bytes_on_air=puf_bytes, verifications_performed=4,
                   aircraft_stored_secrets=1, tower_stored_secrets=len(fleet))
        ok = 0
        metrics = {}
        for t in range(cfg.pki.trials):
            res = pki_handshake(aircraft, tower, ca.anchor, now=years, nonce_seed=derive_seed(cfg.seed, "pki", years, t),
                                kem_seed=t)
            ok += res.success and res.aircraft_key == res.tower_key
            metrics = res.metrics
        rate = ok / cfg.pki.trials
        report.add(years=years, protocol="pki", success_rate=rate, closed_form_success_rate=1.0,
                   messages=metrics["messages"], bytes_on_air=metrics["bytes_on_air"],
                   verifications_performed=metrics["verifications_performed"],
                   aircraft_stored_secrets=1, tower_stored_secrets=1)
        if rate != 1.0:
            report.violations.append(f"PKI handshake success {rate} at {years} years")
        if metrics["bytes_on_air"] <= puf_bytes:
            report.violations.append("PKI handshake is not larger than the PUF handshake")
    puf = [r["success_rate"] for r in report.rows if r["protocol"] == "puf"]
    report.summary = {"puf_success": puf, "pki_success": [r["success_rate"] for r in report.rows if r["protocol"] == "pki"],
                      "puf_bytes": puf_bytes, "pki_bytes": report.rows[-1]["bytes_on_air"]}


def _quantum_table(cfg: ScenarioConfig, report: ExperimentReport) -> None:
    # Exponent arithmetic only: no quantum algorithm is simulated.
    for n in cfg.quantum_bits:
        report.add(n_bits=n, grover_search_log2=quantum_cost_bits(n, "grover_search"),
                   preimage_log2=round(quantum_cost_bits(n, "preimage"), 6))
    report.summary = {"rows": [{k: r[k] for k in ("n_bits", "grover_search_log2", "preimage_log2")}
                               for r in report.rows]}


def _flip_cost(cfg: ScenarioConfig, report: ExperimentReport) -> None:
    space = 1 << cfg.challenge_space_bits
    for n, k in [(128, 1), (128, 2), (128, 3), (192, 2), (192, 3), (256, 2)]:
        tests = space * sum(combination_count(n, j) for j in range(k + 1))
        report.add(response_bits=n, flips=k, permutations=permutation_count(n, k),
                   combinations=combination_count(n, k), max_candidate_tests=tests)
    report.summary = {"rows": [{k: r[k] for k in ("response_bits", "flips", "permutations", "combinations")}
                               for r in report.rows]}


def run_experiment(cfg: ScenarioConfig, experiment: str, out_dir=None) -> ExperimentReport:
    """Run one experiment, write its reports and raise InvariantViolation on any violation."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    out = Path(out_dir or cfg.output_dir)
    report = ExperimentReport(experiment, cfg.config_hash, cfg.seed)
    started = time.perf_counter()
    if experiment in ("handshake", "aging_curve", "pki_compare"):
        fleet = load_fleet(cfg, out)
        {"handshake": _handshake, "aging_curve": _aging_curve, "pki_compare": _pki_compare}[experiment](
            cfg, fleet, report)
    else:
        {"linkability": _linkability, "alg1": _alg1, "quantum_table": _quantum_table,
         "flip_cost": _flip_cost}[experiment](cfg, report)
    report.summary["wall_seconds"] = round(time.perf_counter() - started, 3)
    report.write(out)
    if report.violations:
        raise InvariantViolation(f"{experiment}: " + "; ".join(report.violations[:5]))
    return report
