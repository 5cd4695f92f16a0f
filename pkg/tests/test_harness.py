import csv
import json

import pytest

from ldacs_puf.config import ConfigError, ScenarioConfig, load_config, parse_config
from ldacs_puf.harness import (InvariantViolation, MissingArtifact, build_fleet, load_fleet, run_experiment,
                               run_registration)
from ldacs_puf.protocol import RegistrationError


def small(tmp_path, **extra):
    base = {"output_dir": str(tmp_path), "aircraft": 3, "handshake": {"sessions": 30},
            "aging": {"trials": 4000, "horizon_years": 4, "step_years": 2},
            "pki": {"trials": 2, "puf_trials": 100}, "linkability": {"scenarios": 5},
            "attack": {"scenarios": 2, "model": "true"}}
    base.update(extra)
    return parse_config(base)


def test_config_round_trip_and_strictness(tmp_path):
    cfg = small(tmp_path)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    again = load_config(path)
    assert again == cfg and again.config_hash == cfg.config_hash
    assert cfg.with_overrides(seed=1).config_hash != cfg.config_hash
    for bad in ({"bogus": 1}, {"attack": {"flip_budget": 4}}, {"votes": 4}, {"schema_version": 2},
                {"noise": {"target_ber": 0.6}}):
        with pytest.raises(ConfigError):
            parse_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_registration_is_byte_identical(tmp_path):
    cfg = small(tmp_path)
    run_registration(cfg, tmp_path / "a")
    run_registration(cfg, tmp_path / "b")
    for name in ("tower_db.json", "aircraft.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    fleet = load_fleet(cfg, tmp_path / "a")
    assert len(fleet) == 3


def test_five_aircraft_distinct_tau(tmp_path):
    fleet = run_registration(small(tmp_path, aircraft=5))
    assert len({r.aircraft_side.tau for r in fleet.records}) == 5


def test_forced_collision_rejected():
    # 8-bit debug tau: search fleet seeds until one registration collides.
    for seed in range(100):
        try:
            build_fleet(40, seed, tau_bits=8)
        except RegistrationError:
            return
    pytest.fail("no collision found")


def test_missing_and_mismatched_artifacts(tmp_path):
    cfg = small(tmp_path)
    with pytest.raises(MissingArtifact):
        run_experiment(cfg, "handshake")
    run_registration(cfg)
    with pytest.raises(MissingArtifact):
        load_fleet(cfg.with_overrides(seed=99))


def test_reports_carry_config_hash_and_reproduce(tmp_path):
    cfg = small(tmp_path)
    run_registration(cfg)
    for name in ("handshake", "quantum_table", "flip_cost", "linkability", "aging_curve", "pki_compare", "alg1"):
        report = run_experiment(cfg, name)
        first = (tmp_path / f"{name}.csv").read_bytes()
        rows = list(csv.DictReader((tmp_path / f"{name}.csv").open()))
        assert rows and all(r["config_hash"] == cfg.config_hash for r in rows)
        doc = json.loads((tmp_path / f"{name}.json").read_text())
        assert doc["config_hash"] == cfg.config_hash
        if name in ("handshake", "quantum_table", "linkability", "aging_curve"):
            run_experiment(cfg, name)
            assert (tmp_path / f"{name}.csv").read_bytes() == first
        if name == "alg1":
            assert report.summary["success_rate"] == 1.0
    q = list(csv.DictReader((tmp_path / "quantum_table.csv").open()))
    assert [(r["n_bits"], r["grover_search_log2"]) for r in q] == [("128", "64.0"), ("192", "96.0"), ("256", "128.0")]
    assert float(q[0]["preimage_log2"]) == pytest.approx(42.67, abs=0.01)


def test_invariant_violation_reported(tmp_path):
    cfg = small(tmp_path, linkability={"scenarios": 2, "overlapping": True, "aircraft": 2},
                aging={"trials": 5, "horizon_years": 2, "step_years": 2})
    run_registration(cfg)
    report = run_experiment(cfg, "linkability")
    assert report.summary["max_confidence"] == 0.5
    with pytest.raises(InvariantViolation):
        run_experiment(cfg, "aging_curve")     # 5 trials cannot match the closed form within 2 points
    with pytest.raises(ValueError):
        run_experiment(cfg, "nonsense")


def test_default_config_is_valid():
    cfg = ScenarioConfig()
    assert cfg.votes == 5 and cfg.challenge_space_bits == 16 and cfg.attack.flip_budget == 2
