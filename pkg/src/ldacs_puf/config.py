"""Scenario configuration: a versioned JSON document, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseConfig(_Strict):
    target_ber: float = Field(0.02, ge=0.0, lt=0.5)   # 0 disables noise


class AgingConfig(_Strict):
    factor_per_period: float = Field(1.19, ge=1)
    period_years: float = Field(2.0, gt=0)
    additive: bool = False
    horizon_years: int = Field(10, ge=0)
    step_years: int = Field(1, ge=1)
    trials: int = Field(10_000, ge=1)
    aircraft_index: int = Field(0, ge=0)


class HandshakeConfig(_Strict):
    sessions: int = Field(1000, ge=1)
    noisy: bool = False


class AttackConfig(_Strict):
    scenarios: int = Field(20, ge=1)
    model: str = Field("cma", pattern="^(cma|true)$")
    training_crps: int = Field(15_000, ge=1)
    max_training_crps: int = Field(60_000, ge=1)
    heldout_crps: int = Field(10_000, ge=1)
    fit_budget: int = Field(50_000, ge=1)
    patience: int = Field(40, ge=1)
    flip_budget: int = Field(2, ge=0, le=3)
    max_tests: int | None = Field(None, ge=1)
    use_omega: bool = True


class LinkabilityConfig(_Strict):
    scenarios: int = Field(100, ge=1)
    aircraft: int = Field(5, ge=1)
    flights_per_aircraft: int = Field(3, ge=1)
    window_ticks: int = Field(1000, ge=1)
    flight_ticks: int = Field(20, ge=1)          # small airport: short flights in a long window
    overlapping: bool = False                    # every aircraft flies every flight together


class PkiConfig(_Strict):
    trials: int = Field(20, ge=1)
    puf_trials: int = Field(2000, ge=1)


class ScenarioConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    aircraft: int = Field(5, ge=1)
    icao_base: int = Field(0x3C0000, ge=0, lt=1 << 24)
    challenge_space_bits: int = Field(16, ge=1, le=32)
    tau_bits: int = Field(24, ge=1, le=24)
    votes: int = Field(5, ge=1)
    noise: NoiseConfig = NoiseConfig()
    aging: AgingConfig = AgingConfig()
    handshake: HandshakeConfig = HandshakeConfig()
    attack: AttackConfig = AttackConfig()
    linkability: LinkabilityConfig = LinkabilityConfig()
    pki: PkiConfig = PkiConfig()
    quantum_bits: tuple[int, ...] = (128, 192, 256)
    output_dir: str = "out"

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.votes % 2 == 0:
            raise ValueError("votes must be odd")
        if self.icao_base + self.aircraft > 1 << 24:
            raise ValueError("ICAO range overflows 24 bits")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> ScenarioConfig:
        return parse_config({**self.model_dump(mode="json"), **changes})


def parse_config(data) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)
