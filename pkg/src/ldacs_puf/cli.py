"""Command-line front end.  Exit codes: 0 ok, 2 config error, 3 invariant
violation, 4 missing artifact."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .crp import collect_crps
from .harness import InvariantViolation, MissingArtifact, derive_seed, load_fleet, run_experiment, run_registration
from .protocol import RegistrationError

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_MISSING = 0, 2, 3, 4

COMMANDS = {
    "register": "register the fleet and persist the tower database",
    "handshake": "run honest handshakes against the registered fleet",
    "sniff": "passive tau-to-ICAO linkability over simulated traffic",
    "attack-alg1": "model-based (C, R) recovery and impersonation",
    "attack-cost": "quantum exponents and flip-correction candidate counts",
    "age-study": "handshake failure rate versus device age",
    "pki-compare": "certificate-based handshake next to the PUF handshake",
    "export-crps": "write CRPs of one registered device to a file",
}
EXPERIMENTS = {"handshake": ["handshake"], "sniff": ["linkability"], "attack-alg1": ["alg1"],
               "attack-cost": ["quantum_table", "flip_cost"], "age-study": ["aging_curve"],
               "pki-compare": ["pki_compare"]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldacs-puf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="scenario JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--output-dir", help="override output_dir")
        if name == "export-crps":
            p.add_argument("--aircraft", type=int, default=0, help="fleet index")
            p.add_argument("--count", type=int, default=10_000)
            p.add_argument("--noisy", action="store_true")
            p.add_argument("--space-bits", type=int, default=32)
            p.add_argument("--out", required=True)
    return parser


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    return cfg.with_overrides(**changes) if changes else cfg


def _export_crps(cfg: ScenarioConfig, args) -> dict:
    fleet = load_fleet(cfg)
    if not 0 <= args.aircraft < len(fleet):
        raise ConfigError(f"--aircraft must be in 0..{len(fleet) - 1}")
    if args.count < 1 or not 1 <= args.space_bits <= 32:
        raise ConfigError("--count must be positive and --space-bits in 1..32")
    rng = np.random.default_rng(derive_seed(cfg.seed, "export", args.aircraft))
    table = collect_crps(fleet.devices[args.aircraft], args.count, rng, noisy=args.noisy, space_bits=args.space_bits)
    table.write(args.out)
    return {"written": args.out, "crps": len(table)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "register":
            fleet = run_registration(cfg)
            out = {"registered": len(fleet), "output_dir": cfg.output_dir, "config_hash": cfg.config_hash}
        elif args.command == "export-crps":
            out = _export_crps(cfg, args)
        else:
            out = {name: run_experiment(cfg, name).summary for name in EXPERIMENTS[args.command]}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InvariantViolation, RegistrationError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(json.dumps(out, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
