import json

from ldacs_puf.cli import main


def test_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["handshake", "--output-dir", out]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text('{"typo_key": 3}')
    assert main(["register", "--config", str(bad)]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"aircraft": 2, "handshake": {"sessions": 10}, "output_dir": out}))
    assert main(["register", "--config", str(cfg), "--seed", "4"]) == 0
    assert main(["handshake", "--config", str(cfg), "--seed", "4"]) == 0
    assert main(["handshake", "--config", str(cfg), "--seed", "5"]) == 4
    assert main(["attack-cost", "--config", str(cfg)]) == 0
    crp = tmp_path / "c.txt"
    assert main(["export-crps", "--config", str(cfg), "--seed", "4", "--count", "7", "--out", str(crp)]) == 0
    assert len(crp.read_text().splitlines()) == 8
    assert main(["export-crps", "--config", str(cfg), "--seed", "4", "--aircraft", "9", "--out", str(crp)]) == 2
    capsys.readouterr()


def test_invariant_exit(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"aircraft": 1, "output_dir": str(tmp_path),
                               "aging": {"trials": 3, "horizon_years": 2, "step_years": 2}}))
    assert main(["register", "--config", str(cfg)]) == 0
    assert main(["age-study", "--config", str(cfg)]) == 3
