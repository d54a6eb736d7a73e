import csv
import json

import pytest

from levy_coupling_lab.cli import COLUMNS, EXIT_BUDGET, EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main
from levy_coupling_lab.config import (
    ConfigError, OUTPUT_ENV, build_field, build_psi, build_sim, build_spec, defaults, parse_config,
)

FAST = ["--sim.n", "200", "--sim.eps", "0.05", "--sim.t", "0.2", "--sim.t_grid", "0.05, 0.1, 0.2"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- configuration ------------------------------------------------------------------------


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg == defaults()
    spec = build_spec(cfg)
    assert (spec.family, spec.alpha, spec.truncation_radius) == ("truncated-stable", 1.5, 2.0)
    assert build_field(cfg).family == "separable-sinusoidal"
    assert build_psi(cfg).family == "lip-log"
    assert build_sim(cfg).eps_sim == 0.01


def test_parse_values_and_comments():
    cfg = parse_config("# demo\nlevy.alpha = 0.8   # lighter tails\nsim.x0 = 0.1\nquad.atol = auto\n")
    assert cfg["levy.alpha"] == 0.8
    assert cfg["sim.x0"] == (0.1,)
    assert cfg["quad.atol"] is None
    assert cfg.provenance["levy.alpha"] != cfg.provenance["levy.family"]


@pytest.mark.parametrize("text", [
    "levy.alpha = 2.5",
    "levy.alpha = two",
    "no.such.key = 1",
    "levy.alpha = 1.2\nlevy.alpha = 1.3",
    "levy.family = gaussian",
    "just text",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_round_trip_and_hash():
    cfg = parse_config("levy.alpha = 0.7\ncoeff.family = constant\ncoeff.params = 1.5\nsim.x0 = 0.25")
    again = parse_config(cfg.serialize())
    assert again == cfg
    assert again.content_hash() == cfg.content_hash()
    other = cfg.with_overrides([("seed", "5")])
    assert other.content_hash() != cfg.content_hash()
    assert other["seed"] == 5 and cfg["seed"] == 0


# -- command line ----------------------------------------------------------------------------


def test_unknown_subcommand(tmp_path, capsys):
    assert main(["check", "nothing", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["bogus", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["check", "lc-form", "--levy.alpha", "3", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["check", "lc-form", "--nope", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_keys_listing(capsys):
    assert main(["keys"]) == EXIT_PASS
    assert "levy.alpha" in capsys.readouterr().out


def test_lc_form_writes_artifacts(tmp_path):
    out = tmp_path / "lc"
    assert main(["check", "lc-form", "--out", str(out), "--gnuplot"]) == EXIT_PASS
    rows = _rows(out / "results.csv")
    assert rows[0] == [c.strip() for c in COLUMNS["check lc-form"].split(",")]
    assert len(rows) > 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_sha256"]
    assert "results.csv" in man["files"]
    assert (out / "plot.gp").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] is True


def test_budget_exit_code(tmp_path):
    argv = ["simulate", "single", "--sim.eps", "1e-7", "--sim.max_events", "1000", "--out", str(tmp_path)]
    assert main(argv) == EXIT_BUDGET


def test_failing_check_exit_code(tmp_path):
    # a fixed eps far above the admissible range leaves positive drift margins
    assert main(["check", "drift", "--drift.eps", "0.04", "--out", str(tmp_path)]) == EXIT_FAIL


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert main(["kernel", "jnu"]) == EXIT_PASS
    runs = list(tmp_path.glob("kernel-jnu-*"))
    assert len(runs) == 1 and (runs[0] / "results.csv").exists()


def test_simulation_columns_and_events(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "couple", *FAST, "--log-events", "--out", str(out)]) == EXIT_PASS
    rows = _rows(out / "results.csv")
    assert rows[0] == ["path", "coupling_time", "x1", "y1"]
    assert len(rows) == 201
    ev = _rows(out / "events.csv")
    assert ev[0][:2] == ["time", "branch"]


def test_rerun_is_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["estimate", "survival", *FAST, "--out", str(a)]) == EXIT_PASS
    assert main(["rerun", str(a / "manifest.json"), "--out", str(b), "--workers", "3", "--sim.chunk", "37"]) \
        == EXIT_PASS
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert main(["rerun", str(tmp_path / "missing.json"), "--out", str(b)]) == EXIT_USAGE
