import json
from pathlib import Path

import pytest

from stoch_boussinesq import cli
from stoch_boussinesq import ensemble as ens
from stoch_boussinesq.config import ConfigError, load_config, parse_config

MINIMAL = {
    "experiment": "global_decay",
    "n_paths": 2,
    "dt": 0.002,
    "t_final": 0.02,
    "grid": {"n": 16},
    "transport": {"kind": "random", "dim_h": 4, "seed": 1, "nb2": 0.01},
    "sigma": {"kind": "diagonal-linear", "eps0": 0.01},
}


def write(tmp_path, name="c.json", **over):
    d = {**MINIMAL, "output_dir": str(tmp_path / "runs"), **over}
    path = tmp_path / name
    path.write_text(json.dumps(d, indent=2))
    return path


def snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestRun:
    def test_minimal_run(self, tmp_path, capsys):
        path = write(tmp_path)
        assert cli.main(["run", str(path)]) == 0
        cfg = load_config(path)
        manifest = json.loads((cfg.run_dir() / "manifest.json").read_text())
        for f in manifest["files"]:
            assert (cfg.run_dir() / f).is_file(), f
        for name in ("assumption_report.json", "summary.json", "summary.txt", "traces/path_0000.ndjson", "paths.csv"):
            assert name in manifest["files"]
        rows = (cfg.run_dir() / "traces/path_0001.ndjson").read_text().splitlines()
        assert len(rows) == 11 and set(json.loads(rows[0])) == {"t", "lp_p", "dissipation", "weighted", "component_lp"}
        assert "C_fit" in capsys.readouterr().out

    def test_idempotent(self, tmp_path):
        path = write(tmp_path, checkpoints=True)
        assert cli.main(["run", str(path)]) == 0
        first = snapshot(tmp_path / "runs")
        assert any(k.endswith(".bsq") for k in first)
        assert cli.main(["run", str(path)]) == 0
        assert snapshot(tmp_path / "runs") == first

    def test_p_gate(self, tmp_path, capsys):
        assert cli.main(["run", str(write(tmp_path, p=4))]) == 1
        assert "p > 5" in capsys.readouterr().err

    def test_threshold_gate(self, tmp_path, capsys):
        path = write(tmp_path, experiment="local_existence",
                     transport={"kind": "random", "dim_h": 4, "seed": 1, "nb0": 0.2})
        assert cli.main(["run", str(path)]) == 2
        assert f"{5 / 34:.6g}" in capsys.readouterr().err

    def test_path_failures_exit_3(self, tmp_path, monkeypatch):
        def broken(*a, **k):
            raise FloatingPointError("synthetic")

        monkeypatch.setattr(ens, "run_trajectory", broken)
        assert cli.main(["run", str(write(tmp_path))]) == 3

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "n_paths": 2,\n  "dt": ,\n}')
        assert cli.main(["run", str(path)]) == 1
        assert f"{path}:3:" in capsys.readouterr().err

    def test_unknown_and_bad_fields(self, tmp_path, capsys):
        assert cli.main(["run", str(write(tmp_path, colour="red"))]) == 1
        err = capsys.readouterr().err
        assert "unknown field 'colour'" in err
        assert cli.main(["run", str(write(tmp_path, dt=-1))]) == 1
        assert "dt: must be positive" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "nope.json")]) == 1


class TestValidate:
    def test_zero_noise(self, tmp_path, capsys):
        path = write(tmp_path, transport={"kind": "zero"}, sigma={"kind": "zero"})
        assert cli.main(["validate", str(path)]) == 0
        rep = json.loads((load_config(path).run_dir() / "assumption_report.json").read_text())
        assert rep["nu"] == 1.0 and rep["pass_local"] and rep["pass_global"]

    def test_non_solenoidal(self, tmp_path, capsys):
        modes = [[{"amp": [0.01, 0, 0], "k": [0, 1, 0]}], [{"amp": [0.01, 0, 0], "k": [1, 0, 0]}]]
        path = write(tmp_path, transport={"kind": "terms", "dim_h": 2, "modes": modes})
        assert cli.main(["validate", str(path)]) == 2
        assert "mode 1" in capsys.readouterr().err

    def test_eps0_large_fails_global(self, tmp_path, capsys):
        path = write(tmp_path, sigma={"kind": "diagonal-linear", "eps0": 0.5})
        assert cli.main(["validate", str(path)]) == 2
        rep = json.loads((load_config(path).run_dir() / "assumption_report.json").read_text())
        assert rep["pass_global"] is False and rep["pass_local"] is True

    def test_single_file(self, tmp_path):
        path = write(tmp_path)
        cli.main(["validate", str(path)])
        files = [p for p in (tmp_path / "runs").rglob("*") if p.is_file()]
        assert [p.name for p in files] == ["assumption_report.json"]


class TestSweep:
    def test_sweep_table(self, tmp_path):
        path = write(tmp_path)
        assert cli.main(["sweep", str(path), "--param", "sigma.eps0", "--values", "0.001,0.01"]) == 0
        table = (tmp_path / "runs" / "sweep_sigma_eps0.csv").read_text().splitlines()
        assert table[0].startswith("value,exit_code") and len(table) == 3

    def test_bad_param(self, tmp_path):
        assert cli.main(["sweep", str(write(tmp_path)), "--param", "sigma.zzz", "--values", "1"]) == 1


def test_parse_config_defaults():
    cfg = parse_config(json.dumps({"experiment": "maximality"}))
    assert cfg.levels == [0.05, 0.1, 0.2] and cfg.output_dir == "runs"
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")
