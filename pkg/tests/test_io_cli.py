import json
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwescape import io
from fwescape.cli import ConfigError, main, resolve_config, run_command


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def summary(out):
    return io.read_json(os.path.join(out, "summary.json"))


class TestIO:
    def test_csv_round_trip(self, tmp_path):
        p = tmp_path / "a.csv"
        io.write_csv(p, ["a", "b"], [[1, 0.1], [2, math.inf], [3, math.nan]])
        raw = p.read_bytes()
        assert raw.startswith(b"# format_version=1.0\n") and b"\r" not in raw
        h, d = io.read_csv(p)
        assert h == ["a", "b"]
        assert d[0, 1] == 0.1 and math.isinf(d[1, 1]) and math.isnan(d[2, 1])

    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
    def test_floats_exact(self, xs):
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            p = os.path.join(d, "x.csv")
            io.write_csv(p, ["x"], [[x] for x in xs])
            assert io.read_csv(p)[1][:, 0].tolist() == xs

    def test_version_rejected(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("# format_version=2.0\na\n1\n")
        with pytest.raises(io.FormatVersionError):
            io.read_csv(p)
        q = tmp_path / "c.json"
        q.write_text(json.dumps({"format_version": "0.9"}))
        with pytest.raises(io.FormatVersionError):
            io.read_json(q)

    def test_minor_version_accepted(self, tmp_path):
        q = tmp_path / "c.json"
        q.write_text(json.dumps({"format_version": "1.7", "x": 1}))
        assert io.read_json(q)["x"] == 1

    def test_json_types(self, tmp_path):
        p = tmp_path / "d.json"
        io.write_json(p, {"a": np.arange(3), "b": np.float64(0.5), "c": np.bool_(True), "d": math.inf})
        doc = io.read_json(p)
        assert doc == {"format_version": "1.0", "a": [0, 1, 2], "b": 0.5, "c": True, "d": "inf"}


class TestConfig:
    def test_defaults(self):
        cfg = resolve_config({}, "instanton")
        assert cfg["model"] == {"model": "maier_stein", "alpha": 3.0}
        assert cfg["solver"]["fan_size"] == 16

    @pytest.mark.parametrize("raw", [
        {"bogus": 1},
        {"model": {"model": "maier_stein", "D": 2.0}},
        {"model": {"model": "nope"}},
        {"solver": {"rtol": 1.0}},
        {"report": {"tolerances": {"c99.x": 1}}},
        {"command": "langevin"},
    ])
    def test_invalid(self, raw):
        with pytest.raises((ConfigError, ValueError)):
            resolve_config(raw, "instanton")

    def test_langevin_needs_noise(self):
        with pytest.raises(ConfigError):
            resolve_config({}, "langevin")

    def test_flags_override(self):
        cfg = resolve_config({"langevin": {"eps_noise": 0.1, "seed": 1}}, "langevin", seed=9, threads=2, out="x")
        assert cfg["langevin"]["seed"] == 9 and cfg["langevin"]["threads"] == 2
        assert cfg["solver"]["threads"] == 2 and cfg["output"] == "x"


class TestCommands:
    def test_instanton_macrospin_and_replay(self, tmp_path):
        out = str(tmp_path / "run")
        doc = {"model": {"model": "macrospin", "alpha": 0.01, "D": 0.0, "current_ratio": 0.3},
               "solver": {"fan_size": 4}}
        assert run_command("instanton", write(tmp_path, doc), out) == 0
        s = summary(out)
        assert s["results"]["n_trajectories"] == 4
        assert s["results"]["crossings"] == 0
        assert s["results"]["optimal_action"] == pytest.approx(0.0049, rel=1e-5)
        h, d = io.read_csv(os.path.join(out, "trajectory_000.csv"))
        assert h[:7] == ["t", "s", "theta", "phi", "mx", "my", "mz"]
        assert np.allclose(np.linalg.norm(d[:, 4:7], axis=1), 1)
        # a summary replays to the same config
        out2 = str(tmp_path / "run2")
        assert run_command("instanton", os.path.join(out, "summary.json"), out2) == 0
        s2 = summary(out2)
        s["config"].pop("output"), s2["config"].pop("output")
        assert s["config"] == s2["config"]
        assert s["results"]["trajectories"] == s2["results"]["trajectories"]

    def test_norm_map(self, tmp_path):
        out = str(tmp_path / "nm")
        doc = {"model": {"model": "maier_stein", "alpha": 5.0},
               "grid": {"bounds": [[-0.25, 1.25], [-0.75, 0.75]], "resolution": [96, 96]}}
        assert run_command("norm-map", write(tmp_path, doc), out) == 0
        kinds = sorted(e["kind"] for e in summary(out)["results"]["extrema"])
        assert kinds == ["max", "min", "min", "saddle", "saddle"]
        h, d = io.read_csv(os.path.join(out, "landscape.csv"))
        assert h[:3] == ["x1", "x2", "norm2"] and len(d) == 96 * 96

    def test_bifurcation(self, tmp_path):
        out = str(tmp_path / "bf")
        doc = {"grid": {"param_range": [3.0, 5.0], "steps": 5, "resolution": [48, 48]}}
        assert run_command("bifurcation", write(tmp_path, doc), out) == 0
        assert summary(out)["results"]["threshold"] == pytest.approx(4.0, abs=0.05)

    def test_langevin(self, tmp_path):
        out = str(tmp_path / "lg")
        doc = {"model": {"model": "double_well"},
               "langevin": {"eps_noise": 0.2, "n_realizations": 6, "t_max": 1e4, "write_paths": True}}
        assert main(["langevin", "--config", write(tmp_path, doc), "--out", out, "--seed", "4"]) == 0
        s = summary(out)
        assert s["results"]["censoring"]["escaped"] == 6
        h, d = io.read_csv(os.path.join(out, "events.csv"))
        assert h[0] == "realization" and len(d) == 6
        assert len(os.listdir(os.path.join(out, "paths"))) == 6

    def test_oracle_check(self, tmp_path):
        out = str(tmp_path / "oc")
        doc = {"model": {"model": "macrospin", "alpha": 0.01, "D": 0.0, "current_ratio": 0.3},
               "solver": {"fan_size": 2}}
        assert run_command("oracle-check", write(tmp_path, doc), out) == 0
        assert summary(out)["results"]["oracle_rms"] <= 1e-2

    def test_validation_exit(self, tmp_path, capsys):
        out = str(tmp_path / "bad")
        code = run_command("langevin", write(tmp_path, {"langevin": {"eps_noise": 0.1, "n_realizations": 0}}), out)
        assert code == 1
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert rec["error"] == "validation" and rec["exit_code"] == 1

    def test_numerical_exit(self, tmp_path, capsys):
        out = str(tmp_path / "num")
        doc = {"model": {"model": "maier_stein", "alpha": 3.0}, "solver": {"fan_size": 2, "energy_tol": 1e-13, "rtol": 5e-3, "atol": 1e-3}}
        assert run_command("instanton", write(tmp_path, doc), out) == 2
        rec = io.read_json(os.path.join(out, "error.json"))
        assert rec["error"] == "numerical" and rec["diagnostics"]

    def test_report_failing_tolerance(self, tmp_path, capsys):
        out = str(tmp_path / "rep")
        doc = {"report": {"criteria": [3], "tolerances": {"c3.threshold": 1e-30}}}
        assert run_command("report", write(tmp_path, doc), out) == 1
        assert "FAIL" in capsys.readouterr().out
        assert summary(out)["results"]["failed"] == [3]
