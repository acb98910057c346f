import json

import pytest

from forestrisk.cli import ConfigError, ScenarioConfig, build_rows, load_config, main

from conftest import CAL_C1, CAL_S0


def small_config(**changes):
    raw = {
        "label": "test",
        "n0": 650.0,
        "delta": 0.0034,
        "intensity": 0.0075,
        "c1": CAL_C1,
        "alpha": 0.6,
        "alpha_p": 0.4,
        "s0": CAL_S0,
        "T_min": 55.0,
        "T_max": 60.0,
        "mc_samples": 2000,
    }
    raw.update(changes)
    return raw


def write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


class TestConfig:
    def test_presets_load(self):
        for name in ("table1", "table2_650", "table2_1650", "table3"):
            cfg = load_config(name)
            assert cfg.delta == 0.0034 and cfg.intensity == 0.0075
        assert load_config("table3").fixed_T == 84.0
        assert load_config("table2_1650").n0 == 1650.0

    def test_integer_fields_are_coerced(self):
        cfg = ScenarioConfig.from_dict(small_config(n0=650, T_min=55))
        assert isinstance(cfg.n0, float) and cfg.T_min == 55.0

    @pytest.mark.parametrize(
        "raw",
        [
            small_config(colour="green"),
            {k: v for k, v in small_config().items() if k != "delta"},
            small_config(delta=-0.01),
            small_config(alpha=0.2, alpha_p=0.4),
            small_config(T_min=70.0),
            small_config(control_family="smooth"),
            small_config(T_step=0.33),
            small_config(n0="many"),
        ],
    )
    def test_invalid_configs_exit_2(self, tmp_path, raw, capsys):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, raw))
        assert main(["run", "--config", write(tmp_path, raw), "--out", str(tmp_path / "out")]) == 2
        assert "configuration error" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_unknown_preset(self, tmp_path):
        assert main(["run", "--config", "table9", "--out", str(tmp_path)]) == 2

    def test_bad_fixed_rotation(self, tmp_path):
        path = write(tmp_path, small_config())
        assert main(["run", "--config", path, "--fixed-T", "-3", "--out", str(tmp_path / "o")]) == 2


class TestRun:
    def test_artifacts(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", write(tmp_path, small_config()), "--out", str(out)]) == 0
        for name in ("table.txt", "curve.csv", "trajectory.csv", "adjoint.csv", "result.json"):
            assert (out / name).is_file()
        record = json.loads((out / "result.json").read_text())
        assert [r["scenario"] for r in record["rows"]] == [
            "max over h(.), T",
            "risk-free schedule",
            "max over T, no thinning",
            "max over h(.), T",
        ]
        assert record["optimum"]["land_value"] == record["rows"][-1]["land_value"]
        assert record["monte_carlo"]["samples"] == 2000
        table = (out / "table.txt").read_text()
        assert f"{record['rows'][-1]['land_value']:.1f}" in table

    def test_result_round_trip(self, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", write(tmp_path, small_config()), "--out", str(out)])
        record = json.loads((out / "result.json").read_text())
        cfg = ScenarioConfig.from_dict(record["config"])
        rows, best, _ = build_rows(cfg)
        assert [r.W0 for r in rows] == [r["land_value"] for r in record["rows"]]
        assert best.T_opt == record["optimum"]["T"]

    def test_fixed_rotation(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", write(tmp_path, small_config()), "--fixed-T", "60", "--out", str(out)]) == 0
        record = json.loads((out / "result.json").read_text())
        assert len(record["rows"]) == 3
        assert all(r["T"] == 60.0 for r in record["rows"])
        assert record["config"]["fixed_T"] == 60.0

    def test_no_risk_rows_collapse(self, tmp_path):
        cfg = ScenarioConfig.from_dict(small_config(intensity=0.0))
        rows, _, _ = build_rows(cfg)
        assert rows[0].W0 == rows[1].W0 == rows[3].W0
        assert rows[2].W0 <= rows[3].W0
        out = tmp_path / "out"
        assert main(["run", "--config", write(tmp_path, small_config(intensity=0.0)), "--out", str(out)]) == 0
        assert json.loads((out / "result.json").read_text())["monte_carlo"] is None

    def test_deterministic_output(self, tmp_path):
        path = write(tmp_path, small_config())
        main(["run", "--config", path, "--out", str(tmp_path / "a")])
        main(["run", "--config", path, "--out", str(tmp_path / "b")])
        for name in ("table.txt", "curve.csv", "trajectory.csv", "adjoint.csv", "result.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_strict_diagnostics(self, tmp_path):
        raw = small_config(strict_diagnostics=True)
        status = main(["run", "--config", write(tmp_path, raw), "--out", str(tmp_path / "o")])
        record = json.loads((tmp_path / "o" / "result.json").read_text())
        expected = 0 if record["optimum"]["adjoint_check"]["violations"] == 0 else 3
        assert status == expected
