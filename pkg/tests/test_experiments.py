import json
import textwrap

import jsonschema
import numpy as np
import pytest

import ionccd.config as config_mod
import ionccd.experiments as ex
from ionccd.cli import main
from ionccd.config import (
    DDConfig,
    ExperimentConfig,
    ServoConfig,
    dumps_config,
    loads_config,
    save_config,
)
from ionccd.gates import ghz_target
from ionccd.noise import NoiseParams
from ionccd.tomography import dumps_dataset, simulate_dataset, write_dataset
from ionccd.trap import ValidationReport, Violation


def fid(report, label):
    return next(f for f in report.fidelities if f["label"] == label)


def without_clock(report):
    doc = json.loads(ex.report_json(report))
    doc.pop("wall_clock_s")
    return doc


@pytest.fixture(scope="module")
def small_ghz():
    cfg = ExperimentConfig(shots_per_setting=200, bootstrap_resamples=100, root_seed=5)
    return cfg, ex.run_ghz_tomography(cfg)


@pytest.fixture(scope="module")
def small_dd():
    dd = DDConfig(storage_times=[0.0, 0.02, 0.5], n_pi_list=[0, 15], mc_shots=800)
    cfg = ExperimentConfig(experiment="dd_sweep", dd=dd, root_seed=3)
    return cfg, ex.run_dd_sweep(cfg)


class TestGHZRun:
    def test_zero_noise_exact(self):
        cfg = ExperimentConfig(noise=NoiseParams.ideal(), spam=False, exact_data=True, bootstrap_resamples=100)
        r = ex.run_ghz_tomography(cfg)
        assert fid(r, "generative")["fidelity"] == pytest.approx(1.0, abs=1e-12)
        assert fid(r, "linear")["fidelity"] == pytest.approx(1.0, abs=1e-6)
        assert fid(r, "ml")["fidelity"] == pytest.approx(1.0, abs=1e-6)
        assert fid(r, "ml")["bootstrap"]["std"] < 1e-6

    def test_default_generative_fidelity(self, small_ghz):
        _, r = small_ghz
        assert fid(r, "generative")["fidelity"] == pytest.approx(0.97, abs=0.01)
        assert r.validation["passed"]

    def test_labels_and_seeds(self, small_ghz):
        cfg, r = small_ghz
        labels = [f["label"] for f in r.fidelities]
        assert labels == ["generative", "linear_raw", "ml_raw", "linear_spam_corrected", "ml_spam_corrected"]
        assert all(f["seed"] == cfg.root_seed and f["method"] for f in r.fidelities)

    def test_report_has_timing_and_diagnostics(self, small_ghz):
        _, r = small_ghz
        assert 2.5e-3 <= r.timing["logic_s"] <= 3.7e-3
        assert r.diagnostics["total_measurements"] == 200 * 81
        assert isinstance(r.diagnostics["hoeffding_passed"], bool)

    def test_spam_gain_op_example(self):
        # with corruption on, the corrected linear fidelity should exceed the
        # uncorrected one by roughly 1.5 to 2 percent
        cfg = ExperimentConfig(exact_data=True, bootstrap_resamples=100)
        r = ex.run_ghz_tomography(cfg)
        gain = fid(r, "linear_spam_corrected")["fidelity"] - fid(r, "linear_raw")["fidelity"]
        assert 0.015 <= gain <= 0.02

    def test_deterministic(self, small_ghz):
        cfg, r = small_ghz
        again = ex.run_ghz_tomography(cfg)
        assert without_clock(again) == without_clock(r)
        for k, m in r.density_matrices.items():
            assert np.array_equal(m, again.density_matrices[k])

    def test_validation_failure_aborts(self, monkeypatch):
        bad = ValidationReport(False, Violation(3, "a", "Gate2 actors outside LIZ"), {})
        monkeypatch.setattr(ex, "validate_schedule", lambda s, i: bad)
        with pytest.raises(ex.ScheduleValidationError) as err:
            ex.run_ghz_tomography(ExperimentConfig(bootstrap_resamples=100))
        assert err.value.report.violation.rule == "a"


class TestOutputs:
    def test_emit(self, small_ghz, tmp_path):
        _, r = small_ghz
        paths = ex.emit_outputs(r, tmp_path / "out")
        names = {p.name for p in paths}
        assert {"report.json", "fidelity.csv", "rho_ml_re.csv", "rho_ml_im.csv"} <= names
        doc = json.loads((tmp_path / "out" / "report.json").read_text())
        jsonschema.validate(doc, ex.report_schema())
        for name, m in r.density_matrices.items():
            back = ex.read_matrix(tmp_path / "out" / f"rho_{name}")
            assert back.shape == (16, 16)
            assert np.array_equal(back, m)
        rows = (tmp_path / "out" / "fidelity.csv").read_text().splitlines()
        assert len(rows) == 1 + len(r.fidelities)

    def test_schema_rejects_junk(self, small_ghz):
        _, r = small_ghz
        doc = r.to_json_dict()
        doc["extra"] = 1
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(doc, ex.report_schema())

    def test_unwritable(self, small_ghz, tmp_path):
        _, r = small_ghz
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            ex.emit_outputs(r, blocker / "sub")


class TestDDSweep:
    def test_one_row_per_pair(self, small_dd, tmp_path):
        _, r = small_dd
        assert [(row["storage_time"], row["n_pi"]) for row in r.dd_series] == [
            (0.0, 0), (0.02, 0), (0.5, 0), (0.0, 15), (0.02, 15), (0.5, 15)
        ]
        ex.emit_outputs(r, tmp_path)
        lines = (tmp_path / "contrast.csv").read_text().splitlines()
        assert len(lines) == 7 and lines[0].startswith("storage_time,n_pi")

    def test_zero_time_keeps_coherence(self, small_dd):
        cfg, r = small_dd
        rho, *_ = ex.prepare_ghz(cfg)
        c0 = 2 * abs(rho.elements[0, -1])
        for row in r.dd_series:
            if row["storage_time"] == 0.0:
                assert row["contrast_exact"] == pytest.approx(c0, rel=1e-9)

    def test_free_decay_near_20ms(self, small_dd):
        _, r = small_dd
        row = next(x for x in r.dd_series if x["storage_time"] == 0.02 and x["n_pi"] == 0)
        c0 = next(x for x in r.dd_series if x["storage_time"] == 0.0)["contrast_exact"]
        assert row["contrast_exact"] / c0 == pytest.approx(np.exp(-1), rel=0.15)

    def test_white_default_one_over_e(self):
        dd = DDConfig(storage_times=[0.0, 0.02], n_pi_list=[0], mc_shots=2000,
                      dephasing=NoiseParams().dephasing)
        r = ex.run_dd_sweep(ExperimentConfig(experiment="dd_sweep", dd=dd))
        c = [row["contrast_exact"] for row in r.dd_series]
        # white noise: contrast exp(-t/18.75 ms) relative to the start
        assert c[1] / c[0] == pytest.approx(np.exp(-20 / 18.75), rel=0.05)

    def test_decoupling_ratio(self, small_dd):
        _, r = small_dd
        at = {(x["storage_time"], x["n_pi"]): x for x in r.dd_series}
        assert at[(0.5, 15)]["contrast_exact"] > 5 * at[(0.5, 0)]["contrast_exact"]
        assert at[(0.5, 15)]["shots"] >= 200

    def test_bad_n_pi(self):
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="dd_sweep", dd=DDConfig(n_pi_list=[2]))
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="dd_sweep", dd=DDConfig(storage_times=[]))

    def test_infeasible_timing(self):
        dd = DDConfig(storage_times=[1e-3], n_pi_list=[15], mc_shots=10)
        with pytest.raises(ValueError):
            ex.run_dd_sweep(ExperimentConfig(experiment="dd_sweep", dd=dd))


class TestAnalyze:
    def test_round_trip(self, tmp_path):
        ds = simulate_dataset(ghz_target(3, 0.5), 300, rng_seed=2)
        path = tmp_path / "d.csv"
        write_dataset(ds, path)
        cfg = ExperimentConfig(experiment="analyze_dataset", bootstrap_resamples=100)
        a = ex.analyze_dataset(path, cfg)
        b = ex.analyze_dataset(path, cfg)
        assert without_clock(a) == without_clock(b)
        assert fid(a, "ml")["fidelity"] > 0.95

    def test_mixed_dataset(self, tmp_path):
        ds = simulate_dataset(np.eye(16) / 16, 629, rng_seed=4)
        write_dataset(ds, tmp_path / "mixed.csv")
        r = ex.analyze_dataset(tmp_path / "mixed.csv", ExperimentConfig(bootstrap_resamples=100))
        assert fid(r, "linear")["fidelity"] == pytest.approx(0.0625, abs=0.03)
        assert fid(r, "ml")["fidelity"] == pytest.approx(0.0625, abs=0.03)
        assert not r.diagnostics["genuine_multipartite_entanglement"]


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig(
            experiment="dd_sweep",
            root_seed=9,
            noise=NoiseParams.ideal(),
            dd=DDConfig(storage_times=[0.0, 0.1], n_pi_list=[1, 3]),
            servo=ServoConfig(cycles=10),
        )
        assert loads_config(dumps_config(cfg)) == cfg

    def test_documented_grammar_parses(self):
        doc = config_mod.__doc__.split("::", 1)[1]
        cfg = loads_config(textwrap.dedent(doc))
        assert cfg.dd.n_pi_list == [0, 15] and cfg.noise.b_drift.walk_hz == 0.5

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            loads_config("bogus = 1\n")
        with pytest.raises(ValueError):
            loads_config("[noise]\nbogus = 1\n")

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.shots_per_setting == 629 and cfg.bootstrap_resamples == 250
        assert cfg.noise.gate2_error == 0.01


class TestCLI:
    def _servo_cfg(self, tmp_path):
        path = tmp_path / "c.toml"
        save_config(ExperimentConfig(servo=ServoConfig(cycles=20)), path)
        return path

    def test_servo(self, tmp_path, capsys):
        cfg = self._servo_cfg(tmp_path)
        rc = main(["servo", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4"])
        assert rc == 0
        doc = json.loads((tmp_path / "o" / "report.json").read_text())
        assert doc["seed"] == 4 and doc["experiment"] == "servo_demo"
        assert len((tmp_path / "o" / "servo.csv").read_text().splitlines()) == 21
        assert "rms residual" in capsys.readouterr().out

    def test_env_seed(self, tmp_path, monkeypatch):
        cfg = self._servo_cfg(tmp_path)
        monkeypatch.setenv("IONCCD_SEED", "77")
        assert main(["servo", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert json.loads((tmp_path / "a" / "report.json").read_text())["seed"] == 77
        assert main(["servo", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "1"]) == 0
        assert json.loads((tmp_path / "b" / "report.json").read_text())["seed"] == 1

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = self._servo_cfg(tmp_path)
        for d in ("x", "y"):
            assert main(["servo", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        a = json.loads((tmp_path / "x" / "report.json").read_text())
        b = json.loads((tmp_path / "y" / "report.json").read_text())
        for doc in (a, b):
            doc.pop("wall_clock_s"), doc["config"].pop("output")
        assert a == b
        assert (tmp_path / "x" / "servo.csv").read_bytes() == (tmp_path / "y" / "servo.csv").read_bytes()

    def test_malformed_dataset(self, tmp_path, capsys):
        text = dumps_dataset(simulate_dataset(ghz_target(2, 0.0), 10, rng_seed=1)).splitlines()
        text[2] = text[2] + ",oops"
        (tmp_path / "bad.csv").write_text("\n".join(text))
        rc = main(["analyze", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "line 3" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_missing_config(self, tmp_path):
        assert main(["ghz", "--config", str(tmp_path / "nope.toml")]) == 1

    def test_validation_exit_code(self, tmp_path, monkeypatch, capsys):
        bad = ValidationReport(False, Violation(0, "a", "Gate2 actors outside LIZ"), {})
        monkeypatch.setattr(ex, "validate_schedule", lambda s, i: bad)
        rc = main(["servo", "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "rule (a)" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_analyze_command(self, tmp_path):
        write_dataset(simulate_dataset(ghz_target(3, 0.0), 100, rng_seed=3), tmp_path / "d.csv")
        path = tmp_path / "c.toml"
        save_config(ExperimentConfig(bootstrap_resamples=100), path)
        rc = main(["analyze", str(tmp_path / "d.csv"), "--config", str(path), "--out", str(tmp_path / "o")])
        assert rc == 0
        m = ex.read_matrix(tmp_path / "o" / "rho_ml")
        assert m.shape == (8, 8)
