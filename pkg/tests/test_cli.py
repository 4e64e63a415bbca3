import json

import numpy as np
import pytest

from rsbeam.cli import (
    CSV_COLUMNS,
    load_config,
    main,
    run_experiment,
    worker_count,
)
from rsbeam.core import ConfigError, SystemConfig
from rsbeam.channels import sample_rayleigh
from rsbeam.schemes import certified_min_rate, scheme_penalties, SchemeId
from rsbeam.core import BeamformerSet


def tiny_doc(**overrides):
    doc = {
        "experiment": "single-solve",
        "system": {"M": 3, "K": 2, "L": 1000, "epsilon": 1e-5,
                   "P_max": 50.0, "sigma2": 0.05, "delta": 0.01},
        "grid": [0.0],
        "n_realizations": 1,
        "seed": 11,
    }
    doc.update(overrides)
    return doc


class TestLoadConfig:
    def test_valid(self):
        config = load_config(tiny_doc())
        assert config.experiment == "single-solve"
        assert config.system.M == 3

    def test_sigma2_dbm_converted_once(self):
        doc = tiny_doc()
        doc["system"] = dict(doc["system"])
        del doc["system"]["sigma2"]
        doc["system"]["sigma2_dbm"] = -20.0
        config = load_config(doc)
        assert config.system.sigma2[0] == pytest.approx(0.01, rel=1e-12)

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            load_config(tiny_doc(experiment="sweep-everything"))

    def test_missing_system(self):
        doc = tiny_doc()
        del doc["system"]
        with pytest.raises(ConfigError, match="system"):
            load_config(doc)

    def test_missing_system_field(self):
        doc = tiny_doc()
        doc["system"] = {"M": 4}
        with pytest.raises(ConfigError, match="missing system fields"):
            load_config(doc)

    def test_invalid_epsilon_diagnosed(self):
        doc = tiny_doc()
        doc["system"] = dict(doc["system"], epsilon=0.7)
        with pytest.raises(ConfigError, match="epsilon"):
            load_config(doc)

    def test_empty_grid_rejected_for_sweeps(self):
        doc = tiny_doc(experiment="sweep-bler", grid=[])
        with pytest.raises(ConfigError, match="grid"):
            load_config(doc)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError):
            load_config(tiny_doc(schemes=["RB-YY-FBL"]))

    def test_subcommand_overrides_experiment(self):
        config = load_config(tiny_doc(), experiment="convergence")
        assert config.experiment == "convergence"


class TestMainExitCodes:
    def test_config_parse_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["single-solve", "--config", str(bad)])
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_config_field_error(self, tmp_path, capsys):
        doc = tiny_doc()
        doc["system"]["epsilon"] = 0.9
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        code = main(["single-solve", "--config", str(path)])
        assert code == 1
        assert "epsilon" in capsys.readouterr().err

    def test_successful_run(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny_doc()))
        out = tmp_path / "out"
        code = main(["single-solve", "--config", str(path), "--out", str(out)])
        assert code == 0
        assert (out / "single-solve.csv").exists()
        assert (out / "single-solve_summary.json").exists()


class TestOutputs:
    def run_tiny(self, tmp_path, name="run", **overrides):
        config = load_config(tiny_doc(**overrides))
        out = tmp_path / name
        code = run_experiment(config, str(out))
        return code, out

    def test_csv_column_order(self, tmp_path):
        _, out = self.run_tiny(tmp_path)
        header = (out / "single-solve.csv").read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)

    @staticmethod
    def mask_timing(csv_text: str) -> str:
        # the solve_ms column records wall-clock time, the only
        # nondeterministic field; every other byte must be reproducible
        lines = csv_text.splitlines()
        keep = [line.rsplit(",", 1)[0] for line in lines]
        return "\n".join(keep)

    def test_deterministic_output(self, tmp_path):
        _, out1 = self.run_tiny(tmp_path, "a")
        _, out2 = self.run_tiny(tmp_path, "b")
        assert self.mask_timing((out1 / "single-solve.csv").read_text()) == self.mask_timing(
            (out2 / "single-solve.csv").read_text()
        )
        s1 = json.loads((out1 / "single-solve_summary.json").read_text())
        s2 = json.loads((out2 / "single-solve_summary.json").read_text())
        assert s1["beamformers"] == s2["beamformers"]
        assert s1["means"] == s2["means"]

    def test_worker_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        _, out1 = self.run_tiny(tmp_path, "serial", n_realizations=2)
        monkeypatch.setenv("RSBEAM_WORKERS", "2")
        assert worker_count() == 2
        _, out2 = self.run_tiny(tmp_path, "parallel", n_realizations=2)
        assert self.mask_timing((out1 / "single-solve.csv").read_text()) == self.mask_timing(
            (out2 / "single-solve.csv").read_text()
        )

    def test_min_rate_rederivable_from_serialized_beamformers(self, tmp_path):
        _, out = self.run_tiny(tmp_path)
        summary = json.loads((out / "single-solve_summary.json").read_text())
        lines = (out / "single-solve.csv").read_text().splitlines()
        row = dict(zip(CSV_COLUMNS, lines[1].split(",")))
        key = f"0/{row['realization']}/{row['scheme']}"
        doc = summary["beamformers"][key]
        w_c = np.array([complex(re, im) for re, im in doc["w_c"]])
        w_k = np.array([[complex(re, im) for re, im in user] for user in doc["w_k"]])
        bset = BeamformerSet(w_c, w_k, np.array(doc["c"]))

        cfg = SystemConfig(M=3, K=2, L=1000, epsilon=1e-5, P_max=50.0,
                           sigma2=0.05, delta=0.01)
        from rsbeam.channels import derived_seed

        channel_seed = derived_seed(11, 0, 0xC4A).generate_state(1)[0]
        channels = sample_rayleigh(3, 2, channel_seed, delta=cfg.delta)
        d_c, d_p = scheme_penalties(cfg, SchemeId(row["scheme"]))
        recomputed = certified_min_rate(bset, channels, cfg, d_c, d_p)
        assert recomputed == pytest.approx(float(row["min_rate"]), abs=1e-6)

    def test_convergence_traces_in_summary(self, tmp_path):
        doc = tiny_doc(experiment="convergence", grid=[0.005, 0.01], n_realizations=1)
        config = load_config(doc)
        out = tmp_path / "conv"
        assert run_experiment(config, str(out)) == 0
        summary = json.loads((out / "convergence_summary.json").read_text())
        assert summary["objective_traces"]
        for trace in summary["objective_traces"].values():
            diffs = np.diff(trace)
            assert np.all(diffs >= -1e-8)

    def test_summary_means_per_grid_point(self, tmp_path):
        doc = tiny_doc(experiment="robustness", grid=[0.0, 1e-8], n_realizations=2,
                       schemes=["RB-RS-FBL"])
        config = load_config(doc)
        out = tmp_path / "rob"
        assert run_experiment(config, str(out)) == 0
        summary = json.loads((out / "robustness_summary.json").read_text())
        per_grid = summary["means"]["RB-RS-FBL"]
        assert len(per_grid) == 2
        assert per_grid[0]["total"] == 2
        assert per_grid[0]["feasible_count"] == 2
