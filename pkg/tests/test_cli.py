import json
import subprocess
import sys

import numpy as np
import pytest

from diffgap import ExperimentConfig, FeatureSet, run, save_features, validate
from diffgap.cli import main

SMALL_DATASET = {"n_per_split": 6, "radius": 12.0, "mode": "symmetric", "seed": 0}
SMALL_SCHEDULE = {"sigma_min": 0.01, "sigma_max": 28.0, "rho": 7.0, "n_steps": 8}


def small_config(**overrides):
    doc = {"experiment": "gap-curve", "seed": 0, "dataset": dict(SMALL_DATASET),
           "schedule": dict(SMALL_SCHEDULE),
           "predictor": {"kind": "error_prone", "delta": 1.2}, "n_noise_draws": 16}
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def data_hashes(manifest):
    return {o["path"]: o["sha256"] for o in manifest["outputs"]}


class TestValidate:
    def test_clean_config_no_violations(self):
        config = ExperimentConfig.from_dict(small_config())
        assert validate(config) == []

    def test_degenerate_partition_reported(self):
        config = ExperimentConfig.from_dict(small_config(
            experiment="granularity-sweep", k_values=[12]))
        assert any("degenerate-partition" in v for v in validate(config))

    def test_schedule_violation_reported(self):
        config = ExperimentConfig.from_dict(small_config(
            schedule={"sigma_min": 30.0, "sigma_max": 28.0}))
        assert any("schedule violation" in v for v in validate(config))

    def test_unknown_experiment_reported(self):
        config = ExperimentConfig.from_dict(small_config(experiment="teleport"))
        assert any("unknown experiment" in v for v in validate(config))

    def test_empty_sweep_reported(self):
        config = ExperimentConfig.from_dict(small_config(
            experiment="delta-sweep", deltas=[]))
        assert any("deltas" in v for v in validate(config))


class TestRunApi:
    def test_outputs_listed_and_hashed(self, tmp_path):
        config = ExperimentConfig.from_dict(small_config())
        manifest = run(config, out_dir=tmp_path / "out")
        assert set(data_hashes(manifest)) == {"gap_curve.csv", "gap_curve.json"}
        assert (tmp_path / "out" / "manifest.json").exists()
        for entry in manifest["outputs"]:
            assert len(entry["sha256"]) == 64
            assert entry["bytes"] > 0

    def test_rerun_is_byte_identical(self, tmp_path):
        config = ExperimentConfig.from_dict(small_config(experiment="delta-sweep",
                                                         deltas=[1.2, 2.0]))
        first = run(config, out_dir=tmp_path / "a")
        echoed = ExperimentConfig.from_dict(first["config"])
        second = run(echoed, out_dir=tmp_path / "b")
        assert data_hashes(first) == data_hashes(second)

    def test_guidance_weight_zero_matches_unguided_run(self, tmp_path):
        guided = ExperimentConfig.from_dict(small_config(
            experiment="guidance-sweep", weights=[0.0],
            predictor={"kind": "guided", "delta": 0.8, "weight": 0.0,
                       "auxiliary": {"kind": "error_prone", "delta": 2.0}}))
        plain = ExperimentConfig.from_dict(small_config(
            predictor={"kind": "error_prone", "delta": 0.8}))
        run(guided, out_dir=tmp_path / "w0")
        run(plain, out_dir=tmp_path / "plain")
        w0 = (tmp_path / "w0" / "gap_curve_w_0.0.csv").read_bytes()
        unguided = (tmp_path / "plain" / "gap_curve.csv").read_bytes()
        assert w0 == unguided

    def test_csv_dataset_source(self, tmp_path):
        from diffgap import make_circle_dataset, save_csv
        ds = make_circle_dataset(6, 9.0, "random", seed=4)
        save_csv(ds, tmp_path / "cloud.csv")
        config = ExperimentConfig.from_dict(small_config(
            dataset={"csv": str(tmp_path / "cloud.csv")}))
        manifest = run(config, out_dir=tmp_path / "out")
        assert "gap_curve.csv" in data_hashes(manifest)

    def test_ladder_with_random_linear_feature(self, tmp_path):
        config = ExperimentConfig.from_dict(small_config(
            experiment="ladder", sigma=1.1, n_samples=16,
            feature={"kind": "random-linear", "out_dim": 3, "seed": 1}))
        run(config, out_dir=tmp_path / "out")
        table = json.loads((tmp_path / "out" / "ladder.json").read_text())
        assert set(table["metrics"]) == {"rL2_pix", "rL2_feat", "rFD", "tFD"}
        assert table["metrics"]["rL2_pix"] != table["metrics"]["rL2_feat"]

    def test_fd_protocol_experiment(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], 200)
        save_features(FeatureSet(rng.normal(size=(400, 4)), labels),
                      tmp_path / "train.fgl")
        save_features(FeatureSet(rng.normal(size=(400, 4)), labels),
                      tmp_path / "val.fgl")
        save_features(FeatureSet(rng.normal(size=(300, 4))), tmp_path / "gen.fgl")
        config = ExperimentConfig.from_dict({
            "experiment": "fd-protocol", "seed": 0,
            "fd": {"generated": str(tmp_path / "gen.fgl"),
                   "train_pool": str(tmp_path / "train.fgl"),
                   "val": str(tmp_path / "val.fgl"),
                   "n_subsets": 5, "subset_size": 200}})
        run(config, out_dir=tmp_path / "fd")
        report = json.loads((tmp_path / "fd" / "fd_report.json").read_text())
        assert report["plan"]["n_subsets"] == 5
        assert len(report["train"]["per_reference"]) == 5
        assert report["train"]["mean_fd"] == pytest.approx(
            np.mean(report["train"]["per_reference"]))
        assert "baseline" in report
        assert set(report["pool_hashes"]) == {"generated", "train_pool", "val"}


class TestCliProcess:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "diffgap.cli", *args],
                              capture_output=True, text=True)

    def test_run_exit_zero_and_manifest(self, tmp_path):
        path = write_config(tmp_path, small_config())
        result = self.run_cli("run", str(path), "--out", str(tmp_path / "out"))
        assert result.returncode == 0
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_validate_prints_violations(self, tmp_path):
        path = write_config(tmp_path, small_config(
            schedule={"sigma_min": 30.0, "sigma_max": 28.0}))
        result = self.run_cli("validate", str(path))
        assert result.returncode == 0
        assert "schedule violation" in result.stdout

    def test_bad_json_exits_one(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        result = self.run_cli("run", str(path))
        assert result.returncode == 1
        assert "config error" in result.stderr

    def test_unknown_field_exits_one(self, tmp_path):
        path = write_config(tmp_path, small_config(banana=1))
        result = self.run_cli("run", str(path), "--out", str(tmp_path / "out"))
        assert result.returncode == 1

    def test_invalid_experiment_exits_one(self, tmp_path):
        path = write_config(tmp_path, small_config(experiment="teleport"))
        result = self.run_cli("run", str(path), "--out", str(tmp_path / "out"))
        assert result.returncode == 1
        assert "unknown experiment" in result.stderr

    def test_numeric_divergence_exits_two(self, tmp_path):
        doc = small_config(
            experiment="truncation-compare", stop_sigmas=[1.0], n_samples=4,
            predictor={"kind": "guided", "delta": 0.1, "weight": 1e308,
                       "auxiliary": {"kind": "error_prone", "delta": 2.0}})
        path = write_config(tmp_path, doc)
        result = self.run_cli("run", str(path), "--out", str(tmp_path / "out"))
        assert result.returncode == 2
        assert "numeric error" in result.stderr

    def test_seed_override_changes_data(self, tmp_path):
        path = write_config(tmp_path, small_config())
        self.run_cli("run", str(path), "--out", str(tmp_path / "a"))
        self.run_cli("run", str(path), "--out", str(tmp_path / "b"), "--seed", "5")
        a = (tmp_path / "a" / "gap_curve.csv").read_bytes()
        b = (tmp_path / "b" / "gap_curve.csv").read_bytes()
        assert a != b
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5

    def test_env_var_output_root(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, small_config())
        result = subprocess.run(
            [sys.executable, "-m", "diffgap.cli", "run", str(path)],
            capture_output=True, text=True, cwd=tmp_path,
            env={"DIFFGAP_OUT": str(tmp_path / "root"), "PATH": "/usr/bin:/bin",
                 "PYTHONPATH": ":".join(sys.path)})
        assert result.returncode == 0
        assert (tmp_path / "root" / "gap-curve" / "manifest.json").exists()

    def test_rerun_from_manifest_file(self, tmp_path):
        path = write_config(tmp_path, small_config())
        assert main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
        manifest_path = tmp_path / "a" / "manifest.json"
        assert main(["run", str(manifest_path), "--out", str(tmp_path / "b")]) == 0
        a = json.loads(manifest_path.read_text())
        b = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert data_hashes(a) == data_hashes(b)

    def test_threads_flag_recorded(self, tmp_path):
        path = write_config(tmp_path, small_config())
        assert main(["run", str(path), "--out", str(tmp_path / "out"),
                     "--threads", "4"]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["threads"] == 4


class TestFlowFieldRegimes:
    def test_field_files_show_three_noise_regimes(self, tmp_path):
        # high noise pulls the whole grid toward the training mean, low noise
        # projects every node onto a training point
        config = ExperimentConfig.from_dict({
            "experiment": "flow-field", "seed": 0,
            "dataset": {"n_per_split": 16, "radius": 12.0, "mode": "symmetric",
                        "seed": 0},
            "sigmas": [2800.0, 0.05], "resolution": 12,
            "bounds": [[-15.0, 15.0], [-15.0, 15.0]]})
        run(config, out_dir=tmp_path / "out")
        from diffgap import make_circle_dataset
        train = make_circle_dataset(16, 12.0).train_points

        def read_field(name):
            lines = (tmp_path / "out" / name).read_text().splitlines()
            assert lines[0] == "x0,x1,pred0,pred1,err_norm"
            return np.array([[float(v) for v in line.split(",")] for line in lines[1:]])

        high = read_field("field_sigma_2800.0.csv")
        assert np.linalg.norm(high[:, 2:4], axis=1).max() <= 0.1  # train mean is ~0
        low = read_field("field_sigma_0.05.csv")
        dists = np.linalg.norm(low[:, None, 2:4] - train[None], axis=-1).min(axis=1)
        assert dists.max() <= 1e-3 * 12.0  # memorization scale; boundary nodes mix

    def test_api_run_rejects_invalid_config(self, tmp_path):
        from diffgap import ConfigError
        config = ExperimentConfig.from_dict(small_config(experiment="delta-sweep"))
        with pytest.raises(ConfigError, match="deltas"):
            run(config, out_dir=tmp_path / "out")

    def test_validate_fd_protocol_missing_inputs(self):
        config = ExperimentConfig.from_dict({"experiment": "fd-protocol", "seed": 0})
        violations = validate(config)
        assert any("fd.generated" in v for v in violations)
        assert any("fd.train_pool" in v for v in violations)
