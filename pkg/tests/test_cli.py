import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import two_line_data
from perfclust.cli import (
    BUNDLE_VERSION,
    RunConfig,
    cmd_fit,
    cmd_stream,
    cmd_synth_bench,
    load_bundle,
    load_config,
    main,
    read_jsonl,
    save_bundle,
)
from perfclust.core import Dataset, InvalidInputError
from perfclust.learners import RegressorSpec, TrainedModel, linear_model, predict_many
from perfclust.pipeline import SeriesFrame, write_series_csv, write_wide_csv

VOLATILE = {"duration_s"}


def numeric_fields(report):
    return {k: v for k, v in report.items() if k not in VOLATILE}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def two_line_config(tmp_path):
    ds, truth = two_line_data(0)
    write_wide_csv(tmp_path / "lines.csv", ds, truth)
    return write_config(tmp_path / "fit.json", {
        "seed": 0,
        "data": {"path": "lines.csv", "format": "wide", "split": None},
        "pbc": {"k_hat": 2},
    })


def changepoint_files(tmp_path, n_batches=20, batch_size=50, change=10, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_batches * batch_size)
    slope = np.where(np.arange(x.size) < change * batch_size, 2.0, -3.0)
    write_wide_csv(tmp_path / "stream.csv", Dataset(x[:, None], slope * x))
    save_bundle(tmp_path / "oracle.json", [linear_model([2.0]), linear_model([-3.0])], 1)
    return tmp_path / "stream.csv", tmp_path / "oracle.json"


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig.from_dict({"seed": 3, "pbc": {"k_hat": 4}, "stream": {"learning_rate": [0.1, 0.2]}})
        again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg
        assert again.pbc.seed == 3 and again.synthetic.seed == 3

    def test_seed_override(self, two_line_config):
        cfg = load_config(two_line_config, seed=9)
        assert cfg.seed == 9 and cfg.pbc.seed == 9

    def test_unknown_section(self):
        with pytest.raises(InvalidInputError):
            RunConfig.from_dict({"pcb": {}})

    def test_paths_resolve_against_config(self, two_line_config, tmp_path):
        assert load_config(two_line_config).data.path == str((tmp_path / "lines.csv").resolve())


class TestBundle:
    @pytest.mark.parametrize("spec", [
        RegressorSpec(),
        RegressorSpec(kind="mlp", hidden_sizes=(7, 3), activation="tanh"),
    ])
    def test_round_trip_bit_exact(self, tmp_path, rng, spec):
        models = [TrainedModel(spec, rng.normal(size=spec.n_parameters(4)), 4) for _ in range(3)]
        save_bundle(tmp_path / "b.json", models, 4)
        loaded = load_bundle(tmp_path / "b.json")["models"]
        X = rng.normal(size=(1000, 4)) * 10
        for a, b in zip(models, loaded):
            assert a == b
            np.testing.assert_array_equal(predict_many(a, X), predict_many(b, X))

    def test_refuses_other_version(self, tmp_path):
        save_bundle(tmp_path / "b.json", [linear_model([1.0])], 1)
        raw = json.loads((tmp_path / "b.json").read_text())
        raw["version"] = BUNDLE_VERSION + 1
        (tmp_path / "b.json").write_text(json.dumps(raw))
        with pytest.raises(InvalidInputError, match="unsupported bundle"):
            load_bundle(tmp_path / "b.json")


class TestFit:
    def test_two_lines(self, two_line_config, tmp_path):
        report = cmd_fit(load_config(two_line_config), tmp_path / "out")
        assert report["converged"] is True
        assert report["final_loss"] < 1e-12
        assert report["misclassification"] == 0.0
        assert {p.name for p in (tmp_path / "out").iterdir()} == {"models.json", "fit_report.json", "fit_history.jsonl"}
        history = read_jsonl(tmp_path / "out" / "fit_history.jsonl")
        assert [h["loss"] for h in history] == report["loss_history"]

    def test_single_cluster_equals_baseline(self, tmp_path, rng):
        write_wide_csv(tmp_path / "d.csv", Dataset(rng.normal(size=(60, 2)), rng.normal(size=60)))
        cfg = write_config(tmp_path / "c.json", {"data": {"path": "d.csv", "split": None}, "pbc": {"k_hat": 1}})
        report = cmd_fit(load_config(cfg), tmp_path / "out")
        assert report["final_loss"] == report["baseline_loss"]

    def test_deterministic(self, two_line_config, tmp_path):
        a = cmd_fit(load_config(two_line_config), tmp_path / "a")
        b = cmd_fit(load_config(two_line_config), tmp_path / "b")
        assert numeric_fields(a) == numeric_fields(b)
        assert (tmp_path / "a" / "models.json").read_bytes() == (tmp_path / "b" / "models.json").read_bytes()

    def test_replay_from_report(self, two_line_config, tmp_path):
        first = cmd_fit(load_config(two_line_config), tmp_path / "a")
        replay = RunConfig.from_dict(first["config"])
        assert numeric_fields(cmd_fit(replay, tmp_path / "b")) == numeric_fields(first)

    def test_series_data(self, tmp_path, rng):
        t = np.arange(300)
        write_series_csv(tmp_path / "s.csv", [SeriesFrame.from_values(np.sin(t / 5) + 0.1 * rng.normal(size=300))])
        cfg = write_config(tmp_path / "c.json", {
            "data": {"path": "s.csv", "format": "series",
                     "features": {"lags": [1, 2], "rolling_windows": [4], "rolling_stats": ["mean", "std"]}},
            "pbc": {"k_hat": 2},
            "stream": {"batch_size": 10},
        })
        fit_report = cmd_fit(load_config(cfg), tmp_path / "out")
        assert fit_report["n_train"] == 236
        bundle = load_bundle(tmp_path / "out" / "models.json")
        assert bundle["normalization"] is not None and bundle["features"].lags == (1, 2)
        stream_report = cmd_stream(load_config(cfg), tmp_path / "out")
        assert stream_report["n_points"] == 31 and stream_report["n_batches"] == 4


class TestStream:
    def stream_config(self, tmp_path, stream_csv, **stream):
        return write_config(tmp_path / "s.json", {"stream": {"path": str(stream_csv), "batch_size": 50, **stream}})

    def test_zero_rate_freezes_weights(self, tmp_path):
        csv, bundle = changepoint_files(tmp_path)
        cfg = load_config(self.stream_config(tmp_path, csv, learning_rate=0.0))
        cmd_stream(cfg, tmp_path / "out", bundle)
        records = read_jsonl(tmp_path / "out" / "trajectory.jsonl")
        assert len(records) == 20
        assert all(r["weights"] == [0.5, 0.5] for r in records)

    def test_single_batch(self, tmp_path):
        csv, bundle = changepoint_files(tmp_path, n_batches=1, change=1)
        cfg = load_config(self.stream_config(tmp_path, csv, learning_rate=0.01))
        report = cmd_stream(cfg, tmp_path / "out", bundle)
        assert report["n_batches"] == 1
        assert len(read_jsonl(tmp_path / "out" / "trajectory.jsonl")) == 1

    def test_changepoint_weight_shift(self, tmp_path):
        csv, bundle = changepoint_files(tmp_path)
        cfg = load_config(self.stream_config(tmp_path, csv, learning_rate=0.02))
        cmd_stream(cfg, tmp_path / "out", bundle)
        w_after = [r["weights"][1] for r in read_jsonl(tmp_path / "out" / "trajectory.jsonl")][9:]
        assert np.all(np.diff(w_after[:6]) > 0)

    def test_dimension_mismatch(self, tmp_path):
        csv, _ = changepoint_files(tmp_path)
        save_bundle(tmp_path / "wide.json", [linear_model([1.0, 2.0])], 2)
        cfg = load_config(self.stream_config(tmp_path, csv))
        with pytest.raises(InvalidInputError, match="features"):
            cmd_stream(cfg, tmp_path / "out", tmp_path / "wide.json")

    def test_trajectory_full_precision(self, tmp_path):
        csv, bundle = changepoint_files(tmp_path)
        cfg = load_config(self.stream_config(tmp_path, csv, learning_rate=0.013))
        report = cmd_stream(cfg, tmp_path / "out", bundle)
        last = read_jsonl(tmp_path / "out" / "trajectory.jsonl")[-1]
        assert last["weights"] == report["final_weights"]


class TestSynthBench:
    def test_small_bench(self, tmp_path):
        cfg = RunConfig.from_dict({"synthetic": {"n_points": 300}, "bench": {"replicates": 2, "k_hats": [3]}})
        summary = cmd_synth_bench(cfg, tmp_path)
        assert set(summary["mean_misclassification"]) == {"pbc", "kmeans"}
        reps = read_jsonl(tmp_path / "replicates.jsonl")
        assert [r["seed"] for r in reps] == [0, 1]
        assert summary["mean_misclassification"]["pbc"]["3"] == pytest.approx(np.mean([r["pbc"]["3"] for r in reps]))
        curves = read_jsonl(tmp_path / "cluster_curves.jsonl")
        assert curves and all(len(c["per_cluster"]) == 3 for c in curves)

    def test_parallel_matches_serial(self, tmp_path):
        base = {"synthetic": {"n_points": 200}, "bench": {"replicates": 2, "k_hats": [2]}}
        serial = cmd_synth_bench(RunConfig.from_dict(base), tmp_path / "a")
        parallel = cmd_synth_bench(RunConfig.from_dict({**base, "bench": {**base["bench"], "jobs": 2}}), tmp_path / "b")
        assert serial["mean_misclassification"] == parallel["mean_misclassification"]


class TestMain:
    def test_success(self, two_line_config, tmp_path, capsys):
        assert main(["fit", "--config", str(two_line_config), "--out", str(tmp_path / "o")]) == 0
        assert "converged=True" in capsys.readouterr().out

    @pytest.mark.parametrize("content", ["{not json", '{"pbc": {"k_hat": 0}}', '{"bogus": 1}',
                                         '{"pbc": {"no_such_field": 1}}', '{"data": {"path": "missing.csv"}}'])
    def test_bad_config_exits_nonzero(self, tmp_path, capsys, content):
        (tmp_path / "c.json").write_text(content)
        assert main(["fit", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) != 0
        err = capsys.readouterr().err
        assert err.startswith("error:") and len(err.strip().splitlines()) == 1

    def test_console_script(self, two_line_config, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "perfclust", "fit", "--config", str(two_line_config),
                               "--out", str(tmp_path / "o"), "--seed", "0"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
