import json
import os

import numpy as np
import pandas as pd
import pytest

from OpenTuneUtils.cli import EXIT_CONFIG, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, main
from OpenTuneUtils.DynamicsUtils import ControlReader, ControlSignal, ControlWriter, ControlledModel, ModelKind
from OpenTuneUtils.ExperimentUtils import ConfigError, ExperimentConfig, ExperimentRunner, RunManifest, git_blob_sha1

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")
DESK_SCALE = os.path.join(CONFIGS, "desk_scale.ini")
SMALL = ["--set", "model.nbar=3", "--set", "model.N=5", "--set", "data.q=4", "--set", "data.j=2", "--quiet"]


def small_args(command, out_dir, *extra):
    return [command, "--out", str(out_dir), *SMALL, *extra]


def write_zero_control(filename, nbar=3, N=5):
    model = ControlledModel.two_layer_tanh(nbar)
    ControlWriter().write(ControlSignal.zeros(N, model.p), ModelKind.TwoLayerTanh, nbar, filename)


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\nnbar = 4  # lifted dimension\n\n[train]\nstep_size = 0.5\nmethod = scratch-phase1\n"
                   "[tuner]\nstep_size = 3.0\nstrict = yes\n[penalty]\nlambdas = 0.1, 1.0\n")
    config = ExperimentConfig.from_file(str(ini), ["data.q=6", "data.j=3", "output.workers=2"])
    assert config.model.nbar == 4
    assert config.train.method == "scratch-phase1"
    assert config.qfolded.step_size == 0.5
    assert config.tuner.step_size == 3.0
    assert config.tuner.strict is True
    assert config.penalty_settings.lambdas == (0.1, 1.0)
    assert (config.data.q, config.data.j) == (6, 3)
    assert config.tuner.workers == config.penalty.workers == config.qfolded.workers == 2

    echo = config.echo()
    assert echo["penalty"]["lambdas"] == [0.1, 1.0]
    assert echo["train"]["step_size"] == 0.5
    assert set(echo) == {"model", "data", "train", "tuner", "penalty", "scaling", "output"}


@pytest.mark.parametrize("override", [
    "data.q=0", "data.j=20", "data.q=abc", "nosection.q=1", "data.nokey=1", "data.q", "model.kind=ControlAffine",
    "train.method=adam", "penalty.lambdas=-1.0", "tuner.step_size=0", "output.verbose=maybe",
])
def test_invalid_config_raises(override):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(None, [override])


def test_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.from_file(str(tmp_path / "missing.ini"))
    broken = tmp_path / "broken.ini"
    broken.write_text("nbar = 4\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(str(broken))


def test_desk_scale_config_parses():
    config = ExperimentConfig.from_file(DESK_SCALE)
    assert (config.model.nbar, config.model.N, config.data.q, config.data.j) == (8, 10, 16, 8)
    assert config.penalty_settings.lambdas == (0.01, 0.1, 1.0)
    assert config.scaling.q_list == (4, 8, 16, 32)


def test_manifest_hash(tmp_path):
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_sha1(b"hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad"

    data = tmp_path / "data.csv"
    data.write_text("x\n")
    manifest = RunManifest(command="eval", config_echo={"data": {"q": 4}})
    manifest.add_inputs([data])
    same = RunManifest(command="eval", config_echo={"data": {"q": 4}}, inputs=[str(data)])
    assert manifest.content_hash == same.content_hash
    data.write_text("y\n")
    assert manifest.content_hash != RunManifest(command="eval", config_echo={"data": {"q": 4}}).content_hash

    filename = manifest.write(tmp_path)
    assert os.path.basename(filename) == "manifest_eval.json"
    with open(filename) as file:
        assert json.load(file)["content_hash"] == manifest.content_hash


def test_cli_usage_errors(tmp_path):
    assert main([]) == EXIT_CONFIG
    assert main(["bogus"]) == EXIT_CONFIG
    assert main(small_args("gen-data", tmp_path / "run", "--set", "data.q=0")) == EXIT_CONFIG
    assert main(["gen-data", "--config", str(tmp_path / "missing.ini")]) == EXIT_IO


def test_missing_dataset_writes_nothing(tmp_path):
    out_dir = tmp_path / "run"
    assert main(small_args("train", out_dir)) == EXIT_IO
    assert not out_dir.exists()


def test_gen_data_is_deterministic(tmp_path, capsys):
    assert main(small_args("gen-data", tmp_path / "a")) == EXIT_OK
    assert main(small_args("gen-data", tmp_path / "b")) == EXIT_OK
    assert capsys.readouterr().out == ""
    first = (tmp_path / "a" / "dataset.csv").read_bytes()
    assert first == (tmp_path / "b" / "dataset.csv").read_bytes()
    with open(tmp_path / "a" / "manifest_gen-data.json") as file:
        manifest = json.load(file)
    assert manifest["command"] == "gen-data"
    assert manifest["artifacts"]["dataset"].endswith("dataset.csv")


def test_eval_zero_control(tmp_path):
    out_dir = tmp_path / "run"
    assert main(small_args("gen-data", out_dir)) == EXIT_OK
    control = tmp_path / "zero.ctrl"
    write_zero_control(control)
    assert main(small_args("eval", out_dir, "--control", str(control))) == EXIT_OK
    table = pd.read_csv(out_dir / "eval.csv")
    assert list(table.columns) == ["set", "metric", "value"]
    errors = table[table["metric"] == "avg_error"].set_index("set")["value"]
    assert list(errors.index) == ["memorized", "new", "all"]
    assert np.allclose(errors.to_numpy(), 1.0)
    costs = table[table["metric"] == "cost_sum"].set_index("set")["value"]
    assert costs["all"] == pytest.approx(2.0)

    assert main(small_args("eval", out_dir, "--control", str(control), "--set", "data.j=4")) == EXIT_OK
    assert "new" not in set(pd.read_csv(out_dir / "eval.csv")["set"])


def test_checkpoint_mismatch_is_config_error(tmp_path):
    out_dir = tmp_path / "run"
    assert main(small_args("gen-data", out_dir)) == EXIT_OK
    control = tmp_path / "wide.ctrl"
    write_zero_control(control, nbar=4)
    assert main(small_args("tune", out_dir, "--control", str(control))) == EXIT_CONFIG


def test_train_without_memory_writes_zero_control(tmp_path):
    out_dir = tmp_path / "run"
    assert main(small_args("gen-data", out_dir)) == EXIT_OK
    assert main(small_args("train", out_dir, "--set", "data.j=0")) == EXIT_OK
    checkpoint = ControlReader().read(out_dir / "u0.ctrl")
    assert not np.any(checkpoint.control.values)
    assert checkpoint.control.N == 5


def test_train_below_acceptance_exits_not_converged(tmp_path):
    out_dir = tmp_path / "run"
    assert main(small_args("gen-data", out_dir)) == EXIT_OK
    assert main(small_args("train", out_dir, "--set", "train.max_iterations=0")) == EXIT_NOT_CONVERGED
    assert (out_dir / "u0.ctrl").exists()
    assert (out_dir / "train_curve.csv").read_text().splitlines()[0] == "iteration,cost,avg_error"


def test_small_pipeline_artifacts(tmp_path):
    out_dir = tmp_path / "run"
    fast = ["--set", "train.max_iterations=20", "--set", "tuner.max_inner_iterations=10", "--set", "tuner.rounds=1",
            "--set", "penalty.lambdas=0.5", "--set", "penalty.iterations_per_round=5", "--set", "penalty.rounds=1"]
    assert main(small_args("gen-data", out_dir, *fast)) == EXIT_OK
    assert main(small_args("train", out_dir, *fast)) in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert main(small_args("tune", out_dir, *fast)) in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert main(small_args("penalty", out_dir, *fast)) == EXIT_OK
    assert main(small_args("eval", out_dir, *fast)) == EXIT_OK
    for name in ("u_star.ctrl", "tune_report.csv", "u_tilde_lambda=0.5.ctrl", "penalty_report_lambda=0.5.csv",
                 "eval.csv", "manifest_tune.json", "manifest_penalty.json"):
        assert (out_dir / name).exists(), name
    report = pd.read_csv(out_dir / "tune_report.csv")
    assert list(report.columns) == ["round", "phase", "set", "metric", "value"]
    assert set(report["phase"]) == {"initial", "phase1", "phase2", "phase3"}


def desk_scale_runner(out_dir):
    config = ExperimentConfig.from_file(DESK_SCALE, [f"output.dir={out_dir}", "output.verbose=false"])
    return ExperimentRunner(config)


@pytest.fixture(scope="module")
def desk_scale_run(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("desk_scale")
    runner = desk_scale_runner(out_dir)
    results = {"gen-data": runner.gen_data(), "train": runner.train(), "tune": runner.tune(),
               "penalty": runner.penalty()}
    return out_dir, results


def test_desk_scale_tuning_keeps_memorized_samples(desk_scale_run):
    _, results = desk_scale_run
    train, tune, penalty = results["train"], results["tune"], results["penalty"]
    assert train.converged
    initial_error = train.metrics["avg_error_memorized"]
    assert initial_error <= 0.05
    assert tune.metrics["new"] <= 0.1
    assert tune.metrics["drift_exceeded"] == 0
    assert tune.metrics["memorized"] <= initial_error + 0.05
    assert penalty.metrics["memorized@lambda=0.1"] > tune.metrics["memorized"]


def test_desk_scale_reports_are_reproducible(desk_scale_run, tmp_path):
    first_dir, _ = desk_scale_run
    runner = desk_scale_runner(tmp_path)
    runner.gen_data()
    runner.train()
    runner.tune()
    for name in ("dataset.csv", "u0.ctrl", "train_curve.csv", "u_star.ctrl", "tune_report.csv"):
        assert (tmp_path / name).read_bytes() == (first_dir / name).read_bytes(), name


@pytest.mark.parametrize("name, q, j", [("ball64_j16", 64, 16), ("ball64_j52", 64, 52), ("ball32_j8", 32, 8),
                                        ("ball32_j25", 32, 25)])
def test_full_size_configs_parse(name, q, j):
    config = ExperimentConfig.from_file(os.path.join(CONFIGS, f"{name}.ini"))
    assert (config.data.q, config.data.j) == (q, j)
    assert (config.model.nbar, config.model.N) == (8, 10)
    assert config.train.joint_reference is True
    assert config.output.dir == f"runs/{name}"


def test_penalty_reports_are_reproducible(tmp_path):
    fast = ["--set", "train.max_iterations=20", "--set", "penalty.lambdas=0.5", "--set",
            "penalty.iterations_per_round=5", "--set", "penalty.rounds=2"]
    for name in ("a", "b"):
        out_dir = tmp_path / name
        assert main(small_args("gen-data", out_dir, *fast)) == EXIT_OK
        assert main(small_args("train", out_dir, *fast)) in (EXIT_OK, EXIT_NOT_CONVERGED)
        assert main(small_args("penalty", out_dir, *fast)) == EXIT_OK
    for name in ("penalty_report_lambda=0.5.csv", "u_tilde_lambda=0.5.ctrl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_tune_with_joint_reference(tmp_path):
    out_dir = tmp_path / "run"
    fast = ["--set", "train.max_iterations=20", "--set", "tuner.max_inner_iterations=10", "--set", "tuner.rounds=1",
            "--set", "train.joint_reference=true"]
    assert main(small_args("gen-data", out_dir, *fast)) == EXIT_OK
    assert main(small_args("train", out_dir, *fast)) in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert main(small_args("tune", out_dir, *fast)) in (EXIT_OK, EXIT_NOT_CONVERGED)
    report = pd.read_csv(out_dir / "tune_report.csv")
    joint = report[report["phase"] == "joint"]
    assert set(joint["round"]) == {0}
    assert set(joint["set"]) == {"memorized", "new", "all"}
    assert (joint[joint["metric"] == "avg_error"]["value"] >= 0).all()
