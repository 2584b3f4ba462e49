"""
End-to-end tests of the command line: exit codes, output directories and report files
"""

import json
import os

import pytest

from run import main
from utils.config import OUTPUT_DIR_ENV, config_to_yaml, load_config
from utils.report_manager import read_report_csv


@pytest.fixture
def cli(tiny_config, tmp_path, monkeypatch):
    """Runs the CLI against the tiny config with reports under tmp_path/runs"""
    out = tmp_path / "runs"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(out))
    config_file = tmp_path / "tiny.yaml"
    config_file.write_text(config_to_yaml(tiny_config))

    def invoke(*args):
        return main([*args, "--config", str(config_file), "--log-level", "WARNING"])

    invoke.out = out
    return invoke


@pytest.fixture
def trained(cli):
    assert cli("train", "--set", "train.steps=2", "--set", "train.warmup_steps=1") == 0
    return cli


def read_json(path):
    return json.loads(path.read_text())


class TestConfigLoading:
    def test_overrides_and_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "elsewhere"))
        config = load_config(None, ["train.steps=0", "model.variant=pass_through", "eval.interpolate_pair=[2, 3]"],
                             env_file=tmp_path / "none.env")
        assert config.train.steps == 0
        assert config.model.variant == "pass_through"
        assert config.eval.interpolate_pair == [2, 3]
        assert config.output.dir == str(tmp_path / "elsewhere")

    def test_bad_override_exits_2(self, cli, capsys):
        assert cli("stats", "--set", "train.batch_size=-1") == 2
        assert "train.batch_size" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, cli):
        assert cli("stats", "--set", "train.bogus=1") == 2

    def test_unknown_command_exits_2(self, cli):
        assert cli("dance") == 2


class TestStats:
    def test_writes_reports(self, cli):
        assert cli("stats") == 0
        directory = cli.out / "stats"
        stats = read_json(directory / "stats.json")
        assert 0.0 < stats["self_test"]["mean"] < 1.0
        frame, config_hash = read_report_csv(directory / "pvalues.csv", dtype={"zip": str})
        assert len(config_hash) == 12
        assert stats["config_hash"] == config_hash
        assert len(frame) == stats["n_train"]
        assert (directory / "zip_stats.csv").exists()
        assert (directory / "resolved_config.yaml").exists()

    def test_existing_output_needs_force(self, cli):
        assert cli("stats") == 0
        assert cli("stats") == 2
        assert cli("stats", "--force") == 0


class TestTrain:
    def test_zero_steps(self, cli):
        assert cli("train", "--set", "train.steps=0") == 0
        directory = cli.out / "train"
        assert (directory / "model.pt").exists()
        metrics, _ = read_report_csv(directory / "metrics.csv")
        assert set(metrics["step"]) == {0}
        assert {"train", "test", "generated"} <= set(metrics["split"])

    def test_rerun_refused_without_force(self, trained):
        assert trained("train", "--set", "train.steps=0") == 2
        assert trained("train", "--set", "train.steps=0", "--force") == 0

    def test_trace_written(self, trained):
        trace, _ = read_report_csv(trained.out / "train" / "trace.csv")
        assert list(trace["step"]) == [0, 1]


class TestCheckpointCommands:
    def test_eval_without_checkpoint(self, cli, capsys):
        assert cli("eval") == 2
        assert "missing checkpoint" in capsys.readouterr().err

    def test_generate(self, trained):
        assert trained("generate") == 0
        directory = trained.out / "generate"
        records, _ = read_report_csv(directory / "generated.csv", dtype=str)
        assert len(records) == 20
        stats = read_json(directory / "stats.json")
        assert 0 <= stats["membership"]["proportion"] <= 1

    def test_eval(self, trained):
        assert trained("eval") == 0
        payload = read_json(trained.out / "eval" / "eval.json")
        assert payload["step"] == 2
        assert payload["split_loss"]["loss"] > 0
        assert payload["generated_loss"] is not None
        assert payload["pvalues"]["count"] == 20

    def test_repeat(self, trained):
        assert trained("repeat") == 0
        boxes, _ = read_report_csv(trained.out / "repeat" / "boxplot.csv")
        assert list(boxes.columns) == ["stat", "round_0", "round_1", "round_2"]
        names, _ = read_report_csv(trained.out / "repeat" / "street_names.csv")
        assert list(names["round"]) == [0, 1, 2]

    def test_interpolate(self, trained):
        assert trained("interpolate") == 0
        collection = read_json(trained.out / "interpolate" / "interpolation.geojson")
        assert collection["type"] == "FeatureCollection"
        assert len(collection["features"]) == 5
        assert collection["features"][0]["properties"]["weight"] == 1.0
        assert len(collection["config_hash"]) == 12

    def test_interpolate_pair_out_of_range(self, trained):
        assert trained("interpolate", "--set", "eval.interpolate_pair=[0, 100000]") == 2


@pytest.mark.slow
def test_vermont_self_test(tmp_path, monkeypatch):
    train_csv = os.getenv("RECORD_WEAVER_VT_TRAIN", "data/vt/train.csv")
    if not os.path.exists(train_csv):
        pytest.skip("Vermont training split not available")
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert main(["stats", "--set", "data.source=split", "--set", f"data.train_path={train_csv}",
                 "--set", f"data.test_path={train_csv}"]) == 0
    stats = read_json(tmp_path / "stats" / "stats.json")["self_test"]
    assert stats["mean"] == pytest.approx(0.521861, abs=0.005)
    assert stats["median"] == pytest.approx(0.537469, abs=0.005)
    assert stats["stddev"] == pytest.approx(0.298400, abs=0.005)
