"""
Tests for the command-line interface.
"""

import json

import pytest
from click.testing import CliRunner

from ktnet.cli import main
from ktnet.config import save_config
from ktnet.dataset import load_dataset
from ktnet.utils import with_phases

from .conftest import tiny_config


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    save_config(tiny_config(), path)
    return path


class TestErrors:
    """Failures end with one error record and exit status 1."""

    def test_unknown_key(self, runner, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[optim]\nrate = 0.1\n", encoding="utf-8")
        result = runner.invoke(main, ["--config", str(path), "gen-data"])
        assert result.exit_code == 1
        assert "error[E_CONFIG]: unknown configuration key: optim.rate" in result.output

    def test_bad_checkpoint(self, runner, tmp_path, config_file):
        ckpt = tmp_path / "junk.ckpt"
        ckpt.write_bytes(b"not a checkpoint\n")
        result = runner.invoke(main, ["--config", str(config_file), "eval", str(ckpt)])
        assert result.exit_code == 1
        assert "error[E_CHECKPOINT]" in result.output

    def test_unknown_preset(self, runner):
        result = runner.invoke(main, ["ablate", "table9"])
        assert result.exit_code == 2

    def test_unexpected_exception(self, runner, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise ValueError("could not convert string to float: 'x'")

        monkeypatch.setattr("ktnet.cli.build_graph_ablation", broken)
        result = runner.invoke(main, ["--out", str(tmp_path), "export-graph"])
        assert result.exit_code == 1
        assert "error[E_INTERNAL]: ValueError: could not convert string to float: 'x'" in result.output


class TestPhases:
    def test_next_phase_walks_the_labels(self):
        calls = []

        @with_phases("Loading", "Writing")
        def work(value, next_phase=None):
            calls.append(value)
            next_phase("out.csv")
            return value + 1

        assert work(1) == 2
        assert calls == [1]
        assert work.__name__ == "work"


class TestCommands:
    def test_gen_data(self, runner, tmp_path, config_file):
        out = tmp_path / "eval.jsonl"
        result = runner.invoke(
            main, ["--config", str(config_file), "gen-data", "--split", "eval", "--count", "2", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        scenes = load_dataset(out)
        assert len(scenes) == 2
        assert scenes[0].image.shape == (3, 64, 64)

    def test_export_graph(self, runner, tmp_path):
        result = runner.invoke(main, ["--out", str(tmp_path), "export-graph", "--mode", "crkg_a"])
        assert result.exit_code == 0, result.output
        for name in ("m_s.csv", "m_d.csv", "m_g.csv"):
            assert (tmp_path / name).is_file()

    @pytest.mark.slow
    def test_train_eval_predict(self, runner, tmp_path, config_file):
        out = tmp_path / "run"
        base = ["--config", str(config_file), "--out", str(out)]
        result = runner.invoke(main, [*base, "train"])
        assert result.exit_code == 0, result.output
        ckpt = out / "model.ckpt"
        assert ckpt.is_file()

        result = runner.invoke(main, [*base, "--threads", "2", "eval", str(ckpt)])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert report["flags"] == "none"
        assert report["images"] == 2

        result = runner.invoke(main, [*base, "eval", str(ckpt), "--gt-all"])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert report["flags"] == "body+surface+u+v"
        assert report["densepose"]["ap"] == pytest.approx(1.0)

        result = runner.invoke(main, [*base, "eval", str(ckpt), "--bottleneck"])
        assert result.exit_code == 0, result.output
        rows = json.loads((out / "substitution.json").read_text(encoding="utf-8"))
        assert len(rows) == 7

        preds = tmp_path / "preds.jsonl"
        result = runner.invoke(main, [*base, "predict", str(ckpt), "-o", str(preds)])
        assert result.exit_code == 0, result.output
        records = [json.loads(line) for line in preds.read_text(encoding="utf-8").splitlines()]
        assert records and {r["image"] for r in records} <= {0, 1}
