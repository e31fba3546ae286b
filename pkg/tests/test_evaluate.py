"""
Tests for dataset-level evaluation, prediction files and ablation helpers.
"""

import csv
import json

import numpy as np
import pytest

from ktnet.ablate import PRESETS, median, preset_configs, report_metrics, run_ablation
from ktnet.config import Config
from ktnet.errors import ConfigError
from ktnet.evaluate import evaluate, predict_scenes, write_predictions, write_table
from ktnet.metrics import SubstitutionFlags, evaluate_predictions, gt_predictions
from ktnet.model import build_model

from .conftest import tiny_config


@pytest.fixture(scope="module")
def model():
    return build_model(tiny_config(), np.random.default_rng(5))


class TestEvaluate:
    def test_threads_do_not_change_predictions(self, model, scenes):
        one = predict_scenes(model, scenes, threads=1)
        four = predict_scenes(model, scenes, threads=4)
        assert [len(p) for p in one] == [len(p) for p in four]
        for a, b in zip(one, four):
            for pa, pb in zip(a, b):
                np.testing.assert_array_equal(pa.surface, pb.surface)
                assert pa.score == pb.score

    def test_report_over_untrained_model(self, model, scenes):
        report = evaluate(model, scenes, tiny_config())
        assert report.images == len(scenes)
        assert report.densepose is not None
        assert 0.0 <= report.densepose.ap <= 1.0

    def test_given_predictions_are_used(self, model, scenes):
        preds = [gt_predictions(scene) for scene in scenes]
        report = evaluate(model, scenes, tiny_config(), SubstitutionFlags.all(), preds)
        assert report.ap == pytest.approx(1.0)


class TestFiles:
    def test_write_predictions(self, scenes, tmp_path):
        preds = [gt_predictions(scene, size=4) for scene in scenes]
        path = tmp_path / "out" / "preds.jsonl"
        count = write_predictions(path, preds)
        assert count == sum(len(s.instances) for s in scenes)
        records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert len(records) == count
        assert records[0]["image"] == 0
        assert records[-1]["image"] == len(scenes) - 1
        assert records[0]["size"] == [4, 4]

    def test_write_table(self, tmp_path):
        rows = [{"substituted": "none", "ap": 0.25}, {"substituted": "body", "ap": None}]
        write_table(rows, tmp_path / "t.csv", tmp_path / "t.json")
        with open(tmp_path / "t.csv", newline="", encoding="utf-8") as f:
            lines = list(csv.reader(f))
        assert lines == [["substituted", "ap"], ["none", "0.25"], ["body", ""]]
        assert json.loads((tmp_path / "t.json").read_text(encoding="utf-8"))[1]["ap"] is None


class TestAblation:
    def test_presets(self):
        assert set(PRESETS) == {"components", "dilations", "graphs", "imbalance", "mid", "parsers"}
        configs = preset_configs("mid", Config())
        assert len(configs) == 6
        assert configs[0][1].model.icr == "off"

    def test_preset_overrides_keep_the_base(self):
        base = tiny_config()
        for label, cfg in preset_configs("dilations", base):
            assert cfg.data == base.data
            assert label.startswith("d")

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown ablation preset"):
            preset_configs("table9", Config())

    def test_median(self):
        assert median([3.0, None, 1.0, 2.0]) == 2.0
        assert median([None]) is None

    def test_report_metrics(self, scenes):
        report = evaluate_predictions(scenes, [gt_predictions(s) for s in scenes])
        flat = report_metrics(report, per_category=True)
        assert flat["ap"] == pytest.approx(0.0)
        assert "ar_Torso" in flat
        assert "ar_Torso" not in report_metrics(report, per_category=False)

    @pytest.mark.slow
    def test_run_ablation(self, scenes, tmp_path):
        base = tiny_config(**{"optim.iterations": 1})
        path = run_ablation("parsers", base, tmp_path, seeds=2, train_scenes=scenes[:1], eval_scenes=scenes[2:])
        assert path == tmp_path / "parsers.csv"
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ["config", "metric", "seed_0", "seed_1", "median"]
        assert {row["config"] for row in rows} == {"loc", "part", "kpt", "none"}
        assert (tmp_path / "parsers" / "loc" / "seed_1" / "report.json").is_file()
