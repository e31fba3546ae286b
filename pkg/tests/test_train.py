"""
End-to-end training runs on tiny configurations.
"""

import csv

import numpy as np
import pytest

from ktnet.checkpoint import load_checkpoint, save_checkpoint
from ktnet.errors import CheckpointError
from ktnet.model import build_model
from ktnet.synth import SceneAnnotation
from ktnet.train import (
    CHECKPOINT_NAME,
    LOG_COLUMNS,
    LOG_NAME,
    Strategy,
    load_model,
    load_scenes,
    negative_box,
    scene_loss,
    train,
)

from .conftest import tiny_config

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def run(tmp_path_factory, scenes):
    out = tmp_path_factory.mktemp("run")
    return train(tiny_config(), scenes[:2], out, show_progress=False), out


class TestTrain:
    """Outputs and determinism of a short run."""

    def test_files(self, run):
        result, out = run
        assert result.checkpoint == out / CHECKPOINT_NAME
        assert (out / "config.toml").is_file()
        with open(out / LOG_NAME, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert tuple(rows[0]) == LOG_COLUMNS
        assert float(rows[1]["lr"]) == pytest.approx(0.01)

    def test_log_is_finite(self, run):
        result, _ = run
        for row in result.log:
            assert all(np.isfinite(v) for v in row.values())
            assert row["total"] > 0

    def test_same_seed_same_checkpoint(self, run, scenes, tmp_path):
        result, _ = run
        again = train(tiny_config(), scenes[:2], tmp_path, show_progress=False)
        assert again.checkpoint.read_bytes() == result.checkpoint.read_bytes()

    def test_other_seed_differs(self, run, scenes, tmp_path):
        result, _ = run
        other = train(tiny_config(seed=1), scenes[:2], tmp_path, show_progress=False)
        assert other.checkpoint.read_bytes() != result.checkpoint.read_bytes()

    def test_load_model(self, run, scenes):
        result, _ = run
        model, cfg = load_model(result.checkpoint)
        assert cfg == tiny_config()
        a = model.predict(scenes[2])[0]
        b = result.model.predict(scenes[2])[0]
        np.testing.assert_array_equal(a.surface, b.surface)
        np.testing.assert_allclose(a.body_prob, b.body_prob)

    def test_load_model_needs_a_config(self, run, tmp_path):
        result, _ = run
        tensors, _ = load_checkpoint(result.checkpoint)
        bare = tmp_path / "bare.ckpt"
        save_checkpoint(bare, tensors)
        with pytest.raises(CheckpointError, match="no configuration"):
            load_model(bare)
        model, _ = load_model(bare, tiny_config())
        assert model.state_dict().keys() == tensors.keys()

    def test_incompatible_checkpoint(self, run):
        result, _ = run
        with pytest.raises(CheckpointError):
            load_model(result.checkpoint, tiny_config(**{"ktm.mode": "off"}))


class TestStrategies:
    """Every imbalance strategy trains."""

    @pytest.mark.parametrize("strategy", ["reweight", "resample", "ohem", "ktm-only"])
    def test_one_iteration(self, strategy, scenes, tmp_path):
        cfg = tiny_config(**{"imbalance.strategy": strategy, "optim.iterations": 1})
        result = train(cfg, scenes[:1], tmp_path, show_progress=False)
        assert len(result.log) == 1
        if strategy == "ohem":
            assert "triplet" in result.log[0]

    def test_strategy_objects(self, scenes, rng):
        assert Strategy.build(tiny_config(), scenes, rng).name == "none"
        reweighted = Strategy.build(tiny_config(**{"imbalance.strategy": "reweight"}), scenes, rng)
        assert reweighted.class_weights is not None
        ohem = Strategy.build(tiny_config(**{"imbalance.strategy": "ohem"}), scenes, rng)
        assert ohem.minor is not None and ohem.minor.size > 0

    def test_fcn_pipeline(self, single_scenes, tmp_path):
        cfg = tiny_config(**{"model.pipeline": "fcn", "data.n_instances": 1, "optim.iterations": 1})
        result = train(cfg, single_scenes[:1], tmp_path, show_progress=False)
        assert len(result.log) == 1


class TestSceneLoss:
    def test_terms(self, scenes, rng):
        cfg = tiny_config()
        model = build_model(cfg, rng)
        loss, terms = scene_loss(model, scenes[0], cfg, Strategy("none"), rng)
        assert loss.size == 1
        assert set(terms) == set(LOG_COLUMNS[2:-1])
        assert terms["seg"] > 0

    def test_negative_box_avoids_instances(self, scenes, rng):
        scene = scenes[0]
        box = negative_box(rng, scene)
        if box is not None:
            assert all(box.iou(inst.box) < 0.3 for inst in scene.instances)
            assert box.instance_id == -1


class TestScenes:
    def test_generated_splits_differ(self):
        cfg = tiny_config(**{"data.train_scenes": 1, "data.eval_scenes": 1})
        train_scene = load_scenes(cfg, "train")[0]
        eval_scene = load_scenes(cfg, "eval")[0]
        assert isinstance(train_scene, SceneAnnotation)
        assert train_scene != eval_scene
