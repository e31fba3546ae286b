"""
Trained-model checks on the smoke schedule: the default configuration
trained on 200 generated scenes for its full iteration count.

These take minutes; select them with ``-m acceptance``.
"""

import numpy as np
import pytest

from ktnet.config import Config
from ktnet.dataset import generate_dataset
from ktnet.evaluate import evaluate
from ktnet.metrics import SubstitutionFlags
from ktnet.model import build_model
from ktnet.synth import SynthConfig, foreground_cells
from ktnet.tensor import no_grad
from ktnet.train import EVAL_SEED_BASE, load_scenes, train

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]

HELD_OUT = 100


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    cfg = Config()
    out = tmp_path_factory.mktemp("smoke")
    result = train(cfg, load_scenes(cfg, "train"), out, show_progress=False)
    return cfg, result.model


@pytest.fixture(scope="module")
def eval_scenes(smoke):
    cfg, _ = smoke
    return load_scenes(cfg, "eval")


def test_training_beats_initialization(smoke, eval_scenes):
    cfg, model = smoke
    untrained = build_model(cfg, np.random.default_rng(cfg.seed))
    before = evaluate(untrained, eval_scenes, cfg).ap
    after = evaluate(model, eval_scenes, cfg).ap
    assert after - before >= 0.20


def test_substitution_is_monotone(smoke, eval_scenes):
    cfg, model = smoke
    chain = [
        SubstitutionFlags(),
        SubstitutionFlags(surface=True),
        SubstitutionFlags(surface=True, u=True, v=True),
        SubstitutionFlags.all(),
    ]
    aps = [evaluate(model, eval_scenes, cfg, flags).ap for flags in chain]
    for lower, higher in zip(aps, aps[1:]):
        assert lower <= higher + 1e-9
    assert aps[-1] == pytest.approx(1.0)


def test_gate_suppresses_background(smoke):
    cfg, model = smoke
    scenes = generate_dataset(EVAL_SEED_BASE + 10_000, HELD_OUT, SynthConfig.from_data(cfg.data))
    fg_sum = bg_sum = 0.0
    fg_count = bg_count = 0
    with no_grad():
        for scene in scenes:
            gate = model.encode(scene.image).gate
            assert gate is not None
            cells = foreground_cells(scene.instance_map)
            values = gate.data[0]
            fg_sum += float(values[cells == 1].sum())
            bg_sum += float(values[cells == 0].sum())
            fg_count += int((cells == 1).sum())
            bg_count += int((cells == 0).sum())
    assert bg_sum / bg_count < fg_sum / fg_count
