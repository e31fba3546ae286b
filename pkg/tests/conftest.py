"""
Shared fixtures: a small configuration that keeps networks and scenes tiny,
a handful of generated scenes, and a finite-difference gradient helper.
"""

from typing import Callable, Sequence

import numpy as np
import pytest

from ktnet import tensor as T
from ktnet.config import Config, override
from ktnet.dataset import generate_dataset
from ktnet.synth import SynthConfig
from ktnet.tensor import Tensor, no_grad

FD_STEP = 1e-5


def tiny_config(**values) -> Config:
    """Defaults shrunk to 64px images and narrow layers, plus overrides by dotted key."""
    base = {
        "data.image_size": 64,
        "data.train_scenes": 4,
        "data.eval_scenes": 2,
        "data.point_mean": 30.0,
        "data.point_std": 5.0,
        "data.point_max": 60,
        "data.distractors": 1,
        "model.backbone_channels": 4,
        "model.unified_channels": 8,
        "model.head_dim": 8,
        "model.head_convs": 2,
        "model.region_size": 8,
        "optim.iterations": 2,
        "optim.batch_size": 1,
    }
    base.update(values)
    return override(Config(), **base)


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every element of ``x``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def check_gradients(
    forward: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: np.random.Generator,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> None:
    """
    Backpropagate a random projection of ``forward()`` and compare the
    gradient of every tensor in ``params`` with central differences.
    """
    out = forward()
    g = rng.normal(size=out.shape)
    T.backward(T.reduce_sum(T.mul(out, Tensor(g))))

    def value() -> float:
        with no_grad():
            return float((forward().data * g).sum())

    for p in params:
        assert p.grad is not None
        np.testing.assert_allclose(p.grad, numeric_grad(value, p), rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def cfg() -> Config:
    return tiny_config()


@pytest.fixture(scope="session")
def scenes():
    """Four 64px scenes with two figures each."""
    synth = SynthConfig.from_data(tiny_config().data)
    return generate_dataset(100, 4, synth)


@pytest.fixture(scope="session")
def single_scenes():
    """Two 64px scenes with one figure each."""
    synth = SynthConfig.from_data(tiny_config(**{"data.n_instances": 1}).data)
    return generate_dataset(200, 2, synth)
