"""
Class-imbalance strategies for the surface classifier: inverse-frequency
loss weights, inverse-frequency point resampling and a hardest-pair triplet
loss on minority surfaces.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from . import body
from . import tensor as T
from .errors import ConfigError
from .losses import triplet_loss
from .synth import SceneAnnotation
from .tensor import Tensor

FEATURE_EPS = 1e-12


@dataclass(frozen=True)
class ClassStats:
    """Annotated point counts per class."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.ndim != 1 or (counts < 0).any():
            raise ConfigError("class counts must be a vector of non-negative numbers")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_scenes(cls, scenes: Iterable[SceneAnnotation]) -> "ClassStats":
        counts = np.zeros(body.NUM_SURFACES)
        for scene in scenes:
            for inst in scene.instances:
                if len(inst.points):
                    counts += np.bincount(
                        inst.points[:, 2].astype(np.int64), minlength=body.NUM_SURFACES
                    )
        return cls(counts)

    def minor_classes(self, fraction: float = 0.5) -> np.ndarray:
        """
        The least frequent ``fraction`` of the observed classes (count > 0),
        ties broken by class index.
        """
        observed = np.flatnonzero(self.counts > 0)
        order = observed[np.argsort(self.counts[observed], kind="mergesort")]
        k = int(np.floor(fraction * observed.size))
        return np.sort(order[:k])


def reweight(stats: ClassStats) -> np.ndarray:
    """
    Per-class loss weights proportional to 1 / count, scaled to mean 1.

    Classes without samples get the largest weight of the others.
    """
    counts = stats.counts
    seen = counts > 0
    if not seen.any():
        raise ConfigError("cannot re-weight: every class count is zero")
    raw = np.zeros_like(counts)
    raw[seen] = 1.0 / counts[seen]
    raw[~seen] = raw[seen].max()
    return raw / raw.mean()


class ResampleSampler:
    """Draws annotated points so that class c is picked with probability proportional to 1 / count_c."""

    def __init__(self, stats: ClassStats, rng: np.random.Generator):
        counts = stats.counts
        seen = counts > 0
        if not seen.any():
            raise ConfigError("cannot re-sample: every class count is zero")
        p = np.zeros_like(counts)
        p[seen] = 1.0 / counts[seen]
        self.probabilities = p / p.sum()
        self._rng = rng

    def draw_classes(self, n: int) -> np.ndarray:
        return self._rng.choice(self.probabilities.size, size=n, p=self.probabilities)

    def select(self, labels: np.ndarray, n: Optional[int] = None) -> np.ndarray:
        """
        Indices into ``labels`` drawn with replacement. A point's chance is
        its class probability shared among the batch points of that class.
        """
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return np.zeros(0, dtype=np.int64)
        per_class = np.bincount(labels, minlength=self.probabilities.size)
        weights = self.probabilities[labels] / per_class[labels]
        if weights.sum() <= 0:
            weights = np.ones(labels.size)
        n = labels.size if n is None else n
        return self._rng.choice(labels.size, size=n, p=weights / weights.sum())


def resample(stats: ClassStats, rng: np.random.Generator) -> ResampleSampler:
    return ResampleSampler(stats, rng)


def _normalize_rows(x: Tensor) -> Tensor:
    norm = T.sqrt(T.shift(T.reduce_sum(T.mul(x, x), axis=1, keepdims=True), FEATURE_EPS))
    return T.mul(x, T.expand(T.reciprocal(norm), x.shape))


def hardest_pairs(
    features: np.ndarray, labels: np.ndarray, anchors: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Hardest positive (farthest same-label) and hardest negative (closest
    other-label) row for each anchor; anchors without both are dropped.

    Returns:
        (anchor, positive, negative) index arrays
    """
    diff = features[:, None, :] - features[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1) + FEATURE_EPS)
    a_out, p_out, n_out = [], [], []
    for a in anchors:
        same = labels == labels[a]
        same[a] = False
        other = labels != labels[a]
        if not same.any() or not other.any():
            continue
        pos = np.flatnonzero(same)
        neg = np.flatnonzero(other)
        a_out.append(a)
        p_out.append(pos[np.argmax(dist[a, pos])])
        n_out.append(neg[np.argmin(dist[a, neg])])
    return (
        np.asarray(a_out, dtype=np.int64),
        np.asarray(p_out, dtype=np.int64),
        np.asarray(n_out, dtype=np.int64),
    )


def ohem_triplet(
    features: Tensor,
    labels: np.ndarray,
    minor_classes: np.ndarray,
    margin: float = 0.5,
) -> Tensor:
    """
    Triplet loss on L2-normalised point features with minority-class anchors
    and the hardest positive and negative in the batch.

    Args:
        features: (P, D) features at annotated points
        labels: (P,) surface labels
        minor_classes: Classes whose points may serve as anchors

    Returns:
        Scalar loss; zero when no anchor has both a positive and a negative
    """
    labels = np.asarray(labels, dtype=np.int64)
    normed = _normalize_rows(features)
    anchors = np.flatnonzero(np.isin(labels, minor_classes))
    a, p, n = hardest_pairs(normed.data, labels, anchors)
    if a.size == 0:
        return T.scale(T.reduce_sum(normed), 0.0)
    return triplet_loss(T.take(normed, a), T.take(normed, p), T.take(normed, n), margin)
