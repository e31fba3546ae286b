"""
The assembled network: backbone, multi-instance decoder, knowledge transfer
and the dense correspondence head.
"""

from typing import List, Optional, Sequence

import numpy as np

from .backbone import Backbone, RegionBox, crop_region
from .config import Config
from .errors import PipelineError, ShapeError
from .fcn import predict_fcn
from .head import DensePoseHead, HeadOutput, InstancePrediction, decode_prediction, forward_head
from .ktm import KnowledgeTransferMachine, ParserWeights, build_ktm
from .mid import MidOutput, MultiInstanceDecoder
from .nn import Module
from .synth import SceneAnnotation
from .tensor import Tensor, no_grad

P2_SCALE = 0.25


class KTN(Module):
    """
    Region-based dense correspondence network.

    The transfer machine is held under a private name: it owns no
    parameters, only the relation graph.
    """

    def __init__(self, cfg: Config, rng: Optional[np.random.Generator] = None):
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        m = cfg.model
        self.backbone = Backbone(rng, m.backbone_channels, m.bias)
        self.mid = MultiInstanceDecoder(
            rng, m.backbone_channels, m.unified_channels, m.icr, m.strengthen, m.dilations, m.bias
        )
        self._ktm: Optional[KnowledgeTransferMachine] = build_ktm(
            cfg.ktm.mode,
            cfg.ktm.sources,
            cfg.ktm.embeddings,
            cfg.ktm.counts,
            cfg.ktm.mask,
            cfg.ktm.omega,
            cfg.ktm.tau,
            cfg.ktm.slope,
        )
        self.head = DensePoseHead(
            rng,
            m.unified_channels,
            m.head_dim,
            m.head_convs,
            with_surface=self._ktm is None,
            bias=m.bias,
        )
        ktm = self._ktm
        self.parsers = ParserWeights(
            rng,
            m.head_dim,
            n_sources=len(ktm.sources) if ktm is not None else 3,
            with_transform=ktm is not None and ktm.uses_transform,
        )
        self._region_size = m.region_size
        self._pipeline = m.pipeline

    @property
    def ktm(self) -> Optional[KnowledgeTransferMachine]:
        return self._ktm

    @property
    def pipeline(self) -> str:
        return self._pipeline

    @property
    def region_size(self) -> int:
        return self._region_size

    def surface_weights(self) -> Tensor:
        """Surface classifier rows: transferred from the parsers, or the head's own."""
        if self._ktm is not None:
            return self._ktm.surface_weights(self.parsers)
        assert self.head.w_s is not None
        return self.head.w_s

    def encode(self, image: np.ndarray) -> MidOutput:
        """Backbone and decoder on a (3, H, W) image with values in [0, 1]."""
        return self.mid(self.backbone(Tensor(np.asarray(image) - 0.5)))

    def region(
        self, mid_out: MidOutput, box: RegionBox, w_s: Optional[Tensor] = None
    ) -> HeadOutput:
        feat = crop_region(
            mid_out.suppressed, box, (self._region_size, self._region_size), P2_SCALE
        )
        return forward_head(feat, self.head, self.parsers, self.surface_weights() if w_s is None else w_s)

    def predict(
        self, scene: SceneAnnotation, boxes: Optional[Sequence[RegionBox]] = None
    ) -> List[InstancePrediction]:
        """
        Dense predictions for ``boxes``, by default the scene's instance boxes.

        The fcn pipeline predicts over the whole image and takes no boxes.
        """
        if self._pipeline == "fcn":
            if boxes is not None:
                raise PipelineError("the fcn pipeline predicts the whole image and takes no boxes")
            with no_grad():
                return predict_fcn(self, scene)
        if boxes is None:
            boxes = [inst.box for inst in scene.instances]
        with no_grad():
            mid_out = self.encode(scene.image)
            w_s = self.surface_weights()
            return [decode_prediction(self.region(mid_out, box, w_s), box) for box in boxes]


def build_model(cfg: Config, rng: Optional[np.random.Generator] = None) -> KTN:
    if cfg.model.pipeline not in ("rcnn", "fcn"):
        raise PipelineError(f"unknown pipeline {cfg.model.pipeline!r}")
    if cfg.model.region_size < 1:
        raise ShapeError("model.region_size must be positive")
    return KTN(cfg, rng)
