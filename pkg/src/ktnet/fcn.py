"""
Fully-convolutional variant: the head runs over the whole decoded map
instead of cropped regions. Only single-figure scenes are accepted.
"""

from typing import TYPE_CHECKING, List

from .backbone import RegionBox
from .errors import PipelineError
from .head import HeadOutput, InstancePrediction, decode_prediction, forward_head
from .synth import SceneAnnotation

if TYPE_CHECKING:
    from .model import KTN


def full_image_box(scene: SceneAnnotation) -> RegionBox:
    instance_id = scene.instances[0].box.instance_id if scene.instances else 0
    return RegionBox(0.0, 0.0, float(scene.width), float(scene.height), instance_id)


def check_single_instance(scene: SceneAnnotation) -> None:
    if len(scene.instances) != 1:
        raise PipelineError(
            f"scene {scene.seed}: the fcn pipeline needs exactly one instance, "
            f"got {len(scene.instances)}"
        )


def forward_fcn(model: "KTN", scene: SceneAnnotation) -> HeadOutput:
    """
    Head outputs over the full decoded map, at a quarter of the image extent.

    Raises:
        PipelineError: for scenes with more or fewer than one instance
    """
    check_single_instance(scene)
    mid_out = model.encode(scene.image)
    return forward_head(mid_out.suppressed, model.head, model.parsers, model.surface_weights())


def predict_fcn(model: "KTN", scene: SceneAnnotation) -> List[InstancePrediction]:
    out = forward_fcn(model, scene)
    return [decode_prediction(out, full_image_box(scene))]
