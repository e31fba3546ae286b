"""
Body model shared by the generator, the relation graph and the metrics.

Defines the 14 parts, the 24 surfaces (plus background at index 0), the 17
keypoints, the part to surface charts, and a canonical T-pose template on
which geodesic distances between surface points are measured.
"""

from typing import Dict, Optional, Sequence, Tuple

import numpy as np

PARTS = (
    "head",
    "torso",
    "right_upper_arm",
    "left_upper_arm",
    "right_lower_arm",
    "left_lower_arm",
    "right_hand",
    "left_hand",
    "right_upper_leg",
    "left_upper_leg",
    "right_lower_leg",
    "left_lower_leg",
    "right_foot",
    "left_foot",
)

SURFACES = (
    "background",
    "torso_back",
    "torso_front",
    "right_hand",
    "left_hand",
    "left_foot",
    "right_foot",
    "right_upper_leg_back",
    "left_upper_leg_back",
    "right_upper_leg_front",
    "left_upper_leg_front",
    "right_lower_leg_back",
    "left_lower_leg_back",
    "right_lower_leg_front",
    "left_lower_leg_front",
    "left_upper_arm_back",
    "right_upper_arm_back",
    "left_upper_arm_front",
    "right_upper_arm_front",
    "left_lower_arm_back",
    "right_lower_arm_back",
    "left_lower_arm_front",
    "right_lower_arm_front",
    "head_right",
    "head_left",
)

KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

STANDARD_PARTS = (
    "Head",
    "Torso",
    "R-Arm",
    "L-Arm",
    "R-Hand",
    "L-Hand",
    "R-Leg",
    "L-Leg",
    "R-Foot",
    "L-Foot",
)

NUM_PARTS = len(PARTS)
NUM_SURFACES = len(SURFACES)
NUM_KEYPOINTS = len(KEYPOINTS)

# Surfaces of each part; a two-surface part uses the first for the half of
# its width with lateral coordinate below 0.5.
PART_SURFACES: Dict[str, Tuple[int, ...]] = {
    "head": (23, 24),
    "torso": (1, 2),
    "right_upper_arm": (16, 18),
    "left_upper_arm": (15, 17),
    "right_lower_arm": (20, 22),
    "left_lower_arm": (19, 21),
    "right_hand": (3,),
    "left_hand": (4,),
    "right_upper_leg": (7, 9),
    "left_upper_leg": (8, 10),
    "right_lower_leg": (11, 13),
    "left_lower_leg": (12, 14),
    "right_foot": (6,),
    "left_foot": (5,),
}

PART_TO_STANDARD: Dict[str, str] = {
    "head": "Head",
    "torso": "Torso",
    "right_upper_arm": "R-Arm",
    "left_upper_arm": "L-Arm",
    "right_lower_arm": "R-Arm",
    "left_lower_arm": "L-Arm",
    "right_hand": "R-Hand",
    "left_hand": "L-Hand",
    "right_upper_leg": "R-Leg",
    "left_upper_leg": "L-Leg",
    "right_lower_leg": "R-Leg",
    "left_lower_leg": "L-Leg",
    "right_foot": "R-Foot",
    "left_foot": "L-Foot",
}

# Parts meeting at a joint
PART_ADJACENCY = (
    ("head", "torso"),
    ("torso", "right_upper_arm"),
    ("torso", "left_upper_arm"),
    ("torso", "right_upper_leg"),
    ("torso", "left_upper_leg"),
    ("right_upper_arm", "right_lower_arm"),
    ("left_upper_arm", "left_lower_arm"),
    ("right_lower_arm", "right_hand"),
    ("left_lower_arm", "left_hand"),
    ("right_upper_leg", "right_lower_leg"),
    ("left_upper_leg", "left_lower_leg"),
    ("right_lower_leg", "right_foot"),
    ("left_lower_leg", "left_foot"),
)

# Relative frequency of annotated points per surface: torso and head dense,
# hands and feet sparse.
PROFILE_WEIGHT = {"head": 3.0, "torso": 3.0, "hand": 1.0, "foot": 1.0}
DEFAULT_PROFILE_WEIGHT = 2.0

# Part lengths and widths in metres
PART_SIZE: Dict[str, Tuple[float, float]] = {
    "head": (0.25, 0.18),
    "torso": (0.55, 0.34),
    "upper_arm": (0.30, 0.09),
    "lower_arm": (0.27, 0.075),
    "hand": (0.17, 0.08),
    "upper_leg": (0.43, 0.14),
    "lower_leg": (0.42, 0.10),
    "foot": (0.15, 0.09),
}

SHOULDER_OFFSET = 0.17
HIP_OFFSET = 0.09

# Canonical segment directions in image coordinates (y down), radians
CANONICAL_ANGLES: Dict[str, float] = {
    "torso": -np.pi / 2,
    "head": -np.pi / 2,
    "left_upper_arm": 0.0,
    "left_lower_arm": 0.0,
    "right_upper_arm": np.pi,
    "right_lower_arm": np.pi,
    "left_upper_leg": np.pi / 2,
    "left_lower_leg": np.pi / 2,
    "right_upper_leg": np.pi / 2,
    "right_lower_leg": np.pi / 2,
}

FOOT_TURN = np.pi / 3

# Face keypoints in the head frame: (fraction along the head, lateral metres)
FACE_LAYOUT = {
    "nose": (0.45, 0.0),
    "left_eye": (0.6, 0.035),
    "right_eye": (0.6, -0.035),
    "left_ear": (0.5, 0.08),
    "right_ear": (0.5, -0.08),
}

GEODESIC_CAP = 1.0


def part_kind(part: str) -> str:
    """Strip the side prefix: ``left_upper_arm`` -> ``upper_arm``."""
    for side in ("left_", "right_"):
        if part.startswith(side):
            return part[len(side) :]
    return part


def surface_part_table() -> np.ndarray:
    """Index array mapping surface index -> part index + 1 (0 for background)."""
    table = np.zeros(NUM_SURFACES, dtype=np.int64)
    for p, part in enumerate(PARTS):
        for s in PART_SURFACES[part]:
            table[s] = p + 1
    return table


def surface_standard_table() -> np.ndarray:
    """Index array mapping surface index -> standard part index (-1 for background)."""
    table = np.full(NUM_SURFACES, -1, dtype=np.int64)
    for part in PARTS:
        std = STANDARD_PARTS.index(PART_TO_STANDARD[part])
        for s in PART_SURFACES[part]:
            table[s] = std
    return table


def surface_adjacency() -> np.ndarray:
    """Boolean (25, 25) matrix: surfaces on the same part or on parts sharing a joint."""
    part_of = surface_part_table()
    parts_adj = np.eye(NUM_PARTS + 1, dtype=bool)
    for a, b in PART_ADJACENCY:
        i, j = PARTS.index(a) + 1, PARTS.index(b) + 1
        parts_adj[i, j] = parts_adj[j, i] = True
    adj = parts_adj[part_of][:, part_of]
    adj[0, :] = False
    adj[:, 0] = False
    return adj


def profile_weights() -> np.ndarray:
    """Per-surface sampling weights for annotated points, background 0."""
    weights = np.zeros(NUM_SURFACES)
    for part in PARTS:
        w = PROFILE_WEIGHT.get(part_kind(part), DEFAULT_PROFILE_WEIGHT)
        for s in PART_SURFACES[part]:
            weights[s] = w
    return weights


def direction(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def normal(unit: np.ndarray) -> np.ndarray:
    return np.array([-unit[1], unit[0]])


def quad_from_segment(start: np.ndarray, end: np.ndarray, width: float) -> np.ndarray:
    """Four corners of the rectangle of ``width`` around segment start->end."""
    axis = end - start
    length = float(np.hypot(axis[0], axis[1]))
    if length <= 0 or width <= 0:
        raise ValueError("degenerate segment")
    n = normal(axis / length) * (width / 2)
    return np.array([start - n, end - n, end + n, start + n])


class Pose:
    """
    Joint positions and part segments of one figure, in metres.

    ``angles`` overrides entries of ``CANONICAL_ANGLES``; missing entries
    keep the T-pose.
    """

    def __init__(
        self, angles: Optional[Dict[str, float]] = None, root: Sequence[float] = (0.0, 0.0)
    ):
        self.angles = {**CANONICAL_ANGLES, **(angles or {})}
        self.segments: Dict[str, Tuple[np.ndarray, np.ndarray, float]] = {}
        self.keypoints: Dict[str, np.ndarray] = {}
        self._solve(np.asarray(root, dtype=np.float64))

    def _segment(self, part: str, start: np.ndarray, angle: float) -> np.ndarray:
        length, width = PART_SIZE[part_kind(part)]
        end = start + length * direction(angle)
        self.segments[part] = (start, end, width)
        return end

    def _solve(self, pelvis: np.ndarray) -> None:
        a = self.angles
        up = direction(a["torso"])
        # +lateral is the figure's left side
        lateral = direction(a["torso"] + np.pi / 2)
        neck = pelvis + 0.5 * up
        self.segments["torso"] = (pelvis - 0.05 * up, neck, PART_SIZE["torso"][1])
        self._segment("head", neck, a["head"])

        head_axis = direction(a["head"])
        head_lateral = direction(a["head"] + np.pi / 2)
        head_length = PART_SIZE["head"][0]
        for name, (along, side) in FACE_LAYOUT.items():
            self.keypoints[name] = neck + along * head_length * head_axis + side * head_lateral

        for side, sign in (("left", 1.0), ("right", -1.0)):
            shoulder = neck + sign * SHOULDER_OFFSET * lateral
            elbow = self._segment(f"{side}_upper_arm", shoulder, a[f"{side}_upper_arm"])
            wrist = self._segment(f"{side}_lower_arm", elbow, a[f"{side}_lower_arm"])
            self._segment(f"{side}_hand", wrist, a[f"{side}_lower_arm"])

            hip = pelvis + sign * HIP_OFFSET * lateral
            knee = self._segment(f"{side}_upper_leg", hip, a[f"{side}_upper_leg"])
            ankle = self._segment(f"{side}_lower_leg", knee, a[f"{side}_lower_leg"])
            self._segment(f"{side}_foot", ankle, a[f"{side}_lower_leg"] - sign * FOOT_TURN)

            self.keypoints[f"{side}_shoulder"] = shoulder
            self.keypoints[f"{side}_elbow"] = elbow
            self.keypoints[f"{side}_wrist"] = wrist
            self.keypoints[f"{side}_hip"] = hip
            self.keypoints[f"{side}_knee"] = knee
            self.keypoints[f"{side}_ankle"] = ankle

    def keypoint_array(self) -> np.ndarray:
        return np.array([self.keypoints[k] for k in KEYPOINTS])


def chart_to_part_coords(surface: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Lateral part coordinate in [0, 1] of surface-chart coordinate ``v``."""
    lateral = np.array(v, dtype=np.float64)
    for part in PARTS:
        surfaces = PART_SURFACES[part]
        if len(surfaces) == 2:
            lateral = np.where(surface == surfaces[0], 0.5 * v, lateral)
            lateral = np.where(surface == surfaces[1], 0.5 + 0.5 * v, lateral)
    return lateral


def part_to_chart(part: str, along: np.ndarray, lateral: np.ndarray) -> Tuple:
    """
    Surface index and (u, v) for part coordinates.

    Returns:
        (surface, u, v) arrays shaped like the inputs
    """
    surfaces = PART_SURFACES[part]
    if len(surfaces) == 1:
        return np.full(np.shape(along), surfaces[0]), along, lateral
    second = lateral >= 0.5
    surface = np.where(second, surfaces[1], surfaces[0])
    v = np.where(second, 2.0 * lateral - 1.0, 2.0 * lateral)
    return surface, along, np.clip(v, 0.0, 1.0)


def _chart_tables() -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-surface part extent and per-part-pair joint positions.

    Returns:
        (length, width, joint_along, joint_lateral); ``joint_*[a, b]`` is
        where part ``b`` attaches, in the part coordinates of part ``a``
        (indices are part index + 1)
    """
    part_of = surface_part_table()
    length = np.zeros(NUM_SURFACES)
    width = np.zeros(NUM_SURFACES)
    for s in range(1, NUM_SURFACES):
        length[s], width[s] = PART_SIZE[part_kind(PARTS[part_of[s] - 1])]

    pose = Pose()
    n = NUM_PARTS + 1
    joint_along = np.zeros((n, n))
    joint_lateral = np.full((n, n), 0.5)
    for parent, child in PART_ADJACENCY:
        a, b = PARTS.index(parent) + 1, PARTS.index(child) + 1
        start, end, w = pose.segments[parent]
        axis = end - start
        side = normal(axis / np.linalg.norm(axis)) * w
        joint = pose.segments[child][0]
        joint_along[a, b] = np.clip(np.dot(joint - start, axis) / np.dot(axis, axis), 0.0, 1.0)
        joint_lateral[a, b] = np.clip(0.5 + np.dot(joint - start, side) / np.dot(side, side), 0.0, 1.0)
        # the child starts at the joint, mid-width
        joint_along[b, a] = 0.0
        joint_lateral[b, a] = 0.5
    return length, width, joint_along, joint_lateral


_CHARTS = _chart_tables()
_PART_OF = surface_part_table()
_ADJACENT = surface_adjacency()


def _chart_distance(
    surface: np.ndarray, along: np.ndarray, lateral: np.ndarray, to_along, to_lateral
) -> np.ndarray:
    length, width = _CHARTS[0][surface], _CHARTS[1][surface]
    return np.hypot((along - to_along) * length, (lateral - to_lateral) * width)


def geodesic_distance(
    s1: np.ndarray, u1: np.ndarray, v1: np.ndarray, s2: np.ndarray, u2: np.ndarray, v2: np.ndarray
) -> np.ndarray:
    """
    Distance proxy in metres between surface points, capped at ``GEODESIC_CAP``.

    Charts are flat: two points of one part are separated by their chart
    offset scaled to the part's length and width, which crosses the seam
    between the part's two surfaces. Points on parts sharing a joint are
    joined through that joint. Any other pair, or a pair involving
    background, is at the cap.
    """
    s1 = np.asarray(s1, dtype=np.int64)
    s2 = np.asarray(s2, dtype=np.int64)
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    lat1 = chart_to_part_coords(s1, np.asarray(v1, dtype=np.float64))
    lat2 = chart_to_part_coords(s2, np.asarray(v2, dtype=np.float64))
    p1, p2 = _PART_OF[s1], _PART_OF[s2]
    joint_along, joint_lateral = _CHARTS[2], _CHARTS[3]

    same_part = _chart_distance(s1, u1, lat1, u2, lat2)
    via_joint = _chart_distance(
        s1, u1, lat1, joint_along[p1, p2], joint_lateral[p1, p2]
    ) + _chart_distance(s2, u2, lat2, joint_along[p2, p1], joint_lateral[p2, p1])
    d = np.where(p1 == p2, same_part, via_joint)
    return np.where(_ADJACENT[s1, s2], np.minimum(d, GEODESIC_CAP), GEODESIC_CAP)
