"""Labeled synthetic landmark corpora for desk-scale pipeline testing.

Eight skeleton templates cover the canonical catalog archetypes: front and
back upper-body shots, full-body stances, close-ups, and a non-human class
that emits no pose at all.  Samples are the template plus seeded Gaussian
jitter, grouped into synthetic products with class-correlated ratings, so
clustering and ranking can be checked against known generator labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .landmarks import POSE2D17, POSE3D33, TOPOLOGIES, Keypoint, LandmarkRecord
from .ranking import ProductRecord

DEFAULT_NOISE_SIGMA = 0.02
DEFAULT_PRODUCT_GROUPING = 8
_WIDTH = 768
_HEIGHT = 1024

CLASS_DESCRIPTIONS = {
    0: "upper body till waist, nose visible, front",
    1: "upper body till waist, half turn, back",
    2: "full body, knee bent, front",
    3: "close up, chin visible, chest",
    4: "full body, wide stance",
    5: "non-human, tables, fabric closeup",
    6: "chin to torso",
    7: "full body, arms raised",
}

NO_POSE_CLASS = 5


@dataclass(frozen=True)
class PoseTemplate:
    """Canonical joint positions for one class, in normalized units.

    Joints may sit outside [0, 1]; those represent body parts cropped out of
    the frame and are emitted clamped to the frame edge with visibility 0.
    """

    class_id: int
    description: str
    joints: Mapping[str, tuple[float, float, float]]
    is_no_pose: bool = False


def _sym(joints, name, half, y, facing, z=0.0):
    joints[f"left_{name}"] = (0.5 + facing * half, y, z)
    joints[f"right_{name}"] = (0.5 - facing * half, y, z)


def _build_templates() -> dict[int, PoseTemplate]:
    templates: dict[int, PoseTemplate] = {}

    # class 0: upper body till waist, facing the camera
    j: dict[str, tuple[float, float, float]] = {"nose": (0.5, 0.16, -0.08)}
    _sym(j, "eye", 0.035, 0.13, +1, z=-0.06)
    _sym(j, "ear", 0.07, 0.15, +1)
    _sym(j, "shoulder", 0.16, 0.32, +1)
    _sym(j, "elbow", 0.21, 0.52, +1)
    _sym(j, "wrist", 0.23, 0.72, +1)
    _sym(j, "hip", 0.10, 0.78, +1)
    _sym(j, "knee", 0.10, 1.15, +1)
    _sym(j, "ankle", 0.105, 1.45, +1)
    templates[0] = PoseTemplate(0, CLASS_DESCRIPTIONS[0], j)

    # class 1: upper body, back view; shoulder halves mirror class 0 exactly
    # so the shoulder x-ratio is the reciprocal of the front template's
    j = {"nose": (0.5, 0.14, 0.10)}
    _sym(j, "eye", 0.02, 0.11, -1, z=0.08)
    _sym(j, "ear", 0.05, 0.13, -1)
    _sym(j, "shoulder", 0.16, 0.30, -1)
    _sym(j, "elbow", 0.14, 0.50, -1)
    _sym(j, "wrist", 0.15, 0.70, -1)
    _sym(j, "hip", 0.08, 0.80, -1)
    _sym(j, "knee", 0.08, 1.2, -1)
    _sym(j, "ankle", 0.085, 1.5, -1)
    templates[1] = PoseTemplate(1, CLASS_DESCRIPTIONS[1], j)

    # class 2: full body with the left knee bent forward
    j = {"nose": (0.5, 0.08, -0.05)}
    _sym(j, "eye", 0.03, 0.06, +1, z=-0.04)
    _sym(j, "ear", 0.055, 0.075, +1)
    _sym(j, "shoulder", 0.13, 0.20, +1)
    _sym(j, "elbow", 0.17, 0.34, +1)
    _sym(j, "wrist", 0.19, 0.47, +1)
    _sym(j, "hip", 0.085, 0.50, +1)
    j["left_knee"] = (0.62, 0.64, -0.22)
    j["right_knee"] = (0.43, 0.70, 0.0)
    j["left_ankle"] = (0.60, 0.78, -0.25)
    j["right_ankle"] = (0.43, 0.90, 0.0)
    templates[2] = PoseTemplate(2, CLASS_DESCRIPTIONS[2], j)

    # class 3: chest close-up, face at the top, everything below cropped
    j = {"nose": (0.5, 0.12, -0.15)}
    _sym(j, "eye", 0.08, 0.05, +1, z=-0.12)
    _sym(j, "ear", 0.16, 0.09, +1)
    _sym(j, "shoulder", 0.34, 0.62, +1)
    _sym(j, "elbow", 0.42, 1.05, +1)
    _sym(j, "wrist", 0.45, 1.35, +1)
    _sym(j, "hip", 0.17, 1.30, +1)
    _sym(j, "knee", 0.17, 1.7, +1)
    _sym(j, "ankle", 0.17, 2.1, +1)
    templates[3] = PoseTemplate(3, CLASS_DESCRIPTIONS[3], j)

    # class 4: full body, wide stance, arms down
    j = {"nose": (0.5, 0.07, -0.05)}
    _sym(j, "eye", 0.028, 0.05, +1, z=-0.04)
    _sym(j, "ear", 0.05, 0.065, +1)
    _sym(j, "shoulder", 0.12, 0.18, +1)
    _sym(j, "elbow", 0.15, 0.32, +1)
    _sym(j, "wrist", 0.13, 0.46, +1)
    _sym(j, "hip", 0.08, 0.47, +1)
    _sym(j, "knee", 0.13, 0.70, +1)
    _sym(j, "ankle", 0.17, 0.92, +1)
    templates[4] = PoseTemplate(4, CLASS_DESCRIPTIONS[4], j)

    # class 5: non-human content, no pose detected at all
    templates[5] = PoseTemplate(5, CLASS_DESCRIPTIONS[5], {}, is_no_pose=True)

    # class 6: chin to torso, head cropped above the chin
    j = {"nose": (0.5, 0.10, -0.10)}
    _sym(j, "eye", 0.04, -0.06, +1, z=-0.08)
    _sym(j, "ear", 0.075, -0.03, +1)
    _sym(j, "shoulder", 0.22, 0.28, +1)
    _sym(j, "elbow", 0.27, 0.55, +1)
    _sym(j, "wrist", 0.28, 1.15, +1)
    _sym(j, "hip", 0.13, 0.92, +1)
    _sym(j, "knee", 0.13, 1.35, +1)
    _sym(j, "ankle", 0.13, 1.7, +1)
    templates[6] = PoseTemplate(6, CLASS_DESCRIPTIONS[6], j)

    # class 7: full body, narrow stance, arms raised above the head
    j = {"nose": (0.5, 0.10, -0.05)}
    _sym(j, "eye", 0.03, 0.08, +1, z=-0.04)
    _sym(j, "ear", 0.05, 0.095, +1)
    _sym(j, "shoulder", 0.11, 0.22, +1)
    _sym(j, "elbow", 0.16, 0.13, +1, z=-0.06)
    _sym(j, "wrist", 0.18, 0.04, +1, z=-0.08)
    _sym(j, "hip", 0.075, 0.52, +1)
    _sym(j, "knee", 0.085, 0.72, +1)
    _sym(j, "ankle", 0.075, 0.92, +1)
    templates[7] = PoseTemplate(7, CLASS_DESCRIPTIONS[7], j)

    return templates


TEMPLATES = _build_templates()


def _derived_joints(base: Mapping[str, tuple[float, float, float]]) -> dict[str, tuple[float, float, float]]:
    """Fill in the 33-keypoint extras from the 17 base joints."""
    out = dict(base)
    nose = base["nose"]
    for side, sign in (("left", 1.0), ("right", -1.0)):
        ex, ey, ez = base[f"{side}_eye"]
        # inner leans toward the nose, outer away, whichever side the eye is on
        toward = -1.0 if ex >= nose[0] else 1.0
        out[f"{side}_eye_inner"] = (ex + 0.012 * toward, ey, ez)
        out[f"{side}_eye_outer"] = (ex - 0.012 * toward, ey, ez)
        out[f"mouth_{side}"] = (nose[0] + 0.03 * sign * _facing(base), nose[1] + 0.045, nose[2])
        wx, wy, wz = base[f"{side}_wrist"]
        outward = 1.0 if wx >= 0.5 else -1.0
        out[f"{side}_pinky"] = (wx + 0.02 * outward, wy + 0.03, wz)
        out[f"{side}_index"] = (wx + 0.025 * outward, wy + 0.025, wz)
        out[f"{side}_thumb"] = (wx + 0.012 * outward, wy + 0.015, wz)
        ax, ay, az = base[f"{side}_ankle"]
        out[f"{side}_heel"] = (ax, ay + 0.02, az)
        out[f"{side}_foot_index"] = (ax + 0.02 * (1.0 if ax >= 0.5 else -1.0), ay + 0.03, az)
    return out


def _facing(base: Mapping[str, tuple[float, float, float]]) -> float:
    return 1.0 if base["left_shoulder"][0] >= base["right_shoulder"][0] else -1.0


def generate_class_sample(
    class_id: int,
    noise_sigma: float,
    seed: int,
    index: int,
    topology: str = POSE3D33,
    image_id: str | None = None,
    product_id: str = "",
) -> LandmarkRecord:
    """One jittered sample of a template; deterministic per (seed, index)."""
    if class_id not in TEMPLATES:
        raise ValueError(f"unknown class {class_id}; valid classes are 0..7")
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    template = TEMPLATES[class_id]
    if image_id is None:
        image_id = f"img-c{class_id}-{index:05d}"

    if template.is_no_pose:
        return LandmarkRecord(
            image_id=image_id,
            product_id=product_id,
            topology=topology,
            width=_WIDTH,
            height=_HEIGHT,
            detected=False,
            keypoints=(),
        )

    top = TOPOLOGIES[topology]
    joints = template.joints if topology == POSE2D17 else _derived_joints(template.joints)
    rng = np.random.default_rng([abs(int(seed)), class_id, abs(int(index))])
    keypoints = []
    for name in top.keypoint_names:
        x, y, z = joints[name]
        x += rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
        y += rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
        if top.has_z and noise_sigma > 0:
            z += rng.normal(0.0, noise_sigma)
        visible = 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0
        px = min(max(x, 0.0), 1.0) * _WIDTH
        py = min(max(y, 0.0), 1.0) * _HEIGHT
        keypoints.append(
            Keypoint(
                x=px,
                y=py,
                z=z if top.has_z else None,
                visibility=1.0 if visible else 0.0,
            )
        )
    return LandmarkRecord(
        image_id=image_id,
        product_id=product_id,
        topology=topology,
        width=_WIDTH,
        height=_HEIGHT,
        detected=True,
        keypoints=tuple(keypoints),
    )


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters for one synthetic corpus."""

    classes: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    per_class: int = 100
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    topology: str = POSE3D33
    seed: int = 0
    product_grouping: int = DEFAULT_PRODUCT_GROUPING

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.product_grouping < 1:
            raise ValueError("product_grouping must be >= 1")
        for c in self.classes:
            if c not in TEMPLATES:
                raise ValueError(f"unknown class {c}; valid classes are 0..7")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")


def generate_corpus(
    spec: CorpusSpec,
) -> tuple[list[LandmarkRecord], dict[str, int], list[ProductRecord]]:
    """Generate records, ground-truth labels, and synthetic product metadata.

    Images are grouped into single-class products of ``product_grouping``
    images.  Ratings are seeded with class-correlated means so popularity
    carries class signal for ranking tests.
    """
    records: list[LandmarkRecord] = []
    ground_truth: dict[str, int] = {}
    products: list[ProductRecord] = []
    rating_rng = np.random.default_rng([abs(int(spec.seed)), 0x3A])

    for class_id in spec.classes:
        chunks = [
            range(start, min(start + spec.product_grouping, spec.per_class))
            for start in range(0, spec.per_class, spec.product_grouping)
        ]
        for chunk_no, chunk in enumerate(chunks):
            product_id = f"P{class_id}-{chunk_no:04d}"
            image_ids = []
            for index in chunk:
                record = generate_class_sample(
                    class_id,
                    spec.noise_sigma,
                    spec.seed,
                    index,
                    topology=spec.topology,
                    product_id=product_id,
                )
                records.append(record)
                ground_truth[record.image_id] = class_id
                image_ids.append(record.image_id)
            mean_rating = 2.0 + 0.35 * class_id
            rating = float(np.clip(rating_rng.normal(mean_rating, 0.3), 0.0, 5.0))
            reviews = int(rating_rng.integers(10, 2000))
            products.append(
                ProductRecord(
                    product_id=product_id,
                    category="apparel",
                    subcategory=f"sub-{class_id % 2}",
                    product_type=f"type-{class_id % 4}",
                    avg_rating=round(rating, 2),
                    num_reviews=reviews,
                    image_ids=tuple(image_ids),
                )
            )
    return records, ground_truth, products
