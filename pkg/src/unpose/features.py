"""Pose embeddings engineered from normalized landmarks.

One fixed layout per topology: 61 features for POSE2D17, 77 for POSE3D33.
Raw coordinates are kept alongside left/right ratio features (which separate
front from back views), bounding-box and skeletal-span summaries, and, for the
3D topology, depth statistics that separate close-ups from distant poses.
The exact layout is one consistent realization of "coordinate ratio" features
and is frozen by the config fingerprint; results from other realizations are
not comparable bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import TopologyMismatchError, UnposeError
from .landmarks import POSE2D17, POSE3D33, TOPOLOGIES, NormalizedLandmarkSet

DEFAULT_RATIO_CLAMP = 10.0
DEFAULT_RATIO_EPSILON = 1e-6

# Labels for the symmetric-pair prefix used by ratio features, aligned with
# Topology.symmetric_pairs order.
_PAIR_LABELS = ("eyes", "ears", "shoulders", "elbows", "wrists", "hips", "knees", "ankles")
_RATIO_PAIR_COUNT = 8


def _feature_names(topology_name: str) -> tuple[str, ...]:
    topology = TOPOLOGIES[topology_name]
    names: list[str] = []
    for kp_name in topology.keypoint_names:
        names.append(f"x_{kp_name}")
        names.append(f"y_{kp_name}")
    if topology_name == POSE2D17:
        for label in _PAIR_LABELS:
            names.append(f"xratio_{label}")
            names.append(f"yratio_{label}")
        names += [
            "bbox_width",
            "bbox_height",
            "bbox_aspect",
            "bbox_center_x",
            "bbox_center_y",
        ]
        names += [
            "span_shoulders",
            "span_hips",
            "dist_shoulder_mid_hip_mid",
            "dist_nose_shoulder_mid",
            "dist_left_hip_ankle",
            "dist_right_hip_ankle",
        ]
    elif topology_name == POSE3D33:
        for label in _PAIR_LABELS:
            names.append(f"xratio_{label}")
        names += ["z_mean", "z_nose_minus_shoulders", "z_span"]
    else:
        raise ValueError(f"unknown topology {topology_name!r}")
    return tuple(names)


@dataclass(frozen=True)
class FeatureConfig:
    """Frozen description of the embedding layout for one topology."""

    topology: str
    dimension: int
    ratio_clamp: float
    ratio_epsilon: float
    feature_names: tuple[str, ...]
    fingerprint: str

    @classmethod
    def for_topology(
        cls,
        topology: str,
        ratio_clamp: float = DEFAULT_RATIO_CLAMP,
        ratio_epsilon: float = DEFAULT_RATIO_EPSILON,
    ) -> "FeatureConfig":
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        names = _feature_names(topology)
        fingerprint = _fingerprint(topology, ratio_clamp, ratio_epsilon, names)
        return cls(
            topology=topology,
            dimension=len(names),
            ratio_clamp=float(ratio_clamp),
            ratio_epsilon=float(ratio_epsilon),
            feature_names=names,
            fingerprint=fingerprint,
        )

    def to_dict(self) -> dict:
        return {
            "topology": self.topology,
            "dimension": self.dimension,
            "ratio_clamp": self.ratio_clamp,
            "ratio_epsilon": self.ratio_epsilon,
            "feature_names": list(self.feature_names),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureConfig":
        """Rebuild a config, recomputing the fingerprint from its content.

        The stored fingerprint is deliberately ignored here; callers that need
        tamper detection compare it against the recomputed one.
        """
        names = tuple(obj["feature_names"])
        config = cls(
            topology=obj["topology"],
            dimension=int(obj["dimension"]),
            ratio_clamp=float(obj["ratio_clamp"]),
            ratio_epsilon=float(obj["ratio_epsilon"]),
            feature_names=names,
            fingerprint=_fingerprint(
                obj["topology"], float(obj["ratio_clamp"]), float(obj["ratio_epsilon"]), names
            ),
        )
        return config


def _fingerprint(topology, ratio_clamp, ratio_epsilon, names) -> str:
    payload = json.dumps(
        {
            "topology": topology,
            "ratio_clamp": ratio_clamp,
            "ratio_epsilon": ratio_epsilon,
            "feature_names": list(names),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PoseEmbedding:
    """One image's feature vector; the all-zero vector is the no-pose sentinel."""

    image_id: str
    product_id: str
    vector: np.ndarray
    is_no_pose: bool


@dataclass
class EmbeddingMatrix:
    """Row-major stack of pose embeddings, input order preserved."""

    image_ids: list[str]
    product_ids: list[str]
    matrix: np.ndarray  # (n, dimension) float64
    is_no_pose: np.ndarray  # (n,) bool
    fingerprint: str

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def row(self, i: int) -> PoseEmbedding:
        return PoseEmbedding(
            image_id=self.image_ids[i],
            product_id=self.product_ids[i],
            vector=self.matrix[i],
            is_no_pose=bool(self.is_no_pose[i]),
        )


def safe_ratio(numerator: float, denominator: float, config: FeatureConfig) -> float:
    """Total-function division: saturates at ``ratio_clamp`` near zero denominators."""
    return _safe_ratio(numerator, denominator, config.ratio_clamp, config.ratio_epsilon)


def _safe_ratio(numerator: float, denominator: float, clamp: float, epsilon: float) -> float:
    if abs(denominator) < epsilon:
        if numerator == 0.0:
            return 0.0
        return math.copysign(clamp, numerator)
    value = numerator / denominator
    return min(max(value, -clamp), clamp)


def build_embedding(lm: NormalizedLandmarkSet, config: FeatureConfig) -> PoseEmbedding:
    """Compute the pose embedding for one normalized landmark set.

    ``detected=false`` inputs map to the reserved all-zero sentinel so that
    every non-human image lands in the same cluster downstream.
    """
    if lm.topology != config.topology:
        raise TopologyMismatchError(
            f"record {lm.image_id!r} has topology {lm.topology}, config expects {config.topology}"
        )
    if not lm.detected:
        return PoseEmbedding(
            image_id=lm.image_id,
            product_id=lm.product_id,
            vector=np.zeros(config.dimension, dtype=np.float64),
            is_no_pose=True,
        )

    topology = TOPOLOGIES[config.topology]
    if len(lm.coords) != topology.keypoint_count:
        raise UnposeError(
            f"record {lm.image_id!r} has {len(lm.coords)} keypoints, "
            f"expected {topology.keypoint_count}"
        )
    xs = np.array([c.x for c in lm.coords], dtype=np.float64)
    ys = np.array([c.y for c in lm.coords], dtype=np.float64)

    values: list[float] = []
    for i in range(topology.keypoint_count):
        values.append(xs[i])
        values.append(ys[i])

    clamp, eps = config.ratio_clamp, config.ratio_epsilon
    pairs = topology.symmetric_pairs[:_RATIO_PAIR_COUNT]
    if config.topology == POSE2D17:
        for left, right in pairs:
            values.append(_safe_ratio(xs[left], xs[right], clamp, eps))
            values.append(_safe_ratio(ys[left], ys[right], clamp, eps))
        bbox_w = float(xs.max() - xs.min())
        bbox_h = float(ys.max() - ys.min())
        values += [
            bbox_w,
            bbox_h,
            _safe_ratio(bbox_w, bbox_h, clamp, eps),
            float((xs.max() + xs.min()) / 2.0),
            float((ys.max() + ys.min()) / 2.0),
        ]
        idx = topology.index
        ls, rs = idx("left_shoulder"), idx("right_shoulder")
        lh, rh = idx("left_hip"), idx("right_hip")
        la, ra = idx("left_ankle"), idx("right_ankle")
        nose = idx("nose")
        shoulder_mid = ((xs[ls] + xs[rs]) / 2.0, (ys[ls] + ys[rs]) / 2.0)
        hip_mid = ((xs[lh] + xs[rh]) / 2.0, (ys[lh] + ys[rh]) / 2.0)
        values += [
            math.hypot(xs[ls] - xs[rs], ys[ls] - ys[rs]),
            math.hypot(xs[lh] - xs[rh], ys[lh] - ys[rh]),
            math.hypot(shoulder_mid[0] - hip_mid[0], shoulder_mid[1] - hip_mid[1]),
            math.hypot(xs[nose] - shoulder_mid[0], ys[nose] - shoulder_mid[1]),
            math.hypot(xs[lh] - xs[la], ys[lh] - ys[la]),
            math.hypot(xs[rh] - xs[ra], ys[rh] - ys[ra]),
        ]
    else:  # POSE3D33
        for left, right in pairs:
            values.append(_safe_ratio(xs[left], xs[right], clamp, eps))
        zs = np.array([c.z for c in lm.coords], dtype=np.float64)
        idx = topology.index
        shoulders_z = (zs[idx("left_shoulder")] + zs[idx("right_shoulder")]) / 2.0
        values += [
            float(zs.mean()),
            float(zs[idx("nose")] - shoulders_z),
            float(zs.max() - zs.min()),
        ]

    vector = np.asarray(values, dtype=np.float64)
    if vector.shape[0] != config.dimension:
        raise UnposeError(
            f"internal layout error: built {vector.shape[0]} features, "
            f"config declares {config.dimension}"
        )
    if not np.all(np.isfinite(vector)):
        raise UnposeError(f"record {lm.image_id!r} produced non-finite features")
    return PoseEmbedding(
        image_id=lm.image_id,
        product_id=lm.product_id,
        vector=vector,
        is_no_pose=False,
    )


def embed_corpus(
    records: list[NormalizedLandmarkSet],
    config: FeatureConfig,
    threads: int = 1,
) -> EmbeddingMatrix:
    """Embed every record, preserving input order.

    Per-record failures are re-raised with the offending ``image_id`` attached.
    With ``threads > 1`` records are embedded in a thread pool; the ordered map
    keeps the output identical to the single-threaded run.
    """

    def embed_one(lm: NormalizedLandmarkSet) -> PoseEmbedding:
        try:
            return build_embedding(lm, config)
        except UnposeError:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise UnposeError(f"embedding failed for {lm.image_id!r}: {exc}") from exc

    if threads > 1 and len(records) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            embeddings = list(pool.map(embed_one, records))
    else:
        embeddings = [embed_one(lm) for lm in records]

    n = len(embeddings)
    matrix = np.zeros((n, config.dimension), dtype=np.float64)
    flags = np.zeros(n, dtype=bool)
    for i, emb in enumerate(embeddings):
        matrix[i] = emb.vector
        flags[i] = emb.is_no_pose
    return EmbeddingMatrix(
        image_ids=[e.image_id for e in embeddings],
        product_ids=[e.product_id for e in embeddings],
        matrix=matrix,
        is_no_pose=flags,
        fingerprint=config.fingerprint,
    )
