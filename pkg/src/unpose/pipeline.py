"""End-to-end training and inference flows.

Training: parse and normalize the landmark corpus, embed it, optionally fit
the autoencoder and re-encode, cluster with K-means, then fit the centroid
ranker from cohort metadata.  Inference: assign one product's images to the
trained centroids, report which centroids the imageset is missing, ordered by
predicted cohort popularity.  Evaluation compares detected missing sets with
human labels, reporting the count-ratio accuracy verbatim plus set precision
and recall.

Every stage failure is wrapped in :class:`StageError` carrying the stage
name.  A whole run is a pure function of (inputs, config, seed).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

import numpy as np

from .autoencoder import (
    AutoencoderParams,
    TrainingHyperparams,
    encode_matrix,
    init_autoencoder,
    train_autoencoder,
)
from .bundle_io import ModelBundle, TrainingSummary
from .clustering import Assignment, PoseKMeans, kmeans_fit
from .errors import StageError, TopologyMismatchError, UnposeError
from .features import EmbeddingMatrix, FeatureConfig, embed_corpus
from .landmarks import (
    POSE3D33,
    Diagnostic,
    LandmarkRecord,
    ParseResult,
    normalize,
    parse_landmark_records,
)
from .ranking import (
    CentroidScore,
    ProductRecord,
    build_training_rows,
    fit_ranker,
    popularity_target,
    score_centroids,
    sort_by_rank,
)

P_THRESHOLD = 5


@dataclass(frozen=True)
class TrainConfig:
    """Everything that parameterizes a training run."""

    k: int = 8
    seed: int = 0
    topology: str = POSE3D33
    use_autoencoder: bool = True
    threads: int = 1
    n_init: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    autoencoder_hyper: Optional[TrainingHyperparams] = None
    ranker_num_rounds: int = 100
    ranker_max_depth: int = 3
    ranker_learning_rate: float = 0.1
    ranker_min_samples_leaf: int = 5
    reference_min_images: Optional[int] = None
    reference_top_k: Optional[int] = None
    trained_at: Optional[int] = None

    def resolve_hyper(self) -> TrainingHyperparams:
        # The documented 0.1 starting rate destabilizes AdamW at desk scale
        # (rectifier units die within the first steps), so the pipeline
        # default is a gentler schedule; override via autoencoder_hyper.
        if self.autoencoder_hyper is not None:
            return self.autoencoder_hyper
        return TrainingHyperparams(learning_rate=0.01, min_learning_rate=0.0001, seed=self.seed)

    def resolve_trained_at(self) -> int:
        if self.trained_at is not None:
            return int(self.trained_at)
        return int(os.environ.get("SOURCE_DATE_EPOCH", "0"))


@dataclass
class MissingReport:
    """One product's coverage audit."""

    product_id: str
    n_images: int
    assignments: list[Assignment]
    present_centroids: set[int]
    missing_centroids: list[CentroidScore]  # descending score
    qualifies: bool

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "n_images": self.n_images,
            "qualifies": self.qualifies,
            "present": sorted(self.present_centroids),
            "missing": [
                {"centroid": s.centroid_index, "score": s.score} for s in self.missing_centroids
            ],
            "assignments": [
                {"image_id": a.image_id, "centroid": a.centroid_index, "distance": a.distance}
                for a in self.assignments
            ],
        }


@dataclass
class EvalSetResult:
    product_id: str
    detected_missing: list[int]
    true_missing: list[int]
    accuracy: Optional[float]
    precision: float
    recall: Optional[float]

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "detected_missing": self.detected_missing,
            "true_missing": self.true_missing,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass
class EvalReport:
    per_set: list[EvalSetResult]
    mean_accuracy: Optional[float]
    mean_precision: Optional[float]
    mean_recall: Optional[float]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_set": [r.to_dict() for r in self.per_set],
            "aggregate": {
                "mean_accuracy": self.mean_accuracy,
                "mean_precision": self.mean_precision,
                "mean_recall": self.mean_recall,
                "n_sets": len(self.per_set),
            },
            "warnings": self.warnings,
        }


def select_reference(
    products: Sequence[ProductRecord],
    min_images: int = 10,
    top_k: int = 3000,
) -> list[str]:
    """Most-popular products with enough images to serve as pose references."""
    if not products:
        raise UnposeError("no products given")
    qualified = [p for p in products if len(p.image_ids) >= min_images]
    if not qualified:
        raise UnposeError(
            f"no products have >= {min_images} images; relax --min-images or top_k thresholds"
        )
    qualified.sort(key=lambda p: (-popularity_target(p), p.product_id))
    return [p.product_id for p in qualified[:top_k]]


def _as_records(landmarks: Union[str, bytes, IO, Sequence[LandmarkRecord]]) -> list[LandmarkRecord]:
    if isinstance(landmarks, (list, tuple)):
        return list(landmarks)
    result: ParseResult = parse_landmark_records(landmarks)
    if result.errors:
        first = result.errors[0]
        raise UnposeError(
            f"{len(result.errors)} malformed landmark line(s); first: {first}"
        )
    return result.records


def _check_uniform_topology(records: Sequence[LandmarkRecord]) -> str:
    topologies = {r.topology for r in records}
    if len(topologies) > 1:
        raise TopologyMismatchError(f"mixed topologies in corpus: {sorted(topologies)}")
    return next(iter(topologies))


def _stage(name: str):
    """Decorator-free stage wrapper: run fn, wrap any failure with the stage name."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def train_flow(
    landmarks: Union[str, bytes, IO, Sequence[LandmarkRecord]],
    products: Sequence[ProductRecord],
    config: TrainConfig,
) -> ModelBundle:
    """Fit the full model: embeddings, optional autoencoder, centroids, ranker."""
    with _stage("parse"):
        records = _as_records(landmarks)
        if not records:
            raise UnposeError("no landmark records in input")

    with _stage("validate"):
        topology = _check_uniform_topology(records)
        if topology != config.topology:
            raise TopologyMismatchError(
                f"corpus topology {topology} does not match configured {config.topology}"
            )
        by_id = {p.product_id: p for p in products}
        for r in records:
            if r.product_id not in by_id:
                raise UnposeError(f"landmark image {r.image_id!r} references unknown product {r.product_id!r}")
        if config.reference_min_images is not None or config.reference_top_k is not None:
            keep = set(
                select_reference(
                    products,
                    min_images=config.reference_min_images or 10,
                    top_k=config.reference_top_k or 3000,
                )
            )
            records = [r for r in records if r.product_id in keep]
            if not records:
                raise UnposeError("reference selection removed every landmark record")

    with _stage("embed"):
        feature_config = FeatureConfig.for_topology(config.topology)
        normalized = [normalize(r) for r in records]
        matrix = embed_corpus(normalized, feature_config, threads=config.threads)

    autoencoder: Optional[AutoencoderParams] = None
    cluster_input = matrix
    if config.use_autoencoder:
        with _stage("autoencoder"):
            hyper = config.resolve_hyper()
            params = init_autoencoder(feature_config.dimension, hyper.seed)
            autoencoder, _trace = train_autoencoder(params, matrix, hyper)
            cluster_input = encode_matrix(autoencoder, matrix)

    with _stage("cluster"):
        centroid_model = kmeans_fit(
            cluster_input,
            config.k,
            seed=config.seed,
            max_iter=config.max_iter,
            tol=config.tol,
            n_init=config.n_init,
        )
        train_distances = _distances_to_assigned(
            centroid_model, cluster_input.matrix, centroid_model.labels_
        )
        assignments = [
            Assignment(
                centroid_index=int(label),
                distance=float(train_distances[i]),
                image_id=matrix.image_ids[i],
                product_id=matrix.product_ids[i],
            )
            for i, label in enumerate(centroid_model.labels_)
        ]

    with _stage("rank"):
        X, y, encoding = build_training_rows(assignments, products, n_clusters=config.k)
        rank_model = fit_ranker(
            X,
            y,
            encoding,
            num_rounds=config.ranker_num_rounds,
            max_depth=config.ranker_max_depth,
            learning_rate=config.ranker_learning_rate,
            min_samples_leaf=config.ranker_min_samples_leaf,
        )

    summary = TrainingSummary(
        n_products=len(products),
        n_images=len(records),
        k=config.k,
        objective=float(centroid_model.inertia_),
        trained_at=config.resolve_trained_at(),
    )
    return ModelBundle(
        feature_config=feature_config,
        centroid_model=centroid_model,
        rank_model=rank_model,
        autoencoder=autoencoder,
        training_summary=summary,
    )


def _embed_for_bundle(bundle: ModelBundle, records: Sequence[LandmarkRecord]) -> EmbeddingMatrix:
    normalized = [normalize(r) for r in records]
    matrix = embed_corpus(normalized, bundle.feature_config)
    if bundle.autoencoder is not None:
        matrix = encode_matrix(bundle.autoencoder, matrix)
    return matrix


def infer_flow(
    bundle: ModelBundle,
    subject_landmarks: Sequence[LandmarkRecord],
    product_meta: ProductRecord,
    p_threshold: int = P_THRESHOLD,
) -> MissingReport:
    """Audit one product's imageset against the trained pose classes."""
    records = list(subject_landmarks)
    for r in records:
        if r.product_id != product_meta.product_id:
            raise UnposeError(
                f"landmark image {r.image_id!r} belongs to {r.product_id!r}, "
                f"not {product_meta.product_id!r}"
            )

    # number of *fitted* centroids: duplicate merges can leave fewer than the
    # configured n_clusters, and merged-away ids can never be assigned
    k = bundle.centroid_model.cluster_centers_.shape[0]
    all_centroids = set(range(k))
    if not records:
        missing_scores = score_centroids(bundle.rank_model, product_meta, sorted(all_centroids))
        ordered = _ordered_scores(missing_scores)
        return MissingReport(
            product_id=product_meta.product_id,
            n_images=0,
            assignments=[],
            present_centroids=set(),
            missing_centroids=ordered,
            qualifies=True,
        )

    matrix = _embed_for_bundle(bundle, records)
    labels = bundle.centroid_model.predict(matrix.matrix)
    distances = _distances_to_assigned(bundle.centroid_model, matrix.matrix, labels)
    assignments = [
        Assignment(
            centroid_index=int(label),
            distance=float(dist),
            image_id=matrix.image_ids[i],
            product_id=matrix.product_ids[i],
        )
        for i, (label, dist) in enumerate(zip(labels, distances))
    ]
    present = {a.centroid_index for a in assignments}
    missing = sorted(all_centroids - present)
    missing_scores = score_centroids(bundle.rank_model, product_meta, missing)
    return MissingReport(
        product_id=product_meta.product_id,
        n_images=len(records),
        assignments=assignments,
        present_centroids=present,
        missing_centroids=_ordered_scores(missing_scores),
        qualifies=len(records) < p_threshold,
    )


def _ordered_scores(scores: list[CentroidScore]) -> list[CentroidScore]:
    by_index = {s.centroid_index: s for s in scores}
    return [by_index[i] for i in sort_by_rank(scores)]


def _distances_to_assigned(model: PoseKMeans, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from each row to its assigned centroid."""
    diffs = X - model.cluster_centers_[labels]
    return np.einsum("ij,ij->i", diffs, diffs)


def evaluate(
    bundle: ModelBundle,
    labeled_sets: Sequence[tuple[Sequence[LandmarkRecord], ProductRecord, set[int]]],
    p_threshold: int = P_THRESHOLD,
) -> EvalReport:
    """Score detected missing sets against human labels.

    Per set, accuracy is the verbatim count ratio |detected| / |true| (it can
    exceed 1 on over-detection), with set precision and recall alongside.
    Sets with empty true_missing have undefined accuracy and recall and are
    left out of those means with a warning.
    """
    k = bundle.centroid_model.cluster_centers_.shape[0]
    results: list[EvalSetResult] = []
    warnings: list[str] = []
    for records, product_meta, true_missing in labeled_sets:
        for c in true_missing:
            if not 0 <= c < k:
                raise UnposeError(
                    f"label for {product_meta.product_id!r} references centroid {c}, "
                    f"valid range is 0..{k - 1}"
                )
        report = infer_flow(bundle, records, product_meta, p_threshold=p_threshold)
        detected = {s.centroid_index for s in report.missing_centroids}
        overlap = detected & true_missing
        if true_missing:
            accuracy = len(detected) / len(true_missing)
            recall: Optional[float] = len(overlap) / len(true_missing)
        else:
            accuracy = None
            recall = None
            warnings.append(
                f"{product_meta.product_id}: empty true_missing, accuracy/recall excluded from means"
            )
        precision = len(overlap) / len(detected) if detected else 1.0
        results.append(
            EvalSetResult(
                product_id=product_meta.product_id,
                detected_missing=sorted(detected),
                true_missing=sorted(true_missing),
                accuracy=accuracy,
                precision=precision,
                recall=recall,
            )
        )

    def mean_of(values: list[Optional[float]]) -> Optional[float]:
        defined = [v for v in values if v is not None]
        return sum(defined) / len(defined) if defined else None

    return EvalReport(
        per_set=results,
        mean_accuracy=mean_of([r.accuracy for r in results]),
        mean_precision=mean_of([r.precision for r in results]),
        mean_recall=mean_of([r.recall for r in results]),
        warnings=warnings,
    )


def parse_product_records(stream: Union[str, bytes, IO]) -> tuple[list[ProductRecord], list[Diagnostic]]:
    """Parse the line-delimited product metadata file."""
    lines = _read_lines(stream)
    products: list[ProductRecord] = []
    diagnostics: list[Diagnostic] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
            product = _product_from_obj(obj)
        except ValueError as exc:
            diagnostics.append(Diagnostic("error", str(exc), line=lineno))
            continue
        if product.product_id in seen:
            diagnostics.append(
                Diagnostic("error", f"duplicate product_id '{product.product_id}'", line=lineno)
            )
            continue
        seen.add(product.product_id)
        products.append(product)
    return products, diagnostics


def _product_from_obj(obj) -> ProductRecord:
    if not isinstance(obj, dict):
        raise ValueError("product line must be an object")
    required = {"product_id", "category", "subcategory", "product_type", "avg_rating", "num_reviews", "image_ids"}
    missing = required - obj.keys()
    if missing:
        raise ValueError(f"missing field(s): {', '.join(sorted(missing))}")
    for name in ("product_id", "category", "subcategory", "product_type"):
        if not isinstance(obj[name], str):
            raise ValueError(f"field '{name}' must be a string")
    avg_rating = obj["avg_rating"]
    if isinstance(avg_rating, bool) or not isinstance(avg_rating, (int, float)) or not math.isfinite(avg_rating):
        raise ValueError("avg_rating must be a finite number")
    num_reviews = obj["num_reviews"]
    if isinstance(num_reviews, bool) or not isinstance(num_reviews, int):
        raise ValueError("num_reviews must be an integer")
    image_ids = obj["image_ids"]
    if not isinstance(image_ids, list) or not all(isinstance(i, str) for i in image_ids):
        raise ValueError("image_ids must be a list of strings")
    return ProductRecord(
        product_id=obj["product_id"],
        category=obj["category"],
        subcategory=obj["subcategory"],
        product_type=obj["product_type"],
        avg_rating=float(avg_rating),
        num_reviews=num_reviews,
        image_ids=tuple(image_ids),
    )


def parse_label_records(stream: Union[str, bytes, IO]) -> tuple[dict[str, set[int]], list[Diagnostic]]:
    """Parse the evaluation label file: product_id plus true_missing indices."""
    lines = _read_lines(stream)
    labels: dict[str, set[int]] = {}
    diagnostics: list[Diagnostic] = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
            if not isinstance(obj, dict):
                raise ValueError("label line must be an object")
            if "product_id" not in obj or "true_missing" not in obj:
                raise ValueError("label line needs 'product_id' and 'true_missing'")
            pid = obj["product_id"]
            raw = obj["true_missing"]
            if not isinstance(pid, str):
                raise ValueError("product_id must be a string")
            if not isinstance(raw, list) or not all(
                isinstance(i, int) and not isinstance(i, bool) for i in raw
            ):
                raise ValueError("true_missing must be a list of integers")
        except ValueError as exc:
            diagnostics.append(Diagnostic("error", str(exc), line=lineno))
            continue
        if pid in labels:
            diagnostics.append(Diagnostic("error", f"duplicate label for '{pid}'", line=lineno))
            continue
        labels[pid] = set(raw)
    return labels, diagnostics


def _read_lines(stream: Union[str, bytes, IO]) -> list[str]:
    if isinstance(stream, bytes):
        return stream.decode("utf-8").splitlines()
    if isinstance(stream, str):
        return stream.splitlines()
    data = stream.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def serialize_missing_report(report: MissingReport) -> str:
    return json.dumps(report.to_dict(), separators=(",", ":"), sort_keys=True)


def serialize_eval_report(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), separators=(",", ":"), sort_keys=True)
