"""Unpose: discover canonical product-photo pose classes and audit imagesets.

The pipeline embeds pose landmarks into fixed-layout feature vectors,
optionally compresses them with a contrastive autoencoder, clusters them with
K-means to discover pose classes, ranks those classes by cohort popularity
with gradient-boosted trees, and reports which classes each product's
imageset is missing, most important first.
"""

from .autoencoder import (
    BOTTLENECK_DIM,
    AdamWOptimizer,
    AutoencoderParams,
    ContrastiveAutoencoder,
    ReducedEmbedding,
    TrainingHyperparams,
    encode,
    encode_array,
    encode_matrix,
    init_autoencoder,
    loss_and_gradients,
    train_autoencoder,
)
from .bundle_io import BUNDLE_VERSION, ModelBundle, TrainingSummary, load_bundle, save_bundle
from .clustering import (
    Assignment,
    PoseKMeans,
    assign_all,
    kmeans_fit,
    kmeans_objective,
    nearest_centroid,
)
from .errors import (
    BundleVersionError,
    CorruptBundleError,
    FingerprintMismatchError,
    StageError,
    StreamError,
    TopologyMismatchError,
    TrainingDivergedError,
    UnposeError,
)
from .features import (
    EmbeddingMatrix,
    FeatureConfig,
    PoseEmbedding,
    build_embedding,
    embed_corpus,
    safe_ratio,
)
from .landmarks import (
    POSE2D17,
    POSE3D33,
    TOPOLOGIES,
    Diagnostic,
    Keypoint,
    LandmarkRecord,
    NormalizedLandmarkSet,
    ParseResult,
    Topology,
    normalize,
    parse_landmark_records,
    serialize_landmark_record,
    serialize_landmark_records,
    validate_topology,
)
from .pipeline import (
    P_THRESHOLD,
    EvalReport,
    EvalSetResult,
    MissingReport,
    TrainConfig,
    evaluate,
    infer_flow,
    parse_label_records,
    parse_product_records,
    select_reference,
    serialize_eval_report,
    serialize_missing_report,
    train_flow,
)
from .ranking import (
    CentroidScore,
    CohortEncoding,
    GradientBoostedRegressor,
    ProductRecord,
    RankModel,
    build_training_rows,
    fit_ranker,
    popularity_target,
    predict_rank_model,
    score_centroids,
    sort_by_rank,
)
from .synth import (
    CLASS_DESCRIPTIONS,
    NO_POSE_CLASS,
    TEMPLATES,
    CorpusSpec,
    PoseTemplate,
    generate_class_sample,
    generate_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "AutoencoderParams",
    "AdamWOptimizer",
    "Assignment",
    "BOTTLENECK_DIM",
    "BUNDLE_VERSION",
    "BundleVersionError",
    "CLASS_DESCRIPTIONS",
    "CentroidScore",
    "CohortEncoding",
    "ContrastiveAutoencoder",
    "CorpusSpec",
    "CorruptBundleError",
    "Diagnostic",
    "EmbeddingMatrix",
    "EvalReport",
    "EvalSetResult",
    "FeatureConfig",
    "FingerprintMismatchError",
    "GradientBoostedRegressor",
    "Keypoint",
    "LandmarkRecord",
    "MissingReport",
    "ModelBundle",
    "NO_POSE_CLASS",
    "NormalizedLandmarkSet",
    "P_THRESHOLD",
    "POSE2D17",
    "POSE3D33",
    "ParseResult",
    "PoseEmbedding",
    "PoseKMeans",
    "PoseTemplate",
    "ProductRecord",
    "RankModel",
    "ReducedEmbedding",
    "StageError",
    "StreamError",
    "TEMPLATES",
    "TOPOLOGIES",
    "Topology",
    "TopologyMismatchError",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingHyperparams",
    "TrainingSummary",
    "UnposeError",
    "assign_all",
    "build_embedding",
    "build_training_rows",
    "embed_corpus",
    "encode",
    "encode_array",
    "encode_matrix",
    "evaluate",
    "fit_ranker",
    "generate_class_sample",
    "generate_corpus",
    "infer_flow",
    "init_autoencoder",
    "kmeans_fit",
    "kmeans_objective",
    "load_bundle",
    "loss_and_gradients",
    "nearest_centroid",
    "normalize",
    "parse_label_records",
    "parse_landmark_records",
    "parse_product_records",
    "popularity_target",
    "predict_rank_model",
    "safe_ratio",
    "save_bundle",
    "score_centroids",
    "select_reference",
    "serialize_eval_report",
    "serialize_landmark_record",
    "serialize_landmark_records",
    "serialize_missing_report",
    "sort_by_rank",
    "train_autoencoder",
    "train_flow",
    "validate_topology",
]
