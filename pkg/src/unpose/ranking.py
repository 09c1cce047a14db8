"""Centroid ranking by cohort popularity.

Every reference image becomes a training row: one-hot centroid index plus
one-hot cohort attributes (category, subcategory, product type), with a
popularity target derived from the product's rating and review count.  A
small gradient-boosted-trees regressor fit to those rows scores candidate
centroids for a cohort at inference time; corpora too small to support trees
fall back to a frequency ranker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import Assignment
from .errors import UnposeError

MIN_ROWS_FOR_TREES = 50


@dataclass(frozen=True)
class ProductRecord:
    """Catalog metadata for one product."""

    product_id: str
    category: str
    subcategory: str
    product_type: str
    avg_rating: float
    num_reviews: int
    image_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.avg_rating <= 5.0:
            raise ValueError(f"avg_rating must be in [0, 5], got {self.avg_rating}")
        if self.num_reviews < 0:
            raise ValueError(f"num_reviews must be >= 0, got {self.num_reviews}")


@dataclass(frozen=True)
class CentroidScore:
    centroid_index: int
    score: float


def popularity_target(product: ProductRecord) -> float:
    """avg_rating times log10(1 + num_reviews); monotone in both inputs."""
    return product.avg_rating * math.log10(1.0 + product.num_reviews)


class CohortEncoding:
    """One-hot layout: centroid block, then one block per cohort attribute.

    Each attribute block has a position for every value seen in training plus
    a reserved trailing position for unseen values, so inference never fails
    on a new category.
    """

    _ATTRS = ("category", "subcategory", "product_type")

    def __init__(self, n_clusters: int, products: Iterable[ProductRecord]):
        if n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        self.n_clusters = int(n_clusters)
        products = list(products)
        self.value_maps: dict[str, dict[str, int]] = {}
        for attr in self._ATTRS:
            values = sorted({getattr(p, attr) for p in products})
            self.value_maps[attr] = {v: i for i, v in enumerate(values)}

    @property
    def feature_length(self) -> int:
        return self.n_clusters + sum(len(m) + 1 for m in self.value_maps.values())

    def feature_names(self) -> list[str]:
        names = [f"centroid_{i}" for i in range(self.n_clusters)]
        for attr in self._ATTRS:
            values = sorted(self.value_maps[attr], key=self.value_maps[attr].get)
            names.extend(f"{attr}={v}" for v in values)
            names.append(f"{attr}=<unknown>")
        return names

    def encode(self, centroid_index: int, category: str, subcategory: str, product_type: str) -> np.ndarray:
        if not 0 <= centroid_index < self.n_clusters:
            raise ValueError(f"centroid index {centroid_index} out of range [0, {self.n_clusters})")
        row = np.zeros(self.feature_length, dtype=np.float64)
        row[centroid_index] = 1.0
        offset = self.n_clusters
        for attr, value in zip(self._ATTRS, (category, subcategory, product_type)):
            m = self.value_maps[attr]
            row[offset + m.get(value, len(m))] = 1.0
            offset += len(m) + 1
        return row

    def to_dict(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "values": {
                attr: sorted(m, key=m.get) for attr, m in self.value_maps.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CohortEncoding":
        enc = cls.__new__(cls)
        enc.n_clusters = int(d["n_clusters"])
        enc.value_maps = {
            attr: {v: i for i, v in enumerate(values)}
            for attr, values in d["values"].items()
        }
        return enc


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.5
    left: int = -1
    right: int = -1
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _fit_tree(
    X: np.ndarray,
    residuals: np.ndarray,
    max_depth: int,
    min_samples_leaf: int,
) -> list[_TreeNode]:
    """Greedy variance-reduction tree over one-hot features (threshold 0.5)."""
    nodes: list[_TreeNode] = []

    def grow(indices: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append(_TreeNode())
        r = residuals[indices]
        mean = float(r.mean())
        if depth >= max_depth or indices.size < 2 * min_samples_leaf:
            nodes[node_id].value = mean
            return node_id
        on = X[indices] > 0.5
        count_on = on.sum(axis=0)
        count_off = indices.size - count_on
        sum_on = r @ on
        sum_off = r.sum() - sum_on
        valid = (count_on >= min_samples_leaf) & (count_off >= min_samples_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(
                valid,
                sum_on**2 / np.maximum(count_on, 1)
                + sum_off**2 / np.maximum(count_off, 1)
                - r.sum() ** 2 / indices.size,
                -np.inf,
            )
        best = int(np.argmax(gain))
        if not valid[best] or gain[best] <= 1e-12:
            nodes[node_id].value = mean
            return node_id
        mask = on[:, best]
        nodes[node_id].feature = best
        nodes[node_id].threshold = 0.5
        nodes[node_id].left = grow(indices[~mask], depth + 1)
        nodes[node_id].right = grow(indices[mask], depth + 1)
        return node_id

    grow(np.arange(X.shape[0]), 0)
    return nodes


def _tree_depth(nodes: Sequence[_TreeNode], node_id: int = 0) -> int:
    node = nodes[node_id]
    if node.is_leaf:
        return 0
    return 1 + max(_tree_depth(nodes, node.left), _tree_depth(nodes, node.right))


def _tree_predict(nodes: Sequence[_TreeNode], X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    for i, x in enumerate(X):
        node = nodes[0]
        while not node.is_leaf:
            node = nodes[node.right if x[node.feature] > node.threshold else node.left]
        out[i] = node.value
    return out


class GradientBoostedRegressor(BaseEstimator, RegressorMixin):
    """Squared-error gradient boosting over one-hot feature vectors.

    base_score is the target mean; each round fits a depth-limited regression
    tree to the residuals with greedy variance-reduction splits at threshold
    0.5.  Deterministic given row order; ties in split gain go to the lowest
    feature index.
    """

    def __init__(self, num_rounds=100, max_depth=3, learning_rate=0.1, min_samples_leaf=5):
        self.num_rounds = num_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 rows to fit")
        self.base_score_ = float(y.mean())
        self.trees_: list[list[_TreeNode]] = []
        self.train_mse_: list[float] = []
        if np.all(y == y[0]):
            return self
        pred = np.full(y.shape[0], self.base_score_)
        for _ in range(self.num_rounds):
            tree = _fit_tree(X, y - pred, self.max_depth, self.min_samples_leaf)
            self.trees_.append(tree)
            pred += self.learning_rate * _tree_predict(tree, X)
            self.train_mse_.append(float(np.mean((y - pred) ** 2)))
        return self

    def predict(self, X):
        check_is_fitted(self, "base_score_")
        X = check_array(X, dtype=np.float64)
        pred = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_:
            pred += self.learning_rate * _tree_predict(tree, X)
        return pred


@dataclass
class RankModel:
    """Trained ranker: either a boosted ensemble or a frequency fallback."""

    kind: str  # "gbdt" or "frequency"
    encoding: CohortEncoding
    base_score: float = 0.0
    learning_rate: float = 0.1
    trees: list[list[_TreeNode]] = field(default_factory=list)
    frequency_scores: Optional[np.ndarray] = None

    @property
    def num_rounds(self) -> int:
        return len(self.trees)

    def to_state(self) -> dict:
        state = {
            "kind": self.kind,
            "encoding": self.encoding.to_dict(),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "trees": [
                [[n.feature, n.threshold, n.left, n.right, n.value] for n in tree]
                for tree in self.trees
            ],
        }
        if self.frequency_scores is not None:
            state["frequency_scores"] = [float(s) for s in self.frequency_scores]
        return state

    @classmethod
    def from_state(cls, state: Mapping) -> "RankModel":
        trees = [
            [
                _TreeNode(feature=int(f), threshold=float(t), left=int(l), right=int(r), value=float(v))
                for f, t, l, r, v in tree
            ]
            for tree in state["trees"]
        ]
        freq = state.get("frequency_scores")
        return cls(
            kind=state["kind"],
            encoding=CohortEncoding.from_dict(state["encoding"]),
            base_score=float(state["base_score"]),
            learning_rate=float(state["learning_rate"]),
            trees=trees,
            frequency_scores=None if freq is None else np.asarray(freq, dtype=np.float64),
        )


def build_training_rows(
    assignments: Sequence[Assignment],
    products: Sequence[ProductRecord],
    n_clusters: Optional[int] = None,
    encoding: Optional[CohortEncoding] = None,
) -> tuple[np.ndarray, np.ndarray, CohortEncoding]:
    """One (features, target) row per assigned image.

    Features are one-hot(centroid) concatenated with one-hot cohort blocks;
    the target is the product's popularity target.
    """
    by_id = {p.product_id: p for p in products}
    if encoding is None:
        if n_clusters is None:
            n_clusters = max((a.centroid_index for a in assignments), default=0) + 1
        encoding = CohortEncoding(n_clusters, products)
    X = np.zeros((len(assignments), encoding.feature_length), dtype=np.float64)
    y = np.zeros(len(assignments), dtype=np.float64)
    for i, a in enumerate(assignments):
        product = by_id.get(a.product_id)
        if product is None:
            raise UnposeError(f"assignment references unknown product_id '{a.product_id}'")
        X[i] = encoding.encode(a.centroid_index, product.category, product.subcategory, product.product_type)
        y[i] = popularity_target(product)
    return X, y, encoding


def _frequency_scores(X: np.ndarray, y: np.ndarray, n_clusters: int) -> np.ndarray:
    """Centroid occurrence counts among the top-rated half of the rows."""
    if X.shape[0] == 0:
        return np.zeros(n_clusters, dtype=np.float64)
    cutoff = float(np.median(y))
    top = X[y >= cutoff]
    return top[:, :n_clusters].sum(axis=0).astype(np.float64)


def fit_ranker(
    X: np.ndarray,
    y: np.ndarray,
    encoding: CohortEncoding,
    num_rounds: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_samples_leaf: int = 5,
    min_rows_for_trees: int = MIN_ROWS_FOR_TREES,
) -> RankModel:
    """Fit the centroid ranker.

    Fewer than ``min_rows_for_trees`` rows selects the frequency fallback,
    which ranks centroids by how often they appear among top-rated rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    if X.shape[0] < min_rows_for_trees:
        return RankModel(
            kind="frequency",
            encoding=encoding,
            base_score=float(y.mean()),
            frequency_scores=_frequency_scores(X, y, encoding.n_clusters),
        )
    booster = GradientBoostedRegressor(
        num_rounds=num_rounds,
        max_depth=max_depth,
        learning_rate=learning_rate,
        min_samples_leaf=min_samples_leaf,
    ).fit(X, y)
    return RankModel(
        kind="gbdt",
        encoding=encoding,
        base_score=booster.base_score_,
        learning_rate=learning_rate,
        trees=booster.trees_,
    )


def predict_rank_model(model: RankModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    pred = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        pred += model.learning_rate * _tree_predict(tree, X)
    return pred


def _cohort_fields(cohort: Union[ProductRecord, Mapping]) -> tuple[str, str, str]:
    if isinstance(cohort, Mapping):
        return (
            str(cohort.get("category", "")),
            str(cohort.get("subcategory", "")),
            str(cohort.get("product_type", "")),
        )
    return cohort.category, cohort.subcategory, cohort.product_type


def score_centroids(
    model: RankModel,
    cohort: Union[ProductRecord, Mapping],
    candidate_indices: Sequence[int],
) -> list[CentroidScore]:
    """Predicted popularity per candidate centroid for one cohort; pure."""
    if len(candidate_indices) == 0:
        return []
    if model.kind == "frequency":
        scores = model.frequency_scores
        return [
            CentroidScore(int(i), float(scores[i]) if 0 <= i < scores.shape[0] else 0.0)
            for i in candidate_indices
        ]
    category, subcategory, product_type = _cohort_fields(cohort)
    X = np.stack(
        [model.encoding.encode(int(i), category, subcategory, product_type) for i in candidate_indices]
    )
    preds = predict_rank_model(model, X)
    return [CentroidScore(int(i), float(s)) for i, s in zip(candidate_indices, preds)]


def sort_by_rank(scores: Sequence[CentroidScore]) -> list[int]:
    """Centroid indices by descending score; ties break to the lower index."""
    for s in scores:
        if not math.isfinite(s.score):
            raise ValueError(f"non-finite score for centroid {s.centroid_index}")
    return [s.centroid_index for s in sorted(scores, key=lambda s: (-s.score, s.centroid_index))]
