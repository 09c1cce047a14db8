"""K-means over pose embeddings: k-means++ seeding plus Lloyd iterations.

Written from scratch (no clustering library behind it) so runs are
deterministic per seed and the objective trace is observable.  Exact ties in
nearest-centroid assignment break toward the lowest centroid index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import UnposeError
from .features import EmbeddingMatrix

_CHUNK_ROWS = 2048


@dataclass(frozen=True)
class Assignment:
    """One row's nearest centroid with its squared Euclidean distance."""

    centroid_index: int
    distance: float
    image_id: str = ""
    product_id: str = ""


def _pairwise_sqdist(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared distances, computed by direct differencing.

    The direct form keeps exact zeros when a row coincides with a centroid,
    which the tie-break rule relies on.  Chunked to bound memory.
    """
    n = X.shape[0]
    k = centroids.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, n)
        diff = X[start:stop, None, :] - centroids[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _assign(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dist2 = _pairwise_sqdist(X, centroids)
    labels = np.argmin(dist2, axis=1)  # first occurrence = lowest index on ties
    min_dist2 = dist2[np.arange(X.shape[0]), labels]
    return labels, min_dist2


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    diff = X - centroids[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point coincides with a chosen centroid; fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = X[idx]
        diff = X - centroids[j]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return centroids


def _update_centroids(
    X: np.ndarray, labels: np.ndarray, min_dist2: np.ndarray, k: int
) -> np.ndarray:
    d = X.shape[1]
    centroids = np.zeros((k, d), dtype=np.float64)
    counts = np.bincount(labels, minlength=k)
    # fixed index order keeps single-threaded and chunked runs bit-identical
    for j in range(k):
        if counts[j] > 0:
            centroids[j] = X[labels == j].mean(axis=0)
    empty = [j for j in range(k) if counts[j] == 0]
    if empty:
        order = np.argsort(-min_dist2, kind="stable")  # farthest points first
        taken = 0
        for j in empty:
            centroids[j] = X[order[taken]]
            taken += 1
    return centroids


def _lloyd(
    X: np.ndarray, k: int, seed: int, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(X, k, rng)
    trace: list[float] = []
    prev_obj: float | None = None
    labels = np.zeros(X.shape[0], dtype=np.intp)
    for _ in range(max_iter):
        labels, min_dist2 = _assign(X, centroids)
        obj = float(min_dist2.sum())
        trace.append(obj)
        if prev_obj is not None:
            rel = (prev_obj - obj) / prev_obj if prev_obj > 0 else 0.0
            if rel < tol:
                break
        prev_obj = obj
        centroids = _update_centroids(X, labels, min_dist2, k)
    else:
        # max_iter exhausted after an update; refresh labels for consistency
        labels, min_dist2 = _assign(X, centroids)
        trace.append(float(min_dist2.sum()))
    return centroids, labels, trace[-1], trace


def _merge_duplicate_centroids(
    centroids: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Drop bit-identical duplicate centroids, remapping labels to survivors."""
    keep: list[int] = []
    remap = np.zeros(centroids.shape[0], dtype=np.intp)
    for j in range(centroids.shape[0]):
        dup = next(
            (new_i for new_i, old_i in enumerate(keep) if np.array_equal(centroids[old_i], centroids[j])),
            None,
        )
        if dup is None:
            remap[j] = len(keep)
            keep.append(j)
        else:
            remap[j] = dup
    if len(keep) == centroids.shape[0]:
        return centroids, labels
    return centroids[keep], remap[labels]


class PoseKMeans(BaseEstimator, ClusterMixin):
    """K-means clusterer with deterministic seeding and lowest-index tie-breaks.

    Parameters
    ----------
    n_clusters : int
        Number of centroids to fit (the pose-class count).
    n_init : int
        Independent k-means++ restarts; the run with the lowest objective wins.
    max_iter : int
        Lloyd iteration cap per restart.
    tol : float
        Relative objective improvement below which a restart stops.
    random_state : int
        Seed for centroid initialization.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (k', d)
        Fitted centroids; k' < n_clusters only if duplicates were merged.
    labels_ : ndarray of shape (n,)
        Training assignments.
    inertia_ : float
        Final within-cluster sum of squared distances.
    n_iter_ : int
        Assignment passes of the winning restart.
    objective_trace_ : list of float
        Per-iteration objective of the winning restart (non-increasing).
    """

    def __init__(self, n_clusters=8, n_init=10, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if n < self.n_clusters:
            raise ValueError(f"need at least n_clusters={self.n_clusters} rows, got {n}")
        rng = np.random.default_rng(self.random_state)
        seeds = rng.integers(0, 2**31 - 1, size=max(1, self.n_init))
        best = None
        for seed in seeds:
            result = _lloyd(X, self.n_clusters, int(seed), self.max_iter, self.tol)
            if best is None or result[2] < best[2]:
                best = result
        centroids, labels, objective, trace = best
        centroids, labels = _merge_duplicate_centroids(centroids, labels)
        self.cluster_centers_ = centroids
        self.labels_ = labels
        self.inertia_ = objective
        self.n_iter_ = len(trace)
        self.objective_trace_ = trace
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        self._check_dim(X)
        labels, _ = _assign(X, self.cluster_centers_)
        return labels

    def _check_dim(self, X: np.ndarray):
        expected = self.cluster_centers_.shape[1]
        if X.shape[1] != expected:
            raise ValueError(f"expected vectors of dimension {expected}, got {X.shape[1]}")

    def to_state(self) -> dict:
        check_is_fitted(self, "cluster_centers_")
        return {
            "params": {
                "n_clusters": self.n_clusters,
                "n_init": self.n_init,
                "max_iter": self.max_iter,
                "tol": self.tol,
                "random_state": self.random_state,
            },
            "inertia": self.inertia_,
            "n_iter": self.n_iter_,
        }

    @classmethod
    def from_state(cls, state: dict, cluster_centers: np.ndarray) -> "PoseKMeans":
        model = cls(**state["params"])
        model.cluster_centers_ = np.asarray(cluster_centers, dtype=np.float64)
        model.inertia_ = float(state["inertia"])
        model.n_iter_ = int(state["n_iter"])
        model.objective_trace_ = []
        model.labels_ = np.zeros(0, dtype=np.intp)
        return model


def _as_array(matrix: Union[EmbeddingMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(matrix, EmbeddingMatrix):
        return matrix.matrix
    return np.asarray(matrix, dtype=np.float64)


def kmeans_fit(
    matrix: Union[EmbeddingMatrix, np.ndarray],
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_init: int = 10,
) -> PoseKMeans:
    """Fit centroids over an embedding matrix, naming bad rows when rejecting."""
    X = _as_array(matrix)
    if isinstance(matrix, EmbeddingMatrix):
        finite = np.isfinite(X).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise UnposeError(f"non-finite embedding for image {matrix.image_ids[bad]!r}")
    model = PoseKMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, tol=tol, random_state=seed)
    return model.fit(X)


def nearest_centroid(
    model: PoseKMeans, vector: np.ndarray, image_id: str = "", product_id: str = ""
) -> Assignment:
    """Assign one vector to its nearest centroid (lowest index on exact ties)."""
    check_is_fitted(model, "cluster_centers_")
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != model.cluster_centers_.shape[1]:
        raise ValueError(
            f"expected a vector of dimension {model.cluster_centers_.shape[1]}, "
            f"got shape {vector.shape}"
        )
    labels, min_dist2 = _assign(vector[None, :], model.cluster_centers_)
    return Assignment(
        centroid_index=int(labels[0]),
        distance=float(min_dist2[0]),
        image_id=image_id,
        product_id=product_id,
    )


def assign_all(
    model: PoseKMeans, matrix: Union[EmbeddingMatrix, np.ndarray]
) -> list[Assignment]:
    """Row-wise nearest-centroid assignment, input order preserved."""
    check_is_fitted(model, "cluster_centers_")
    X = _as_array(matrix)
    if X.shape[0] == 0:
        return []
    model._check_dim(X)
    labels, min_dist2 = _assign(X, model.cluster_centers_)
    if isinstance(matrix, EmbeddingMatrix):
        ids = zip(matrix.image_ids, matrix.product_ids)
    else:
        ids = (("", "") for _ in range(X.shape[0]))
    return [
        Assignment(centroid_index=int(lbl), distance=float(d2), image_id=iid, product_id=pid)
        for (lbl, d2), (iid, pid) in zip(zip(labels, min_dist2), ids)
    ]


def kmeans_objective(
    model: PoseKMeans,
    matrix: Union[EmbeddingMatrix, np.ndarray],
    assignments: list[Assignment],
) -> float:
    """Recompute the within-cluster sum of squared distances for given assignments."""
    X = _as_array(matrix)
    if X.shape[0] != len(assignments):
        raise ValueError(f"{X.shape[0]} rows but {len(assignments)} assignments")
    total = 0.0
    for i, assignment in enumerate(assignments):
        diff = X[i] - model.cluster_centers_[assignment.centroid_index]
        total += float(diff @ diff)
    return total
