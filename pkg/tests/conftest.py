"""Shared fixtures: small deterministic corpora and pre-trained bundles."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unpose import (
    CorpusSpec,
    ProductRecord,
    TrainConfig,
    TrainingHyperparams,
    generate_corpus,
    train_flow,
)

settings.register_profile(
    "ci",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("ci")


SMALL_CLASSES = (0, 1, 2, 3, 4, 5)


@pytest.fixture(scope="session")
def small_corpus():
    """Noiseless six-class corpus: 96 images, 12 products, exact geometry."""
    spec = CorpusSpec(classes=SMALL_CLASSES, per_class=16, noise_sigma=0.0, seed=0)
    records, truth, products = generate_corpus(spec)
    return records, truth, products


@pytest.fixture(scope="session")
def small_bundle(small_corpus):
    """Bundle trained on the noiseless corpus without the autoencoder.

    Noiseless per-class duplicates collapse each class onto one centroid,
    so the class -> centroid mapping is exact and the objective is ~0.
    """
    records, _truth, products = small_corpus
    config = TrainConfig(k=len(SMALL_CLASSES), seed=0, use_autoencoder=False)
    return train_flow(records, products, config)


@pytest.fixture(scope="session")
def ae_bundle(small_corpus):
    """Bundle with a briefly-trained autoencoder, for serialization tests."""
    records, _truth, products = small_corpus
    hyper = TrainingHyperparams(
        epochs=3, learning_rate=0.01, min_learning_rate=0.0001, seed=0
    )
    config = TrainConfig(
        k=len(SMALL_CLASSES), seed=0, use_autoencoder=True, autoencoder_hyper=hyper
    )
    return train_flow(records, products, config)


@pytest.fixture(scope="session")
def class_to_centroid(small_corpus, small_bundle):
    """Exact mapping from synthetic class id to fitted centroid index."""
    records, truth, _products = small_corpus
    mapping: dict[int, int] = {}
    from unpose import embed_corpus, normalize
    from unpose.features import FeatureConfig

    config = FeatureConfig.for_topology(records[0].topology)
    matrix = embed_corpus([normalize(r) for r in records], config)
    labels = small_bundle.centroid_model.predict(matrix.matrix)
    for image_id, label in zip(matrix.image_ids, labels):
        class_id = truth[image_id]
        previous = mapping.setdefault(class_id, int(label))
        assert previous == int(label), "noiseless class split across centroids"
    assert len(set(mapping.values())) == len(SMALL_CLASSES)
    return mapping


def make_product(
    product_id: str = "P-test",
    category: str = "apparel",
    subcategory: str = "sub-0",
    product_type: str = "type-0",
    avg_rating: float = 4.0,
    num_reviews: int = 99,
    image_ids: tuple = (),
) -> ProductRecord:
    return ProductRecord(
        product_id=product_id,
        category=category,
        subcategory=subcategory,
        product_type=product_type,
        avg_rating=avg_rating,
        num_reviews=num_reviews,
        image_ids=image_ids,
    )


@pytest.fixture
def product_factory():
    return make_product


def brute_force_kmeans_objective(X: np.ndarray, k: int) -> float:
    """Exact optimum of the k-means objective by exhaustive assignment search.

    Enumerates every assignment of n points to k clusters (k**n options) and
    scores each with centroids at the cluster means. Feasible for n <= 8, k <= 2.
    """
    n = X.shape[0]
    best = np.inf
    for code in range(k**n):
        labels = np.empty(n, dtype=np.intp)
        c = code
        for i in range(n):
            labels[i] = c % k
            c //= k
        total = 0.0
        for j in range(k):
            members = X[labels == j]
            if members.shape[0] == 0:
                continue
            centroid = members.mean(axis=0)
            diff = members - centroid
            total += float(np.einsum("ij,ij->", diff, diff))
        if total < best:
            best = total
    return best
