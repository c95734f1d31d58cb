import numpy as np
import pytest

from lookalike.data import UserBase
from lookalike.training import BoundingBox, TrainingSet
from lookalike.tsne import Embedding


@pytest.fixture(scope="session")
def plane_base():
    """Three labeled clusters in the plane; the embedding is the identity."""
    rng = np.random.default_rng(1234)
    centers = [(-6.0, 0.0), (6.0, 0.0), (0.0, 8.0)]
    points = []
    labels = []
    for tag, c in enumerate(centers):
        points.append(rng.normal(0.0, 1.0, (60, 2)) + c)
        labels.extend([tag] * 60)
    features = np.vstack(points)
    ids = np.arange(len(features), dtype=np.int64)
    base = UserBase(ids=ids, features=features, labels=np.array(labels))
    emb = Embedding(ids=ids, coords=features.copy())
    return base, emb


@pytest.fixture(scope="session")
def cluster_training_set():
    """250 Gaussian seed positives against 250 box-uniform negatives."""
    from lookalike.synthetic import gaussian_cluster
    from lookalike.training import sample_uniform_negatives

    seed_pts = gaussian_cluster(250, (0.0, 0.0), 1.0, rng_seed=5)
    box = BoundingBox(lows=[-4.0, -4.0], highs=[4.0, 4.0])
    negatives = sample_uniform_negatives(box, 250, rng_seed=6)
    train = TrainingSet(
        points=np.vstack([seed_pts, negatives]),
        labels=np.concatenate(
            [np.ones(250, dtype=np.int64), np.zeros(250, dtype=np.int64)]
        ),
        n0=250,
        n1=250,
        strategy="uniform",
    )
    return seed_pts, box, train


@pytest.fixture(scope="session")
def cluster_model(cluster_training_set):
    from lookalike.trees import TreeParams, fit

    _, _, train = cluster_training_set
    return fit(train, TreeParams(), rng_seed=7)
