"""Two-class training sets: seed positives plus one of three negative strategies.

Negatives come either from uniform sampling over the (padded) embedding
bounding box, from random non-seed users, or from a designated counter
class. Only the uniform strategy produces synthetic points; the other two
are baselines that reuse real user coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UserBase, child_seed
from .errors import DataError
from .tsne import Embedding

STRATEGIES = ("uniform", "random_users", "counter_class")
DEFAULT_BOX_PADDING = 0.05


@dataclass
class SeedAudience:
    """The marketer-provided reference user set, stored as sorted unique ids."""

    member_ids: np.ndarray

    def __post_init__(self):
        self.member_ids = np.unique(np.asarray(self.member_ids, dtype=np.int64))
        if self.member_ids.size == 0:
            raise DataError("seed audience is empty")

    def __len__(self) -> int:
        return self.member_ids.size

    def __contains__(self, user_id) -> bool:
        i = np.searchsorted(self.member_ids, user_id)
        return i < self.member_ids.size and self.member_ids[i] == user_id


@dataclass
class BoundingBox:
    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        self.lows = np.asarray(self.lows, dtype=np.float64)
        self.highs = np.asarray(self.highs, dtype=np.float64)
        if self.lows.shape != self.highs.shape or self.lows.ndim != 1:
            raise DataError("lows/highs must be matching 1-D arrays")
        if not np.all(self.lows < self.highs):
            raise DataError("every dimension needs low < high")

    @property
    def n_dims(self) -> int:
        return self.lows.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.highs - self.lows))

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((points >= self.lows) & (points <= self.highs), axis=1)


@dataclass
class TrainingSet:
    """Labeled points in embedding space: label 1 = seed, label 0 = negatives."""

    points: np.ndarray
    labels: np.ndarray
    n0: int
    n1: int
    strategy: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.strategy not in STRATEGIES:
            raise DataError(f"unknown strategy {self.strategy!r}")
        if self.n0 < 1 or self.n1 < 1:
            raise DataError("need at least one example per class")
        if self.points.shape[0] != self.n0 + self.n1:
            raise DataError("point count does not match n0 + n1")
        if int((self.labels == 1).sum()) != self.n1 or int(
            (self.labels == 0).sum()
        ) != self.n0:
            raise DataError("label counts do not match n0/n1")
        if not np.all(np.isfinite(self.points)):
            raise DataError("training points contain non-finite values")


def bounding_box(emb: Embedding, padding: float = DEFAULT_BOX_PADDING) -> BoundingBox:
    """Axis-aligned box around the embedding, padded by a fraction of each range."""
    if padding < 0:
        raise DataError("padding must be non-negative")
    if emb.n_points < 2:
        raise DataError("need at least 2 points for a bounding box")
    lo = emb.coords.min(axis=0)
    hi = emb.coords.max(axis=0)
    rng = hi - lo
    if np.any(rng == 0):
        dim = int(np.flatnonzero(rng == 0)[0])
        raise DataError(f"dimension {dim} has zero range")
    return BoundingBox(lows=lo - padding * rng, highs=hi + padding * rng)


def sample_seed(
    base: UserBase, emb: Embedding, class_tag: int, n1: int, rng_seed: int
) -> SeedAudience:
    """Draw n1 distinct members of one class uniformly, without replacement."""
    if base.labels is None:
        raise DataError("seed sampling requires labels")
    if not np.array_equal(base.ids, emb.ids):
        raise DataError("user base and embedding ids are misaligned")
    pool = base.ids[base.labels == class_tag]
    if pool.size < n1:
        raise DataError(f"class {class_tag} has {pool.size} members, needs {n1}")
    rng = np.random.default_rng(child_seed(rng_seed, "sample_seed"))
    return SeedAudience(member_ids=rng.choice(pool, size=n1, replace=False))


def sample_uniform_negatives(box: BoundingBox, n0: int, rng_seed: int) -> np.ndarray:
    """n0 points i.i.d. uniform over the box; deterministic per rng_seed."""
    if n0 < 1:
        raise DataError("n0 must be positive")
    rng = np.random.default_rng(child_seed(rng_seed, "uniform_negatives"))
    return rng.uniform(box.lows, box.highs, size=(n0, box.n_dims))


def build_training_set(
    emb: Embedding,
    seed: SeedAudience,
    strategy: str,
    n0: int,
    rng_seed: int,
    counter_class_tag: int | None = None,
    base: UserBase | None = None,
    padding: float = DEFAULT_BOX_PADDING,
) -> TrainingSet:
    """Assemble the labeled training set for the given negative strategy.

    uniform: synthetic negatives over the padded bounding box (no overlap
    filtering against seed-occupied regions on purpose).
    random_users: negatives drawn from non-seed users.
    counter_class: negatives drawn from one designated class (needs `base`
    with labels); rejected when that class is the seed's own.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}")
    if n0 < 1:
        raise DataError("n0 must be positive")
    positives = emb.coords[emb.rows_for(seed.member_ids)]

    if strategy == "uniform":
        negatives = sample_uniform_negatives(
            bounding_box(emb, padding), n0, rng_seed
        )
    else:
        rng = np.random.default_rng(child_seed(rng_seed, "user_negatives"))
        in_seed = np.isin(emb.ids, seed.member_ids)
        if strategy == "random_users":
            pool = emb.ids[~in_seed]
        else:
            if counter_class_tag is None:
                raise DataError("counter_class strategy needs counter_class_tag")
            if base is None or base.labels is None:
                raise DataError("counter_class strategy needs a labeled user base")
            if not np.array_equal(base.ids, emb.ids):
                raise DataError("user base and embedding ids are misaligned")
            seed_classes = np.unique(base.labels[np.isin(base.ids, seed.member_ids)])
            if seed_classes.size == 1 and seed_classes[0] == counter_class_tag:
                raise DataError(
                    f"counter class {counter_class_tag} is the seed's own class"
                )
            pool = emb.ids[(base.labels == counter_class_tag) & ~in_seed]
        if pool.size < n0:
            raise DataError(
                f"negative pool has {pool.size} users, needs {n0} "
                f"(strategy {strategy})"
            )
        chosen = rng.choice(pool, size=n0, replace=False)
        negatives = emb.coords[emb.rows_for(chosen)]

    points = np.vstack([positives, negatives])
    labels = np.concatenate(
        [np.ones(len(positives), dtype=np.int64), np.zeros(n0, dtype=np.int64)]
    )
    return TrainingSet(
        points=points, labels=labels, n0=n0, n1=len(positives), strategy=strategy
    )
