import numpy as np
import pytest

from lookalike import training
from lookalike.errors import DataError
from lookalike.tsne import Embedding


class TestBoundingBox:
    def test_padding_arithmetic(self):
        emb = Embedding(ids=[0, 1], coords=[[0.0, 0.0], [2.0, 4.0]])
        box = training.bounding_box(emb, padding=0.05)
        np.testing.assert_allclose(box.lows, [-0.1, -0.2])
        np.testing.assert_allclose(box.highs, [2.1, 4.2])

    def test_zero_padding_is_exact_hull(self, plane_base):
        _, emb = plane_base
        box = training.bounding_box(emb, padding=0.0)
        np.testing.assert_array_equal(box.lows, emb.coords.min(axis=0))
        np.testing.assert_array_equal(box.highs, emb.coords.max(axis=0))

    def test_every_point_inside(self, plane_base):
        _, emb = plane_base
        box = training.bounding_box(emb, padding=0.05)
        assert box.contains(emb.coords).all()

    def test_degenerate_dimension(self):
        emb = Embedding(ids=[0, 1], coords=[[1.0, 0.0], [1.0, 5.0]])
        with pytest.raises(DataError, match="dimension 0"):
            training.bounding_box(emb)

    def test_invalid_bounds_rejected(self):
        with pytest.raises(DataError):
            training.BoundingBox(lows=[0.0, 1.0], highs=[1.0, 1.0])


class TestSampleSeed:
    def test_draws_from_requested_class(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, class_tag=1, n1=30, rng_seed=4)
        assert len(seed) == 30
        rows = np.isin(base.ids, seed.member_ids)
        assert (base.labels[rows] == 1).all()

    def test_whole_class(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, class_tag=0, n1=60, rng_seed=4)
        np.testing.assert_array_equal(
            np.sort(seed.member_ids), np.sort(base.ids[base.labels == 0])
        )

    def test_deterministic(self, plane_base):
        base, emb = plane_base
        a = training.sample_seed(base, emb, 2, 20, rng_seed=11)
        b = training.sample_seed(base, emb, 2, 20, rng_seed=11)
        np.testing.assert_array_equal(a.member_ids, b.member_ids)

    def test_insufficient_members(self, plane_base):
        base, emb = plane_base
        with pytest.raises(DataError, match="class 0"):
            training.sample_seed(base, emb, 0, 61, rng_seed=0)


class TestUniformNegatives:
    def test_containment_and_determinism(self):
        box = training.BoundingBox(lows=[0.0, 0.0], highs=[1.0, 1.0])
        a = training.sample_uniform_negatives(box, 4, rng_seed=1)
        b = training.sample_uniform_negatives(box, 4, rng_seed=1)
        assert a.shape == (4, 2)
        assert box.contains(a).all()
        np.testing.assert_array_equal(a, b)

    def test_sample_mean_near_center(self):
        box = training.BoundingBox(lows=[-2.0, 5.0], highs=[4.0, 6.0])
        pts = training.sample_uniform_negatives(box, 10_000, rng_seed=3)
        widths = box.highs - box.lows
        center = (box.highs + box.lows) / 2.0
        bound = 3.0 * widths / np.sqrt(12.0 * 10_000)
        assert (np.abs(pts.mean(axis=0) - center) < bound).all()


class TestBuildTrainingSet:
    def test_uniform_counts_and_coordinates(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 30, rng_seed=5)
        train = training.build_training_set(emb, seed, "uniform", 30, rng_seed=6)
        assert train.points.shape == (60, 2)
        assert train.n1 == train.n0 == 30
        seed_coords = emb.coords[emb.rows_for(seed.member_ids)]
        np.testing.assert_array_equal(train.points[train.labels == 1], seed_coords)
        box = training.bounding_box(emb, 0.05)
        assert box.contains(train.points[train.labels == 0]).all()

    def test_imbalance_ratio_three_accepted(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 1, 60, rng_seed=5)
        train = training.build_training_set(emb, seed, "uniform", 20, rng_seed=6)
        assert train.n1 == 60 and train.n0 == 20

    def test_random_users_excludes_seed(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 30, rng_seed=7)
        train = training.build_training_set(
            emb, seed, "random_users", 50, rng_seed=8
        )
        seed_coords = emb.coords[emb.rows_for(seed.member_ids)]
        negatives = train.points[train.labels == 0]
        # Negative coordinates must belong to real non-seed users.
        all_coords = {tuple(c) for c in emb.coords}
        seed_set = {tuple(c) for c in seed_coords}
        for p in negatives:
            assert tuple(p) in all_coords and tuple(p) not in seed_set

    def test_counter_class_draws_from_that_class(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 20, rng_seed=9)
        train = training.build_training_set(
            emb,
            seed,
            "counter_class",
            40,
            rng_seed=10,
            counter_class_tag=2,
            base=base,
        )
        class2 = {tuple(c) for c in emb.coords[base.labels == 2]}
        for p in train.points[train.labels == 0]:
            assert tuple(p) in class2

    def test_counter_class_rejects_own_class(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 1, 20, rng_seed=9)
        with pytest.raises(DataError, match="own class"):
            training.build_training_set(
                emb,
                seed,
                "counter_class",
                10,
                rng_seed=10,
                counter_class_tag=1,
                base=base,
            )

    def test_counter_class_needs_base(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 5, rng_seed=1)
        with pytest.raises(DataError, match="counter_class"):
            training.build_training_set(
                emb, seed, "counter_class", 5, rng_seed=2, counter_class_tag=1
            )

    def test_pool_capacity_error(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 60, rng_seed=1)
        with pytest.raises(DataError, match="negative pool"):
            training.build_training_set(emb, seed, "random_users", 180, rng_seed=2)

    def test_deterministic_per_seed(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 2, 25, rng_seed=1)
        for strategy in ("uniform", "random_users"):
            a = training.build_training_set(emb, seed, strategy, 25, rng_seed=3)
            b = training.build_training_set(emb, seed, strategy, 25, rng_seed=3)
            np.testing.assert_array_equal(a.points, b.points)

    def test_unknown_strategy(self, plane_base):
        base, emb = plane_base
        seed = training.sample_seed(base, emb, 0, 5, rng_seed=1)
        with pytest.raises(DataError, match="strategy"):
            training.build_training_set(emb, seed, "nearest", 5, rng_seed=2)


class TestTrainingSetInvariants:
    def test_label_count_mismatch_rejected(self):
        with pytest.raises(DataError):
            training.TrainingSet(
                points=np.zeros((3, 2)),
                labels=np.array([1, 1, 0]),
                n0=2,
                n1=1,
                strategy="uniform",
            )

    def test_empty_seed_rejected(self):
        with pytest.raises(DataError):
            training.SeedAudience(member_ids=np.array([], dtype=np.int64))
