"""Pool construction, uniform sampling, and the rewarp augmentation step."""

import numpy as np
import pytest

from fronto import augment, geom, warp
from fronto.augment import (
    AugmentConfig,
    DisplacementPool,
    augment_sample,
    build_pool,
    derive_worker_rng,
    pool_from_labels,
    sample,
)
from fronto.dataset import (
    AnnotationRecord,
    DatasetSplit,
    SyntheticSceneSpec,
    compute_stats,
    generate_synthetic,
)
from fronto.errors import EmptyPool, EmptySplit, InvariantViolation
from fronto.geom import DisplacementVector
from fronto.image import ImageBuffer


def rec(image_id, side, d, w=448, h=448):
    return AnnotationRecord(image_id, w, h, side, DisplacementVector.of(*d))


class TestPool:
    def test_singleton_split(self):
        pool = build_pool(DatasetSplit("train", (rec("a", "Left", (10.0, 0, 0, 4.0)),)), 224)
        assert len(pool) == 1
        assert np.allclose(pool.entries[0], [5.0, 0, 0, 2.0], atol=1e-9)

    def test_empty_split_raises(self):
        with pytest.raises(EmptySplit):
            build_pool(DatasetSplit("train", ()), 224)

    def test_duplicates_retained(self):
        records = (rec("a", "Left", (8.0, 0, 0, 8.0)), rec("b", "Left", (8.0, 0, 0, 8.0)))
        pool = build_pool(DatasetSplit("train", records), 224)
        assert len(pool) == 2
        assert np.array_equal(pool.entries[0], pool.entries[1])

    def test_pool_mean_matches_stats_after_rescale(self):
        records = (
            rec("a", "Left", (10.0, 0, 0, 6.0)),
            rec("b", "Right", (0, 14.0, -2.0, 0)),
            rec("c", "Left", (-4.0, 0, 0, 12.0)),
        )
        split = DatasetSplit("train", records)
        pool = build_pool(split, 224)
        stats = compute_stats(split)
        # all originals are 448, working size 224: displacement magnitudes halve
        assert np.allclose(np.abs(pool.entries).mean(axis=0), np.asarray(stats.per_corner) / 2, atol=1e-9)

    def test_empty_pool_rejected(self):
        with pytest.raises(EmptyPool):
            DisplacementPool(np.empty((0, 4)))

    def test_pool_from_labels(self):
        labels = np.array([[1.0, 0, 0, 2.0], [0, 3.0, 4.0, 0]])
        pool = pool_from_labels(labels)
        assert len(pool) == 2
        assert np.array_equal(pool.entries, labels)


class TestSample:
    def test_singleton_always(self):
        pool = pool_from_labels(np.array([[1.0, 0, 0, 2.0]]))
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert np.array_equal(sample(pool, rng).values, [1.0, 0, 0, 2.0])

    def test_uniform_frequency(self):
        entries = np.zeros((10, 4))
        entries[:, 0] = np.arange(10, dtype=float)
        pool = pool_from_labels(entries)
        rng = np.random.default_rng(42)
        n = 100_000
        counts = np.zeros(10)
        for _ in range(n):
            counts[int(sample(pool, rng)[0])] += 1
        assert np.all(np.abs(counts / n - 0.1) < 0.01)

    def test_fixed_seed_reproducible(self):
        pool = pool_from_labels(np.arange(40, dtype=float).reshape(10, 4) / 100.0)
        rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
        s1 = [sample(pool, rng1).values.tolist() for _ in range(10)]
        s2 = [sample(pool, rng2).values.tolist() for _ in range(10)]
        assert s1 == s2


class TestDeriveWorkerRng:
    def test_deterministic(self):
        a = derive_worker_rng(5, 0, 3).random(4)
        b = derive_worker_rng(5, 0, 3).random(4)
        assert np.array_equal(a, b)

    def test_distinct_epochs_differ(self):
        a = derive_worker_rng(5, 0, 3).random(4)
        b = derive_worker_rng(5, 0, 4).random(4)
        assert not np.array_equal(a, b)

    def test_distinct_workers_differ(self):
        a = derive_worker_rng(5, 0, 3).random(4)
        b = derive_worker_rng(5, 1, 3).random(4)
        assert not np.array_equal(a, b)


def small_image(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return ImageBuffer(rng.uniform(0.2, 0.8, size=(size, size, 1)))


class TestAugmentSample:
    def test_p_zero_pass_through(self):
        img = small_image()
        label = DisplacementVector.of(2.0, 0, 0, 1.0)
        pool = pool_from_labels(np.array([[0, 3.0, 3.0, 0]]))
        rng = np.random.default_rng(0)
        for _ in range(10):
            out, lab, applied = augment_sample(img, label, pool, AugmentConfig(0.0), rng)
            assert not applied
            assert out is img and lab is label

    def test_p_one_singleton_label(self):
        img = small_image()
        label = DisplacementVector.of(2.0, 0, 0, 1.0)
        d_star = np.array([0, 3.0, 3.0, 0])
        pool = pool_from_labels(d_star[None, :])
        rng = np.random.default_rng(0)
        for _ in range(5):
            _, lab, applied = augment_sample(img, label, pool, AugmentConfig(1.0), rng)
            assert applied
            assert np.array_equal(lab.values, d_star)

    def test_flag_frequency_half(self):
        img = small_image(size=8)
        label = DisplacementVector.zero()
        pool = pool_from_labels(np.array([[1.0, 0, 0, 1.0]]))
        rng = np.random.default_rng(11)
        cfg = AugmentConfig(0.5)
        n = 10_000
        applied = sum(augment_sample(img, label, pool, cfg, rng)[2] for _ in range(n))
        assert abs(applied / n - 0.5) < 0.02

    def test_label_bit_exact(self):
        img = small_image()
        label = DisplacementVector.of(1.5, 0, 0, -2.25)
        entries = np.array([[0, 2.125, -3.0625, 0], [4.5, 0, 0, 1.75]])
        pool = pool_from_labels(entries)
        rng = np.random.default_rng(3)
        seen = set()
        for _ in range(30):
            _, lab, applied = augment_sample(img, label, pool, AugmentConfig(1.0), rng)
            assert applied
            matches = [i for i in range(2) if np.array_equal(lab.values, entries[i])]
            assert len(matches) == 1
            seen.add(matches[0])
        assert seen == {0, 1}

    def test_unwarp_consistency(self):
        # augmented image unwarped by its new label matches the original
        # unwarped image on jointly valid pixels
        d = DisplacementVector.of(18.0, 0, 0, -11.0)
        spec = SyntheticSceneSpec(seed=8, size=224, displacement=d, side="Left")
        distorted, record = generate_synthetic(spec)
        base, base_mask = warp.unwarp_to_fronto_parallel(distorted, record)
        pool = pool_from_labels(np.array([[0, -15.0, 21.0, 0]]))
        rng = np.random.default_rng(1)
        aug, lab, applied = augment_sample(distorted, record.d, pool, AugmentConfig(1.0), rng)
        assert applied
        H_new = geom.displacement_to_homography(lab, 224, 224)
        re_unwarped, mask2 = warp.warp_image(aug, H_new, 224, 224)
        joint = base_mask.intersect(mask2).bits
        err = np.abs(re_unwarped.data - base.data)[joint]
        assert err.mean() < 0.03

    def test_marker_moves_to_projected_position(self):
        # pixel motion of the rewarp agrees with the point mapping of H(d_new)
        size = 64
        data = np.full((size, size, 1), 0.2)
        q = (40.0, 22.0)
        data[int(q[1]), int(q[0])] = 1.0
        img = ImageBuffer(data)
        d_new = DisplacementVector.of(0, 9.0, -6.0, 0)
        pool = pool_from_labels(d_new.values[None, :])
        rng = np.random.default_rng(0)
        aug, lab, applied = augment_sample(
            img, DisplacementVector.zero(), pool, AugmentConfig(1.0), rng
        )
        assert applied
        H = geom.displacement_to_homography(d_new, size, size)
        px, py = geom.apply(geom.invert(H), q)
        iy, ix = np.unravel_index(np.argmax(aug.data[:, :, 0]), (size, size))
        assert abs(ix - px) <= 1.0 and abs(iy - py) <= 1.0
