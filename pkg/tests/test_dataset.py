"""Manifest storage, record invariants, resizing, statistics, and the generator."""

import numpy as np
import pytest

from fronto import dataset, geom, warp
from fronto.dataset import (
    AnnotationRecord,
    DatasetSplit,
    SyntheticSceneSpec,
    compute_stats,
    format_record,
    generate_dataset,
    generate_synthetic,
    load_dataset,
    load_split_arrays,
    parse_record_line,
    resize_record,
    rescale_displacement,
    sample_displacement,
    save_dataset,
)
from fronto.errors import EmptySplit, InvariantViolation, ParseError
from fronto.geom import DisplacementVector
from fronto.image import ImageBuffer


def rec(image_id, side, d, w=224, h=224):
    return AnnotationRecord(image_id, w, h, side, DisplacementVector.of(*d))


class TestAnnotationRecord:
    def test_valid_left(self):
        r = rec("a", "Left", (10.0, 0, 0, -5.0))
        assert r.side == "Left"

    def test_side_consistency(self):
        with pytest.raises(InvariantViolation):
            rec("a", "Left", (10.0, 1.0, 0, 0))
        with pytest.raises(InvariantViolation):
            rec("a", "Right", (0, 0, 1.0, 2.0, ) if False else (1.0, 0, 0, 2.0))

    def test_legal_bound_strict(self):
        rec("a", "Left", (111.9, 0, 0, 0))  # just inside 224/2
        with pytest.raises(InvariantViolation):
            rec("a", "Left", (112.0, 0, 0, 0))
        with pytest.raises(InvariantViolation):
            rec("a", "Left", (-112.0, 0, 0, 0))

    def test_whitespace_id_rejected(self):
        with pytest.raises(InvariantViolation):
            rec("has space", "Left", (0, 0, 0, 0))
        with pytest.raises(InvariantViolation):
            rec("", "Left", (0, 0, 0, 0))

    def test_unknown_side_rejected(self):
        with pytest.raises(InvariantViolation):
            rec("a", "left", (0, 0, 0, 0))


class TestManifest:
    def test_line_round_trip(self):
        r = rec("shelf-001", "Right", (0, 17.25, -3.5, 0), 640, 480)
        line = format_record(r)
        parts = line.split()
        assert parts[0] == "shelf-001" and parts[1] == "Right"
        assert parts[6:] == ["640", "480"]
        back = parse_record_line(line)
        assert back.image_id == r.image_id
        assert back.side == r.side
        assert back.orig_width == 640 and back.orig_height == 480
        assert np.array_equal(back.d.values, r.d.values)

    def test_parse_error_reports_line_number(self):
        with pytest.raises(ParseError) as exc:
            parse_record_line("only three fields", lineno=7)
        assert "7" in str(exc.value)

    def test_parse_rejects_bad_float(self):
        with pytest.raises(ParseError):
            parse_record_line("a Left x 0 0 0 224 224")

    def test_save_load_round_trip(self, tmp_path):
        splits = {
            "train": DatasetSplit("train", (rec("a", "Left", (5.0, 0, 0, 5.0)),)),
            "val": DatasetSplit("val", (rec("b", "Right", (0, -8.0, 2.0, 0), 448, 448),)),
            "test": DatasetSplit("test", ()),
        }
        save_dataset(splits, tmp_path)
        loaded = load_dataset(tmp_path)
        assert [r.image_id for r in loaded["train"].records] == ["a"]
        got = loaded["val"].records[0]
        assert got.orig_width == 448
        assert np.array_equal(got.d.values, np.array([0, -8.0, 2.0, 0]))
        assert loaded["test"].records == ()

    def test_missing_manifest_gives_empty_split(self, tmp_path):
        splits = load_dataset(tmp_path)
        assert all(s.records == () for s in splits.values())

    def test_duplicate_id_across_splits_rejected(self, tmp_path):
        (tmp_path / "train.txt").write_text("a Left 1.0 0.0 0.0 0.0 224 224\n")
        (tmp_path / "val.txt").write_text("a Left 1.0 0.0 0.0 0.0 224 224\n")
        with pytest.raises(InvariantViolation):
            load_dataset(tmp_path)

    def test_duplicate_id_within_split_rejected(self, tmp_path):
        (tmp_path / "train.txt").write_text(
            "a Left 1.0 0.0 0.0 0.0 224 224\na Left 2.0 0.0 0.0 0.0 224 224\n"
        )
        with pytest.raises(InvariantViolation):
            load_dataset(tmp_path)

    def test_illegal_record_in_file_rejected(self, tmp_path):
        (tmp_path / "train.txt").write_text("a Left 1.0 5.0 0.0 0.0 224 224\n")
        with pytest.raises(InvariantViolation):
            load_dataset(tmp_path)

    def test_malformed_line_number_in_message(self, tmp_path):
        good = "a Left 1.0 0.0 0.0 0.0 224 224\n"
        (tmp_path / "train.txt").write_text(good + "bad line\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(tmp_path)
        assert "2" in str(exc.value)


class TestResizeRecord:
    def _img(self, w, h):
        rng = np.random.default_rng(0)
        return ImageBuffer(rng.uniform(0.1, 0.9, size=(h, w, 3)))

    def test_affine_halving(self):
        r = rec("a", "Left", (20.0, 0, 0, 20.0), 448, 448)
        img = self._img(448, 448)
        out, label = resize_record(r, img, 224)
        assert out.width == 224 and out.height == 224
        assert np.allclose(label.values, [10.0, 0, 0, 10.0], atol=1e-9)

    def test_zero_stays_zero(self):
        r = rec("a", "Left", (0, 0, 0, 0), 640, 480)
        _, label = resize_record(r, self._img(640, 480), 224)
        assert np.array_equal(label.values, np.zeros(4))

    def test_non_square_scales_by_height_ratio(self):
        # x-preserving homography: vertical displacements scale by 224/480
        d0 = (12.0, 0, 0, -7.0)
        r = rec("a", "Left", d0, 640, 480)
        _, label = resize_record(r, self._img(640, 480), 224)
        expected = np.array(d0) * (224.0 / 480.0)
        assert np.allclose(label.values, expected, atol=1e-6)

    def test_dimension_mismatch_rejected(self):
        r = rec("a", "Left", (0, 0, 0, 0), 448, 448)
        with pytest.raises(InvariantViolation):
            resize_record(r, self._img(224, 224), 112)

    def test_commutes_with_conjugation(self):
        # label equals corner displacement of the conjugated homography
        d = DisplacementVector.of(0, 9.0, -4.0, 0)
        r = AnnotationRecord("a", 448, 336, "Right", d)
        _, label = resize_record(r, self._img(448, 336), 224)
        H = geom.displacement_to_homography(d, 448, 336)
        s = geom.ScaleTransform.between(448, 336, 224, 224)
        back, lossy = geom.homography_to_displacement(geom.rescale_homography(H, s), 224, 224)
        assert not lossy
        assert np.allclose(label.values, back.values, atol=1e-9)

    def test_rescale_displacement_matches(self):
        d = DisplacementVector.of(20.0, 0, 0, 20.0)
        out = rescale_displacement(d, 448, 448, 224, 224)
        assert np.allclose(out.values, [10.0, 0, 0, 10.0], atol=1e-9)


class TestComputeStats:
    def test_two_record_fixture(self):
        split = DatasetSplit("train", (
            rec("a", "Left", (10.0, 0, 0, 10.0)),
            rec("b", "Right", (0, 20.0, 20.0, 0)),
        ))
        st = compute_stats(split)
        assert np.allclose(st.per_corner, [5.0, 10.0, 10.0, 5.0])
        assert st.overall == pytest.approx(7.5)
        assert st.left_count == 1 and st.right_count == 1

    def test_single_zero_record(self):
        st = compute_stats(DatasetSplit("train", (rec("a", "Left", (0, 0, 0, 0)),)))
        assert np.array_equal(st.per_corner, np.zeros(4))
        assert st.overall == 0.0

    def test_overall_is_mean_of_record_means(self):
        records = tuple(
            rec(f"r{i}", "Left", (float(i + 1), 0, 0, float(2 * i)), 224, 224)
            for i in range(5)
        )
        st = compute_stats(DatasetSplit("train", records))
        per_record = [np.abs(r.d.values).mean() for r in records]
        assert st.overall == pytest.approx(np.mean(per_record))

    def test_empty_split_raises(self):
        with pytest.raises(EmptySplit):
            compute_stats(DatasetSplit("train", ()))

    def test_to_text_round_trip_values(self):
        split = DatasetSplit("train", (rec("a", "Left", (10.0, 0, 0, 10.0)),))
        text = compute_stats(split).to_text()
        assert "mean_abs_tl" in text and "left_count = 1" in text


class TestGenerator:
    def test_zero_displacement_equals_render(self):
        spec_d = SyntheticSceneSpec(seed=3, size=64, displacement=DisplacementVector.zero(), side="Left")
        img, record = generate_synthetic(spec_d)
        assert np.array_equal(record.d.values, np.zeros(4))
        # identity warp is bit-exact, so distorted == render
        spec_d2 = SyntheticSceneSpec(seed=3, size=64, displacement=DisplacementVector.zero(), side="Left")
        img2, _ = generate_synthetic(spec_d2)
        assert np.array_equal(img.data, img2.data)

    def test_label_is_exact_distortion(self):
        d = DisplacementVector.of(0, 7.5, -3.25, 0)
        spec = SyntheticSceneSpec(seed=11, size=64, displacement=d, side="Right")
        _, record = generate_synthetic(spec)
        assert np.array_equal(record.d.values, d.values)

    def test_round_trip_recovers_render(self):
        # canonical working resolution; tolerance is resolution-dependent
        d = DisplacementVector.of(21.0, 0, 0, -14.0)
        flat = SyntheticSceneSpec(seed=5, size=224, displacement=DisplacementVector.zero(), side="Left")
        render, _ = generate_synthetic(flat)
        spec = SyntheticSceneSpec(seed=5, size=224, displacement=d, side="Left")
        distorted, record = generate_synthetic(spec)
        recovered, mask = warp.unwarp_to_fronto_parallel(distorted, record)
        err = np.abs(recovered.data - render.data)[mask.bits]
        assert err.mean() < 0.02

    def test_same_seed_bitwise_identical(self):
        a, ra = generate_synthetic(SyntheticSceneSpec(seed=9, size=48))
        b, rb = generate_synthetic(SyntheticSceneSpec(seed=9, size=48))
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(ra.d.values, rb.d.values)
        assert ra.side == rb.side

    def test_different_seeds_differ(self):
        a, _ = generate_synthetic(SyntheticSceneSpec(seed=1, size=48))
        b, _ = generate_synthetic(SyntheticSceneSpec(seed=2, size=48))
        assert not np.array_equal(a.data, b.data)


class TestSampler:
    def test_magnitude_and_side_statistics(self):
        rng = np.random.default_rng(123)
        n = 10000
        mags = np.empty(n)
        left = 0
        for i in range(n):
            side, d = sample_displacement(rng, 224)
            vals = d.values
            active = vals[[0, 3]] if side == "Left" else vals[[1, 2]]
            mags[i] = np.abs(active).mean()
            left += side == "Left"
        assert abs(mags.mean() - 19.0) < 2.0
        assert abs(left / n - 0.5) < 0.02

    def test_scales_with_size(self):
        rng1 = np.random.default_rng(7)
        rng2 = np.random.default_rng(7)
        _, d224 = sample_displacement(rng1, 224)
        _, d56 = sample_displacement(rng2, 56)
        assert np.allclose(d56.values, d224.values * (56.0 / 224.0))

    def test_samples_are_legal(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            side, d = sample_displacement(rng, 56)
            AnnotationRecord("x", 56, 56, side, d)  # must not raise


class TestGenerateDataset:
    def test_tree_layout_and_determinism(self, tmp_path):
        root_a = tmp_path / "a"
        root_b = tmp_path / "b"
        splits_a = generate_dataset(root_a, 12, seed=5, size=48)
        splits_b = generate_dataset(root_b, 12, seed=5, size=48)
        assert {k: len(v.records) for k, v in splits_a.items()} == {
            k: len(v.records) for k, v in splits_b.items()
        }
        assert sum(len(v.records) for v in splits_a.values()) == 12
        for name in ("train", "val", "test"):
            ta = (root_a / f"{name}.txt").read_bytes()
            tb = (root_b / f"{name}.txt").read_bytes()
            assert ta == tb
        ids = sorted(p.name for p in (root_a / "images").glob("*.png"))
        assert len(ids) == 12
        for pid in ids:
            pa = (root_a / "images" / pid).read_bytes()
            pb = (root_b / "images" / pid).read_bytes()
            assert pa == pb

    def test_loadable_and_legal(self, tmp_path):
        generate_dataset(tmp_path, 10, seed=1, size=48)
        splits = load_dataset(tmp_path)
        total = sum(len(s.records) for s in splits.values())
        assert total == 10

    def test_load_split_arrays_shapes(self, tmp_path):
        splits = generate_dataset(tmp_path, 8, seed=2, size=48)
        imgs, labels = load_split_arrays(tmp_path, splits["train"], 32, channels=3)
        assert imgs.shape[1:] == (32, 32, 3)
        assert labels.shape == (imgs.shape[0], 4)
        assert imgs.dtype == np.float64

    def test_fractions_control_split_sizes(self, tmp_path):
        splits = generate_dataset(tmp_path, 20, seed=3, size=48, fractions=(0.5, 0.25, 0.25))
        counts = {k: len(v.records) for k, v in splits.items()}
        assert counts == {"train": 10, "val": 5, "test": 5}
