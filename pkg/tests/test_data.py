"""Dataset generation, IO round trips, splits, and preprocessing."""

import os

import numpy as np
import pytest

from ssl_distill.data import (
    BlankImageError,
    FractionRangeError,
    GeneratorConfig,
    ManifestConsistencyError,
    ManifestEntry,
    ManifestError,
    binary_from_grade,
    generate_synthetic,
    labeled_hash,
    load_dataset,
    make_split,
    preprocess,
    read_manifest,
    read_ppm,
    render_sample,
    write_manifest,
    write_ppm,
)
from ssl_distill.metrics import auc
from ssl_distill.rng import RngState


class TestGradeMapping:
    def test_threshold_at_two(self):
        assert [binary_from_grade(g) for g in range(5)] == [0, 0, 1, 1, 1]


class TestPpmRoundTrip:
    def test_quantization_bound(self, tmp_path):
        gen = np.random.default_rng(0)
        img = gen.random((3, 9, 13)).astype(np.float32)
        path = str(tmp_path / "x.ppm")
        write_ppm(path, img)
        back = read_ppm(path)
        assert back.shape == (3, 9, 13)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-7

    def test_exact_on_quantized_values(self, tmp_path):
        img = (np.arange(3 * 4 * 4).reshape(3, 4, 4) % 256 / 255.0).astype(np.float32)
        path = str(tmp_path / "q.ppm")
        write_ppm(path, img)
        assert np.array_equal(read_ppm(path), img.astype(np.float32))

    def test_rejects_non_p6(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n2 2\n255\n")
        with pytest.raises(ValueError):
            read_ppm(str(path))

    def test_rejects_truncated_raster(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n\x00\x01")
        with pytest.raises(ValueError):
            read_ppm(str(path))


class TestManifest:
    def entries(self):
        return [
            ManifestEntry("a.ppm", 0, 0, "train"),
            ManifestEntry("b.ppm", 3, 1, "test"),
        ]

    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "manifest.csv")
        write_manifest(path, self.entries())
        assert read_manifest(path) == self.entries()

    def test_id_strips_extension(self):
        assert ManifestEntry("train_00042.ppm", 2, 1, "train").id == "train_00042"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("filename,grade\nx.ppm,0\n")
        with pytest.raises(ManifestError):
            read_manifest(str(path))

    def test_inconsistent_label_flagged_with_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("filename,grade,binary_label,split\nx.ppm,3,0,train\n")
        with pytest.raises(ManifestConsistencyError, match="line 2"):
            read_manifest(str(path))

    def test_bad_grade_range(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("filename,grade,binary_label,split\nx.ppm,7,1,train\n")
        with pytest.raises(ManifestError):
            read_manifest(str(path))

    def test_bad_split_token(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("filename,grade,binary_label,split\nx.ppm,0,0,valid\n")
        with pytest.raises(ManifestError):
            read_manifest(str(path))


class TestRenderer:
    def test_deterministic_per_id(self):
        a = render_sample("train_00000", 2, 32, RngState(7))
        b = render_sample("train_00000", 2, 32, RngState(7))
        assert np.array_equal(a, b)

    def test_distinct_ids_differ(self):
        a = render_sample("train_00000", 2, 32, RngState(7))
        b = render_sample("train_00001", 2, 32, RngState(7))
        assert not np.array_equal(a, b)

    def test_range_and_dtype(self):
        img = render_sample("x", 4, 32, RngState(0))
        assert img.dtype == np.float32
        assert img.shape == (3, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestGenerateAndLoad:
    def test_corpus_round_trip(self, small_dataset):
        root, entries = small_dataset
        assert len(entries) == 120 + 48
        samples = load_dataset(root)
        assert len(samples) == len(entries)
        by_split = {"train": 0, "test": 0}
        for e in entries:
            by_split[e.split] += 1
            s = samples[e.id]
            assert s.grade == e.grade
            assert s.binary_label == binary_from_grade(e.grade)
            assert s.pixels.shape == (3, 32, 32)
        assert by_split == {"train": 120, "test": 48}

    def test_regeneration_is_identical(self, small_dataset, tmp_path):
        root, entries = small_dataset
        cfg = GeneratorConfig(n_train=120, n_test=48, image_size=32, seed=11)
        again = generate_synthetic(cfg, str(tmp_path / "again"))
        assert again == entries
        a = load_dataset(root)
        b = load_dataset(str(tmp_path / "again"))
        for sid in a:
            assert np.array_equal(a[sid].pixels, b[sid].pixels)

    def test_label_signal_is_learnable(self, small_dataset):
        # blob-pixel evidence must separate classes far better than chance
        root, entries = small_dataset
        samples = load_dataset(root)
        scores, labels = [], []
        for e in entries:
            px = samples[e.id].pixels
            # bright yellowish lesions push green up relative to blue
            scores.append(float((px[1] - px[2]).max()))
            labels.append(e.binary_label)
        assert auc(scores, labels) > 0.8

    def test_validation(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_train=0).validate()
        with pytest.raises(ValueError):
            GeneratorConfig(image_size=8).validate()
        with pytest.raises(ValueError):
            GeneratorConfig(grade_distribution=(1.0, 0.2, 0.2, 0.1, 0.05)).validate()


class TestPreprocess:
    def disc_image(self, h=48, w=64, cy=20, cx=40, r=10):
        img = np.zeros((3, h, w), dtype=np.float32)
        yy, xx = np.mgrid[0:h, 0:w]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[:, mask] = 0.6
        return img

    def test_output_shape(self):
        out = preprocess(self.disc_image(), 32)
        assert out.shape == (3, 32, 32)

    def test_centers_on_disc(self):
        # off-center disc ends up centered: the four corners stay dark
        out = preprocess(self.disc_image(cy=14, cx=50), 33)
        assert out[:, 16, 16].mean() > 0.3
        for y, x in ((0, 0), (0, 32), (32, 0), (32, 32)):
            assert out[:, y, x].mean() < 0.1

    def test_blank_image_rejected(self):
        with pytest.raises(BlankImageError):
            preprocess(np.zeros((3, 32, 32), dtype=np.float32), 16)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            preprocess(np.zeros((32, 32), dtype=np.float32), 16)


class TestSplit:
    def entries(self, n_train=40, n_test=10):
        out = []
        for i in range(n_train):
            out.append(ManifestEntry(f"train_{i:05d}.ppm", 0, 0, "train"))
        for i in range(n_test):
            out.append(ManifestEntry(f"test_{i:05d}.ppm", 2, 1, "test"))
        return out

    def test_partition_laws(self):
        split = make_split(self.entries(), 0.25, seed=3)
        assert len(split.labeled_ids) == 10
        assert len(split.unlabeled_ids) == 30
        assert split.labeled_ids & split.unlabeled_ids == frozenset()
        train_ids = {e.id for e in self.entries() if e.split == "train"}
        assert split.labeled_ids | split.unlabeled_ids == train_ids
        assert split.test_ids == {e.id for e in self.entries() if e.split == "test"}

    def test_deterministic_per_seed(self):
        a = make_split(self.entries(), 0.25, seed=3)
        b = make_split(self.entries(), 0.25, seed=3)
        c = make_split(self.entries(), 0.25, seed=4)
        assert a.labeled_ids == b.labeled_ids
        assert a.labeled_ids != c.labeled_ids

    def test_rounding_half_up(self):
        # 5% of 41 = 2.05 -> 2; 0.0125 of 40 = 0.5 -> rounds to 1
        split = make_split(self.entries(41), 0.05, seed=0)
        assert len(split.labeled_ids) == 2
        split = make_split(self.entries(40), 0.0125, seed=0)
        assert len(split.labeled_ids) == 1

    def test_at_least_one_labeled(self):
        split = make_split(self.entries(40), 0.001, seed=0)
        assert len(split.labeled_ids) == 1

    def test_full_fraction(self):
        split = make_split(self.entries(), 1.0, seed=0)
        assert len(split.unlabeled_ids) == 0

    def test_fraction_range(self):
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(FractionRangeError):
                make_split(self.entries(), bad, seed=0)


class TestLabeledHash:
    def test_order_insensitive(self):
        assert labeled_hash(["b", "a"]) == labeled_hash(["a", "b"])

    def test_content_sensitive(self):
        assert labeled_hash(["a", "b"]) != labeled_hash(["a", "c"])

    def test_32_bytes(self):
        assert len(labeled_hash(["a"])) == 32
