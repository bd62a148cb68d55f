import struct

import numpy as np
import pytest

from kln.data import (
    Dataset,
    class_prior,
    load_idx,
    load_idx_images,
    load_idx_labels,
    onehot,
    save_idx_images,
    save_idx_labels,
    split_labeled,
    synth_blobs,
    to_csv,
    train_test_split,
)
from kln.errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    TruncatedFileError,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def write_images(path, pixel_rows, rows=2, cols=2):
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, len(pixel_rows), rows, cols))
        for px in pixel_rows:
            f.write(bytes(px))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, len(labels)))
        f.write(bytes(labels))


class TestIdx:
    def test_fixture_exact_floats(self, tmp_path):
        img = tmp_path / "images"
        write_images(img, [[0, 51, 102, 255], [255, 0, 255, 0]])
        x = load_idx_images(img)
        assert x.shape == (2, 4)
        assert np.array_equal(
            x, np.array([[0.0, 51 / 255, 102 / 255, 1.0], [1.0, 0.0, 1.0, 0.0]])
        )

    def test_full_dataset(self, tmp_path):
        img, lab = tmp_path / "images", tmp_path / "labels"
        write_images(img, [[0, 0, 0, 0], [255, 255, 255, 255]])
        write_labels(lab, [3, 7])
        ds = load_idx(img, lab)
        assert ds.n == 2 and ds.dim == 4 and ds.n_classes == 10
        assert list(ds.y) == [3, 7]

    def test_gzip_supported(self, tmp_path):
        import gzip

        raw = struct.pack(">ii", LABELS_MAGIC, 3) + bytes([1, 2, 3])
        path = tmp_path / "labels.gz"
        with gzip.open(path, "wb") as f:
            f.write(raw)
        assert list(load_idx_labels(path)) == [1, 2, 3]

    def test_bad_magic_image_file(self, tmp_path):
        # a labels magic where images are expected
        path = tmp_path / "images"
        with open(path, "wb") as f:
            f.write(struct.pack(">iiii", LABELS_MAGIC, 1, 2, 2))
            f.write(bytes(4))
        with pytest.raises(BadMagicError) as exc:
            load_idx_images(path)
        assert exc.value.offset == 0

    def test_truncated_payload_names_offset(self, tmp_path):
        path = tmp_path / "images"
        with open(path, "wb") as f:
            f.write(struct.pack(">iiii", IMAGES_MAGIC, 2, 2, 2))
            f.write(bytes(5))  # 8 expected
        with pytest.raises(TruncatedFileError) as exc:
            load_idx_images(path)
        assert exc.value.offset == 16 + 5

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "images"
        path.write_bytes(struct.pack(">i", IMAGES_MAGIC) + b"\x00\x00")
        with pytest.raises(TruncatedFileError):
            load_idx_images(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "labels"
        with open(path, "wb") as f:
            f.write(struct.pack(">ii", LABELS_MAGIC, 1))
            f.write(bytes([1, 99]))
        with pytest.raises(TruncatedFileError):
            load_idx_labels(path)

    def test_count_mismatch(self, tmp_path):
        img, lab = tmp_path / "images", tmp_path / "labels"
        write_images(img, [[0, 0, 0, 0]])
        write_labels(lab, [1, 2])
        with pytest.raises(CountMismatchError):
            load_idx(img, lab)

    def test_round_trip_bytes_exact(self, tmp_path):
        img, lab = tmp_path / "images", tmp_path / "labels"
        rng = np.random.default_rng(0)
        pixels = [list(rng.integers(0, 256, 4)) for _ in range(3)]
        labels = [0, 5, 9]
        write_images(img, pixels)
        write_labels(lab, labels)
        x = load_idx_images(img)
        y = load_idx_labels(lab)
        img2, lab2 = tmp_path / "images2", tmp_path / "labels2"
        save_idx_images(img2, x, rows=2, cols=2)
        save_idx_labels(lab2, y)
        assert img.read_bytes() == img2.read_bytes()
        assert lab.read_bytes() == lab2.read_bytes()


class TestDatasetInvariants:
    def test_range_enforced(self):
        with pytest.raises(DataError):
            Dataset(x=np.array([[1.5]]), y=None, n_classes=2)

    def test_label_range_enforced(self):
        with pytest.raises(DataError):
            Dataset(x=np.zeros((2, 2)), y=np.array([0, 5]), n_classes=3)

    def test_label_count_enforced(self):
        with pytest.raises(DataError):
            Dataset(x=np.zeros((2, 2)), y=np.array([0]), n_classes=3)


class TestSynthBlobs:
    def test_deterministic(self):
        a = synth_blobs(3, 10, 4, 0.2, seed=5)
        b = synth_blobs(3, 10, 4, 0.2, seed=5)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_zero_spread_within_class_identical(self):
        ds = synth_blobs(3, 5, 6, 0.0, seed=1)
        for c in range(3):
            rows = ds.x[ds.y == c]
            assert np.all(rows == rows[0])
        # distinct classes occupy distinct points, so a nearest-mean rule is exact
        means = np.array([ds.x[ds.y == c][0] for c in range(3)])
        d = np.linalg.norm(ds.x[:, None, :] - means[None], axis=2)
        assert np.array_equal(np.argmin(d, axis=1), ds.y)

    def test_features_in_unit_range(self):
        ds = synth_blobs(4, 20, 8, 1.5, seed=2)
        assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0

    def test_counts(self):
        ds = synth_blobs(4, 7, 3, 0.1, seed=3)
        assert ds.n == 28
        assert np.array_equal(np.bincount(ds.y), [7, 7, 7, 7])

    def test_invalid_args(self):
        with pytest.raises(DataError):
            synth_blobs(1, 5, 2, 0.1, seed=0)
        with pytest.raises(DataError):
            synth_blobs(2, 0, 2, 0.1, seed=0)


class TestSplits:
    def test_split_labeled_counts(self):
        ds = synth_blobs(5, 40, 4, 0.3, seed=4)
        labeled, full = split_labeled(ds, 25, seed=9)
        assert labeled.n == 25
        assert np.array_equal(np.bincount(labeled.y, minlength=5), [5] * 5)
        assert full is ds

    def test_full_split_is_permutation(self):
        ds = synth_blobs(2, 10, 3, 0.2, seed=5)
        labeled, _ = split_labeled(ds, 20, seed=1)
        order = np.lexsort(labeled.x.T)
        base = np.lexsort(ds.x.T)
        assert np.array_equal(labeled.x[order], ds.x[base])

    def test_different_seeds_differ(self):
        ds = synth_blobs(2, 50, 3, 0.2, seed=6)
        a, _ = split_labeled(ds, 10, seed=1)
        b, _ = split_labeled(ds, 10, seed=2)
        assert not np.array_equal(a.x, b.x)
        assert np.array_equal(np.bincount(a.y), np.bincount(b.y))

    def test_indivisible_count_rejected(self):
        ds = synth_blobs(3, 10, 2, 0.2, seed=7)
        with pytest.raises(DataError):
            split_labeled(ds, 10, seed=0)

    def test_class_too_small(self):
        # unbalanced pool: class 1 cannot supply 2 of the 4 requested labels
        x = np.linspace(0, 1, 6).reshape(6, 1)
        ds = Dataset(x=x, y=np.array([0, 0, 0, 0, 0, 1]), n_classes=2)
        with pytest.raises(DataError):
            split_labeled(ds, 4, seed=0)

    def test_train_test_split_stratified(self):
        ds = synth_blobs(4, 40, 3, 0.2, seed=9)
        tr, te = train_test_split(ds, 0.25, seed=3)
        assert tr.n + te.n == ds.n
        assert np.array_equal(np.bincount(te.y, minlength=4), [10] * 4)


class TestHelpers:
    def test_onehot(self):
        got = onehot([0, 2, 1], 3)
        assert np.array_equal(got, np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=float))

    def test_class_prior(self):
        prior = class_prior([0, 0, 1, 2], 4)
        assert np.allclose(prior, [0.5, 0.25, 0.25, 0.0])

    def test_csv_export(self, tmp_path):
        ds = synth_blobs(2, 3, 2, 0.1, seed=10)
        path = tmp_path / "blobs.csv"
        to_csv(ds, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "f0,f1,label"
        assert len(lines) == 1 + ds.n
        first = lines[1].split(",")
        assert float(first[0]) == ds.x[0, 0]
        assert int(first[2]) == ds.y[0]

    def test_csv_deterministic(self, tmp_path):
        ds = synth_blobs(2, 3, 2, 0.1, seed=11)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        to_csv(ds, p1)
        to_csv(ds, p2)
        assert p1.read_bytes() == p2.read_bytes()
