import numpy as np
import pytest

from kln.data import Dataset, synth_blobs
from kln.diagnostics import (
    HistogramResult,
    h_heatmap,
    kernel_histogram,
    separation_score,
    write_histogram_csv,
    write_matrix_csv,
    write_pgm,
)
from kln.errors import DataError
from kln.kernels import gaussian_mixture


def spec():
    return gaussian_mixture((1.0, 3.0, 5.0, 7.0, 9.0))


class TestHeatmap:
    def test_identical_samples_closed_form(self):
        # all-equal batch: K = ones, H entries 1/(n + lam)^2
        n, lam = 4, 0.01
        x = np.tile(np.linspace(0.1, 0.9, 6), (10, 1))
        ds = Dataset(x=x, y=np.zeros(10, dtype=int), n_classes=2)
        h, stats = h_heatmap(ds, spec(), None, batch_size=n, lam=lam, seed=0)
        want = np.full((n, n), 1.0 / (n + lam) ** 2)
        assert np.max(np.abs(h - want)) <= 1e-10
        assert stats["offdiag_cv"] == pytest.approx(0.0, abs=1e-9)

    def test_single_class_mode(self):
        ds = synth_blobs(3, 30, 4, 0.2, seed=1)
        h_mixed, _ = h_heatmap(ds, spec(), None, batch_size=20, lam=0.01, seed=2)
        h_single, _ = h_heatmap(ds, spec(), None, batch_size=20, lam=0.01, seed=2,
                                single_class=1)
        assert h_mixed.shape == h_single.shape == (20, 20)
        assert not np.array_equal(h_mixed, h_single)

    def test_insufficient_samples(self):
        ds = synth_blobs(2, 5, 3, 0.2, seed=3)
        with pytest.raises(DataError):
            h_heatmap(ds, spec(), None, batch_size=50, lam=0.01, seed=0)
        with pytest.raises(DataError):
            h_heatmap(ds, spec(), None, batch_size=6, lam=0.01, seed=0, single_class=0)

    def test_encode_hook_applied(self):
        ds = synth_blobs(2, 20, 4, 0.2, seed=4)
        collapse = lambda x: np.zeros((x.shape[0], 2))
        h, _ = h_heatmap(ds, spec(), collapse, batch_size=8, lam=0.5, seed=5)
        want = np.full((8, 8), 1.0 / (8 + 0.5) ** 2)
        assert np.max(np.abs(h - want)) <= 1e-12


class TestHistogram:
    def test_counts_sum_to_pairs(self):
        ds = synth_blobs(3, 20, 4, 0.3, seed=6)
        hist = kernel_histogram(ds, spec(), None, pairs=500, bins=20, seed=7)
        assert hist.count_same.sum() == 500
        assert hist.count_diff.sum() == 500
        assert np.all(hist.same_values >= 0) and np.all(hist.same_values <= 1)
        assert np.all(hist.diff_values >= 0) and np.all(hist.diff_values <= 1)

    def test_zero_spread_same_class_all_ones(self):
        ds = synth_blobs(3, 10, 4, 0.0, seed=8)
        hist = kernel_histogram(ds, spec(), None, pairs=200, bins=10, seed=9)
        assert np.all(hist.same_values == 1.0)
        assert hist.count_same[-1] == 200  # everything in the top bin

    def test_requires_labels_and_pairs(self):
        ds = synth_blobs(2, 10, 3, 0.2, seed=10)
        unlabeled = Dataset(x=ds.x, y=None, n_classes=2)
        with pytest.raises(DataError):
            kernel_histogram(unlabeled, spec(), None)
        with pytest.raises(DataError):
            kernel_histogram(ds, spec(), None, pairs=0)

    def test_class_with_one_sample_rejected(self):
        x = np.linspace(0, 1, 5).reshape(5, 1)
        ds = Dataset(x=x, y=np.array([0, 0, 0, 0, 1]), n_classes=2)
        with pytest.raises(DataError):
            kernel_histogram(ds, spec(), None, pairs=10, bins=5, seed=0)

    def test_deterministic_per_seed(self):
        ds = synth_blobs(3, 20, 4, 0.3, seed=11)
        h1 = kernel_histogram(ds, spec(), None, pairs=300, bins=15, seed=5)
        h2 = kernel_histogram(ds, spec(), None, pairs=300, bins=15, seed=5)
        assert np.array_equal(h1.same_values, h2.same_values)
        assert np.array_equal(h1.count_diff, h2.count_diff)


class TestSeparationScore:
    def test_identical_distributions_near_zero(self):
        rng = np.random.default_rng(12)
        vals = rng.random(5000)
        assert abs(separation_score(vals, vals)) == 0.0

    def test_extremes(self):
        assert separation_score(np.ones(10), np.zeros(10)) == 1.0

    def test_far_blobs_beat_overlapping_blobs(self):
        tight = synth_blobs(2, 40, 4, 0.02, seed=13)
        loose = synth_blobs(2, 40, 4, 1.5, seed=13)
        s = spec()
        h_tight = kernel_histogram(tight, s, None, pairs=400, bins=10, seed=14)
        h_loose = kernel_histogram(loose, s, None, pairs=400, bins=10, seed=14)
        sep_tight = separation_score(h_tight.same_values, h_tight.diff_values)
        sep_loose = separation_score(h_loose.same_values, h_loose.diff_values)
        assert sep_tight > sep_loose

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            separation_score(np.array([]), np.ones(3))


class TestExports:
    def test_matrix_csv_deterministic_and_exact(self, tmp_path):
        m = np.array([[1 / 3, 0.25], [0.125, 2 / 3]])
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_matrix_csv(p1, m)
        write_matrix_csv(p2, m)
        assert p1.read_bytes() == p2.read_bytes()
        rows = [[float(v) for v in line.split(",")]
                for line in p1.read_text().strip().splitlines()]
        assert np.array_equal(np.array(rows), m)

    def test_pgm_format(self, tmp_path):
        m = np.array([[0.0, 0.5], [0.75, 1.0]])
        path = tmp_path / "h.pgm"
        write_pgm(path, m)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n2 2\n255\n")
        payload = blob[len(b"P5\n2 2\n255\n"):]
        assert list(payload) == [0, 128, 191, 255]

    def test_pgm_constant_matrix(self, tmp_path):
        path = tmp_path / "flat.pgm"
        write_pgm(path, np.full((3, 3), 0.7))
        payload = path.read_bytes().split(b"255\n", 1)[1]
        assert set(payload) == {0}

    def test_histogram_csv_schema(self, tmp_path):
        hist = HistogramResult(
            bin_edges=np.array([0.0, 0.5, 1.0]),
            count_same=np.array([3, 7]),
            count_diff=np.array([9, 1]),
            same_values=np.zeros(10),
            diff_values=np.zeros(10),
        )
        path = tmp_path / "hist.csv"
        write_histogram_csv(path, hist)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_left,bin_right,count_same,count_diff"
        assert lines[1] == "0.0,0.5,3,9"
        assert lines[2] == "0.5,1.0,7,1"
