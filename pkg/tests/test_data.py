"""Dataset file formats, scaling, split invariants, deterministic resplits."""

import struct

import numpy as np
import pytest

from advkit.data import (
    CIFAR_RECORD_BYTES,
    DatasetSplit,
    interleaved_to_planar,
    load_cifar_bin,
    load_dataset,
    load_idx,
    load_mnist,
    planar_to_interleaved,
    resplit,
    scale,
)
from advkit.errors import FormatError, ShapeError
from advkit.synth import (
    write_cifar_batch,
    write_cifar_corpus,
    write_idx_images,
    write_idx_labels,
    write_mnist_corpus,
)


@pytest.fixture()
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (7, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 7).astype(np.uint8)
    ip, lp = tmp_path / "imgs", tmp_path / "lbls"
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    return ip, lp, images, labels


class TestIdx:
    def test_round_trip(self, idx_pair):
        ip, lp, images, labels = idx_pair
        got_x, got_y = load_idx(ip, lp)
        assert got_x.shape == (7, 28, 28, 1)
        np.testing.assert_array_equal(got_x[..., 0], images)
        np.testing.assert_array_equal(got_y, labels)

    def test_header_layout_is_big_endian(self, idx_pair):
        ip, _, _, _ = idx_pair
        raw = ip.read_bytes()
        magic, n, h, w = struct.unpack(">IIII", raw[:16])
        assert (magic, n, h, w) == (0x00000803, 7, 28, 28)
        assert len(raw) == 16 + 7 * 28 * 28

    def test_bad_magic_names_offset(self, idx_pair, tmp_path):
        ip, lp, _, _ = idx_pair
        raw = bytearray(ip.read_bytes())
        raw[0] = 0xFF
        bad = tmp_path / "bad"
        bad.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic.*offset 0"):
            load_idx(bad, lp)

    def test_truncation_names_offset(self, idx_pair, tmp_path):
        ip, lp, _, _ = idx_pair
        raw = ip.read_bytes()[:-10]
        bad = tmp_path / "short"
        bad.write_bytes(raw)
        with pytest.raises(FormatError, match="truncated.*offset"):
            load_idx(bad, lp)

    def test_trailing_bytes_rejected(self, idx_pair, tmp_path):
        ip, lp, _, _ = idx_pair
        bad = tmp_path / "long"
        bad.write_bytes(ip.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_idx(bad, lp)

    def test_count_mismatch_rejected(self, idx_pair, tmp_path):
        ip, _, _, _ = idx_pair
        lp2 = tmp_path / "fewer"
        write_idx_labels(lp2, np.zeros(3, dtype=np.uint8))
        with pytest.raises(FormatError, match="7 images but .* 3 labels"):
            load_idx(ip, lp2)

    def test_label_out_of_range_rejected(self, idx_pair, tmp_path):
        ip, _, _, _ = idx_pair
        lp2 = tmp_path / "high"
        labels = np.zeros(7, dtype=np.uint8)
        labels[4] = 11
        write_idx_labels(lp2, labels)
        with pytest.raises(FormatError, match="label 11 .* record 4"):
            load_idx(ip, lp2)


class TestCifarBin:
    def test_round_trip_and_planar_layout(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, (5, 32, 32, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, 5).astype(np.uint8)
        path = tmp_path / "batch.bin"
        write_cifar_batch(path, images, labels)
        raw = path.read_bytes()
        assert len(raw) == 5 * CIFAR_RECORD_BYTES
        # Record layout: label byte, then the full red plane first.
        assert raw[0] == labels[0]
        assert raw[1] == images[0, 0, 0, 0]
        assert raw[1 + 1024] == images[0, 0, 0, 1]
        got_x, got_y = load_cifar_bin(path)
        np.testing.assert_array_equal(got_x, images)
        np.testing.assert_array_equal(got_y, labels)

    def test_partial_record_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * (CIFAR_RECORD_BYTES + 5))
        with pytest.raises(FormatError, match="not a multiple"):
            load_cifar_bin(path)

    def test_label_range_checked(self, tmp_path):
        blob = bytearray(CIFAR_RECORD_BYTES)
        blob[0] = 12
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="label 12"):
            load_cifar_bin(path)

    def test_multiple_batches_concatenate_in_order(self, tmp_path):
        a = np.zeros((2, 32, 32, 3), dtype=np.uint8)
        b = np.full((3, 32, 32, 3), 9, dtype=np.uint8)
        pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
        write_cifar_batch(pa, a, np.array([1, 2], dtype=np.uint8))
        write_cifar_batch(pb, b, np.array([3, 4, 5], dtype=np.uint8))
        got_x, got_y = load_cifar_bin([pa, pb])
        assert got_x.shape == (5, 32, 32, 3)
        np.testing.assert_array_equal(got_y, [1, 2, 3, 4, 5])

    def test_planar_interleaved_inverse(self):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, (4, 32, 32, 3), dtype=np.uint8)
        np.testing.assert_array_equal(
            planar_to_interleaved(interleaved_to_planar(images)), images
        )


class TestScale:
    def test_endpoints_and_fifth(self):
        got = scale(np.array([0, 255, 51], dtype=np.uint8))
        assert got.dtype == np.float32
        np.testing.assert_allclose(got, [0.0, 1.0, 0.2], rtol=1e-7)

    def test_rejects_non_uint8(self):
        with pytest.raises(ShapeError):
            scale(np.zeros(3, dtype=np.float32))


def _tiny_split(n_train=8, n_test=4, seed=0):
    rng = np.random.default_rng(seed)
    return DatasetSplit(
        dataset="mnist",
        train_images=rng.random((n_train, 28, 28, 1), dtype=np.float32),
        train_labels=rng.integers(0, 10, n_train),
        test_images=rng.random((n_test, 28, 28, 1), dtype=np.float32),
        test_labels=rng.integers(0, 10, n_test),
    )


class TestDatasetSplit:
    def test_validates_scaling(self):
        with pytest.raises(ShapeError, match="scaled"):
            DatasetSplit(
                dataset="mnist",
                train_images=np.full((1, 28, 28, 1), 2.0, dtype=np.float32),
                train_labels=np.array([0]),
                test_images=np.zeros((1, 28, 28, 1), dtype=np.float32),
                test_labels=np.array([0]),
            )

    def test_validates_label_range(self):
        with pytest.raises(ShapeError, match="labels"):
            DatasetSplit(
                dataset="mnist",
                train_images=np.zeros((1, 28, 28, 1), dtype=np.float32),
                train_labels=np.array([10]),
                test_images=np.zeros((1, 28, 28, 1), dtype=np.float32),
                test_labels=np.array([0]),
            )

    def test_validates_count_agreement(self):
        with pytest.raises(ShapeError, match="images vs"):
            DatasetSplit(
                dataset="mnist",
                train_images=np.zeros((2, 28, 28, 1), dtype=np.float32),
                train_labels=np.array([0]),
                test_images=np.zeros((1, 28, 28, 1), dtype=np.float32),
                test_labels=np.array([0]),
            )

    def test_resplit_is_deterministic_and_preserves_data(self):
        split = _tiny_split()
        a = resplit(split, seed=3)
        b = resplit(split, seed=3)
        np.testing.assert_array_equal(a.train_images, b.train_images)
        np.testing.assert_array_equal(a.test_labels, b.test_labels)
        assert a.counts() == split.counts()
        assert a.seed == 3
        # Same multiset of images overall.
        pool = np.concatenate([split.train_images, split.test_images])
        re_pool = np.concatenate([a.train_images, a.test_images])
        assert sorted(pool.sum(axis=(1, 2, 3))) == pytest.approx(
            sorted(re_pool.sum(axis=(1, 2, 3)))
        )

    def test_resplit_seed_changes_partition(self):
        split = _tiny_split(n_train=40, n_test=10)
        a, b = resplit(split, seed=0), resplit(split, seed=1)
        assert not np.array_equal(a.train_images, b.train_images)


class TestCorpusWriters:
    def test_mnist_corpus_loads_and_is_balanced(self, tmp_path):
        write_mnist_corpus(tmp_path, train_per_class=12, test_per_class=3, seed=0)
        split = load_mnist(tmp_path, strict_counts=False)
        assert split.counts() == (120, 30)
        hist = np.bincount(split.train_labels, minlength=10)
        np.testing.assert_array_equal(hist, np.full(10, 12))
        assert split.train_images.min() >= 0.0
        assert split.train_images.max() <= 1.0

    def test_strict_counts_reject_desk_corpus(self, tmp_path):
        write_mnist_corpus(tmp_path, train_per_class=2, test_per_class=1, seed=0)
        with pytest.raises(FormatError, match="official"):
            load_mnist(tmp_path)

    def test_corpus_written_twice_is_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        write_mnist_corpus(d1, train_per_class=5, test_per_class=2, seed=9)
        write_mnist_corpus(d2, train_per_class=5, test_per_class=2, seed=9)
        for name in ("train-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_cifar_corpus_loads(self, tmp_path):
        write_cifar_corpus(tmp_path, train_per_class=4, test_per_class=2, seed=0)
        split = load_dataset("cifar10", tmp_path, strict_counts=False)
        assert split.counts() == (40, 20)
        assert split.train_images.shape[1:] == (32, 32, 3)

    def test_unknown_dataset_name(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset("emnist", tmp_path)
