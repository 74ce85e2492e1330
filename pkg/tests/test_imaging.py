"""PNG writer and grid composition, decoded back through Pillow."""

import numpy as np
import pytest

PIL = pytest.importorskip("PIL.Image")

from advkit.errors import ShapeError
from advkit.imaging import compose_grid, export_grid, to_bytes, write_png


class TestToBytes:
    def test_rounds_half_up(self):
        got = to_bytes(np.array([0.0, 0.5, 1.0, 0.4999], dtype=np.float32))
        np.testing.assert_array_equal(got, [0, 128, 255, 127])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            to_bytes(np.array([1.2]))
        with pytest.raises(ValueError):
            to_bytes(np.array([-0.1]))


class TestWritePng:
    def test_grayscale_decodes_exactly(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, (9, 13), dtype=np.uint8)
        path = tmp_path / "g.png"
        write_png(path, pixels)
        img = PIL.open(path)
        assert img.mode == "L"
        assert img.size == (13, 9)  # PIL reports (width, height)
        np.testing.assert_array_equal(np.asarray(img), pixels)

    def test_rgb_decodes_exactly(self, tmp_path):
        rng = np.random.default_rng(1)
        pixels = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        path = tmp_path / "c.png"
        write_png(path, pixels)
        img = PIL.open(path)
        assert img.mode == "RGB"
        np.testing.assert_array_equal(np.asarray(img), pixels)

    def test_output_is_byte_deterministic(self, tmp_path):
        pixels = np.arange(64, dtype=np.uint8).reshape(8, 8)
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        write_png(p1, pixels)
        write_png(p2, pixels)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_channel_count(self, tmp_path):
        with pytest.raises(ShapeError):
            write_png(tmp_path / "x.png", np.zeros((4, 4, 2), dtype=np.uint8))


class TestComposeGrid:
    def test_three_rows_of_mnist_shapes(self):
        rows = [
            [np.zeros((28, 28, 1), dtype=np.float32) for _ in range(10)]
            for _ in range(3)
        ]
        grid = compose_grid(rows)
        assert grid.shape == (3 * 28, 10 * 28)

    def test_ragged_rows_pad_with_black(self):
        one = np.full((4, 4, 1), 1.0, dtype=np.float32)
        grid = compose_grid([[one, one], [one]])
        assert grid.shape == (8, 8)
        np.testing.assert_array_equal(grid[4:, 4:], np.zeros((4, 4)))
        np.testing.assert_array_equal(grid[:4, :4], np.full((4, 4), 255, np.uint8))

    def test_rgb_grid_keeps_channels(self):
        img = np.full((2, 2, 3), 0.5, dtype=np.float32)
        grid = compose_grid([[img, img]])
        assert grid.shape == (2, 4, 3)
        assert grid.dtype == np.uint8

    def test_mixed_shapes_rejected(self):
        a = np.zeros((4, 4, 1), dtype=np.float32)
        b = np.zeros((5, 5, 1), dtype=np.float32)
        with pytest.raises(ShapeError):
            compose_grid([[a, b]])

    def test_empty_grid_rejected(self):
        with pytest.raises(ShapeError):
            compose_grid([])


class TestExportGrid:
    def test_layout_matches_pixel_positions(self, tmp_path):
        # Put a unique constant in each cell and find it again after decode.
        values = np.linspace(0.1, 0.6, 6, dtype=np.float32).reshape(2, 3)
        rows = [
            [np.full((28, 28, 1), values[r, c], dtype=np.float32) for c in range(3)]
            for r in range(2)
        ]
        path = tmp_path / "grid.png"
        export_grid(rows, path)
        decoded = np.asarray(PIL.open(path))
        assert decoded.shape == (56, 84)
        expected = to_bytes(values)
        for r in range(2):
            for c in range(3):
                cell = decoded[r * 28:(r + 1) * 28, c * 28:(c + 1) * 28]
                assert cell.min() == cell.max() == expected[r, c]

    def test_reexport_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = [[rng.random((28, 28, 1), dtype=np.float32) for _ in range(4)]]
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        export_grid(rows, p1)
        export_grid(rows, p2)
        assert p1.read_bytes() == p2.read_bytes()
