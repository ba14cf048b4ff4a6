#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Тесты подготовки изображений"""

import numpy as np
import pytest
from PIL import Image

from anytsr.core.errors import DataError
from anytsr.utils.imaging import (
    LAPLACIAN,
    SOBEL_X,
    bicubic_resample,
    coord_axis,
    gradients,
    load_image,
    make_coord_grid,
    resample_matrix,
    sample_patch_pair,
    save_image,
)


class TestImageIO:
    def test_load_8bit(self, tmp_path):
        values = np.array([[0, 128, 255]] * 3, dtype=np.uint8)
        path = str(tmp_path / "a.png")
        Image.fromarray(values).save(path)
        img = load_image(path)
        assert img.shape == (3, 3)
        assert img[0, 2] == 1.0
        assert img[0, 0] == 0.0
        assert img[0, 1] == pytest.approx(128 / 255)

    @pytest.mark.parametrize("name", ["b.png", "b.pgm"])
    def test_16bit_save_load(self, tmp_path, rng, name):
        img = rng.uniform(size=(5, 7))
        path = str(tmp_path / name)
        save_image(path, img, bit_depth=16)
        loaded = load_image(path)
        assert loaded.shape == (5, 7)
        np.testing.assert_allclose(loaded, img, atol=1.0 / 65535)

    def test_8bit_save(self, tmp_path):
        path = str(tmp_path / "c.png")
        save_image(path, np.full((4, 4), 1.0), bit_depth=8)
        assert load_image(path).min() == 1.0

    def test_rejects_multichannel(self, tmp_path):
        path = str(tmp_path / "rgb.png")
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
        with pytest.raises(DataError):
            load_image(path)

    def test_rejects_tiny_and_missing(self, tmp_path):
        path = str(tmp_path / "tiny.png")
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(path)
        with pytest.raises(DataError):
            load_image(path)
        with pytest.raises(DataError, match="missing.png"):
            load_image(str(tmp_path / "missing.png"))

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"not an image")
        with pytest.raises(DataError):
            load_image(str(path))

    def test_16bit_midpoint(self, tmp_path):
        path = str(tmp_path / "mid.png")
        Image.fromarray(np.full((4, 4), 32768, dtype=np.uint16)).save(path)
        img = load_image(path)
        assert img[1, 2] == pytest.approx(32768 / 65535, abs=1e-12)
        assert round(float(img[1, 2]), 5) == 0.50001

    def test_save_rejects_depth(self, tmp_path):
        with pytest.raises(ValueError):
            save_image(str(tmp_path / "d.png"), np.zeros((3, 3)), bit_depth=12)


class TestBicubic:
    def test_same_size_is_identity(self, rng):
        img = rng.uniform(size=(9, 6))
        np.testing.assert_allclose(bicubic_resample(img, 9, 6), img, atol=1e-12)

    def test_rows_sum_to_one(self):
        for n_in, n_out in [(5, 12), (12, 5), (7, 7), (3, 17)]:
            np.testing.assert_allclose(resample_matrix(n_in, n_out).sum(axis=1), 1.0, atol=1e-12)

    def test_constant_stays_constant(self):
        out = bicubic_resample(np.full((6, 6), 0.3), 14, 9)
        np.testing.assert_allclose(out, 0.3, atol=1e-12)

    def test_kernel_values(self):
        # при удвоении строка 4 берет src = 1.75, отсчеты 0..3
        matrix = resample_matrix(8, 16)
        t = np.array([1.75, 0.75, 0.25, 1.25])
        a = -0.5
        near = (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
        far = a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
        expected = np.where(t <= 1, near, far)
        np.testing.assert_allclose(matrix[4, 0:4], expected, atol=1e-12)

    def test_affine_commutes(self, rng):
        img = rng.uniform(size=(7, 9))
        for a, b in [(2.5, -0.3), (-1.0, 4.0), (0.01, 0.5)]:
            left = bicubic_resample(a * img + b, 17, 5, clip=False)
            right = a * bicubic_resample(img, 17, 5, clip=False) + b
            np.testing.assert_allclose(left, right, atol=1e-9, rtol=0)

    def test_ramp_downsample_matches_kernel_sum(self):
        img = np.add.outer(3.0 * np.arange(8), np.arange(8)) / 31.0

        def kernel(t):
            t = abs(t)
            if t <= 1:
                return 1.5 * t ** 3 - 2.5 * t ** 2 + 1
            if t < 2:
                return -0.5 * t ** 3 + 2.5 * t ** 2 - 4 * t + 2
            return 0.0

        def taps(o):
            src = (o + 0.5) * 2.0 - 0.5
            base = int(np.floor(src))
            return [(min(max(base + m, 0), 7), kernel(src - (base + m))) for m in (-1, 0, 1, 2)]

        expected = np.zeros((4, 4))
        for oy in range(4):
            for ox in range(4):
                expected[oy, ox] = sum(wy * wx * img[iy, ix] for iy, wy in taps(oy) for ix, wx in taps(ox))
        np.testing.assert_allclose(bicubic_resample(img, 4, 4, clip=False), expected, atol=1e-12)

    def test_clip(self):
        img = np.zeros((6, 6))
        img[2:4, 2:4] = 1.0
        assert bicubic_resample(img, 15, 15).max() <= 1.0
        assert bicubic_resample(img, 15, 15, clip=False).max() > 1.0

    def test_rejects_empty_output(self):
        with pytest.raises(ValueError):
            bicubic_resample(np.zeros((4, 4)), 0, 4)


class TestGradients:
    def test_constant_image(self):
        stack = gradients(np.full((5, 6), 0.7))
        for grad in (stack.gx, stack.gy, stack.lap):
            assert grad.shape == (5, 6)
            np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_horizontal_ramp(self):
        img = np.tile(np.arange(6, dtype=np.float64), (5, 1))
        stack = gradients(img)
        np.testing.assert_allclose(stack.gx[:, 1:-1], 8.0)
        # повтор края: разность 1 вместо 2
        np.testing.assert_allclose(stack.gx[:, 0], 4.0)
        np.testing.assert_allclose(stack.gy, 0.0)
        np.testing.assert_allclose(stack.lap[:, 1:-1], 0.0)

    def test_matches_direct_correlation(self, rng):
        img = rng.uniform(size=(4, 5))
        padded = np.pad(img, 1, mode="edge")
        stack = gradients(img)
        i, j = 2, 3
        window = padded[i:i + 3, j:j + 3]
        assert stack.gx[i, j] == pytest.approx(float((window * SOBEL_X).sum()))
        assert stack.lap[i, j] == pytest.approx(float((window * LAPLACIAN).sum()))

    def test_linear(self, rng):
        img = rng.uniform(size=(6, 7))
        other = rng.uniform(size=(6, 7))
        a, b = 1.7, -0.4
        combined = gradients(a * img + b * other)
        first, second = gradients(img), gradients(other)
        for name in ("gx", "gy", "lap"):
            expected = a * getattr(first, name) + b * getattr(second, name)
            np.testing.assert_allclose(getattr(combined, name), expected, atol=1e-9, rtol=0)

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            gradients(np.zeros((2, 4)))


class TestCoordGrid:
    def test_cell_centers(self):
        grid = make_coord_grid(2, 4)
        assert grid.shape == (2, 4, 2)
        np.testing.assert_allclose(grid[:, 0, 0], [-0.5, 0.5])
        np.testing.assert_allclose(grid[0, :, 1], [-0.75, -0.25, 0.25, 0.75])

    def test_strictly_increasing_inside(self):
        axis = coord_axis(7)
        assert np.all(np.diff(axis) > 0)
        assert axis.min() > -1.0 and axis.max() < 1.0

    @pytest.mark.parametrize("h, w", [(1, 1), (3, 8), (16, 5), (157, 64)])
    def test_spacing(self, h, w):
        grid = make_coord_grid(h, w)
        if h > 1:
            np.testing.assert_allclose(np.diff(grid[:, 0, 0]), 2.0 / h, rtol=0, atol=1e-15)
        if w > 1:
            np.testing.assert_allclose(np.diff(grid[0, :, 1]), 2.0 / w, rtol=0, atol=1e-15)
        np.testing.assert_allclose(grid[0, 0], [-1.0 + 1.0 / h, -1.0 + 1.0 / w], rtol=0, atol=1e-15)


class TestPatchSampling:
    def test_shapes_and_bounds(self, rng):
        hr = rng.uniform(size=(40, 40))
        pair = sample_patch_pair(hr, 2.7, 6, rng)
        assert pair.lr.shape == (6, 6)
        assert pair.gt_coords.shape == (36, 2)
        assert pair.gt_values.shape == (36,)
        assert pair.scale == 2.7
        assert np.all(np.abs(pair.gt_coords) < 1.0)
        # без возвращения
        assert len({tuple(c) for c in pair.gt_coords}) == 36

    def test_values_match_coordinates(self, rng):
        hr = rng.uniform(size=(8, 8))
        pair = sample_patch_pair(hr, 2.0, 4, rng)
        rows = np.round((pair.gt_coords[:, 0] + 1.0) * 8 / 2.0 - 0.5).astype(int)
        cols = np.round((pair.gt_coords[:, 1] + 1.0) * 8 / 2.0 - 0.5).astype(int)
        np.testing.assert_array_equal(hr[rows, cols], pair.gt_values)
        np.testing.assert_allclose(pair.lr, bicubic_resample(hr, 4, 4))

    def test_scale_one(self, rng):
        hr = rng.uniform(size=(10, 10))
        pair = sample_patch_pair(hr, 1.0, 10, rng)
        np.testing.assert_allclose(pair.lr, hr, atol=1e-12)

    def test_too_small(self, rng):
        with pytest.raises(DataError):
            sample_patch_pair(np.zeros((20, 20)), 4.0, 8, rng)
        with pytest.raises(ValueError):
            sample_patch_pair(np.zeros((20, 20)), 0.5, 8, rng)
