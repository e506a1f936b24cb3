"""Tests for edgel detection and the gradient direction image."""

import io

import numpy as np
import pytest
from PIL import Image

from edgepose.edges import (
    EdgelSet,
    detect_edgelets,
    gradient_direction_image,
    load_gray,
)
from edgepose.errors import ConfigError, DataError


def vertical_step(width=100, height=80, col=50):
    img = np.zeros((height, width))
    img[:, col:] = 1.0
    return img


def bright_square(size=120, lo=30, hi=90):
    img = np.zeros((size, size))
    img[lo:hi, lo:hi] = 1.0
    return img


class TestGradientDirectionImage:
    def test_vertical_step_theta_zero(self):
        grad = gradient_direction_image(vertical_step())
        band = grad.theta[5:-5, 49:52]
        wrapped = np.minimum(band, np.pi - band)
        assert np.all(wrapped < 1e-9)
        assert grad.magnitude[40, 50] > 0.4

    def test_constant_image_zero_magnitude(self):
        grad = gradient_direction_image(np.full((32, 32), 0.37))
        np.testing.assert_allclose(grad.magnitude, 0.0, atol=1e-12)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(0)
        img = rng.random((64, 64))
        img = np.cumsum(np.cumsum(img, axis=0), axis=1) / 1000.0  # smooth-ish
        g = gradient_direction_image(img)
        gr = gradient_direction_image(np.rot90(img))
        # rotating the image by 90 deg rotates directions by pi/2, mod pi;
        # compare away from borders where the sobel padding differs
        inner = slice(2, -2)
        expected = np.mod(g.theta[inner, inner] + np.pi / 2, np.pi)
        got = np.rot90(gr.theta, k=-1)[inner, inner]
        diff = np.abs(expected - got) % np.pi
        diff = np.minimum(diff, np.pi - diff)
        mask = g.magnitude[inner, inner] > 1e-6
        assert diff[mask].max() < 1e-9

    def test_sample_nearest_clamps(self):
        grad = gradient_direction_image(vertical_step())
        vals = grad.sample_nearest(np.array([[-3.0, 5.0], [50.0, 40.0]]))
        assert vals.shape == (2,)


class TestDetectEdgelets:
    def test_constant_image_empty(self):
        out = detect_edgelets(np.full((64, 64), 0.5))
        assert len(out) == 0

    def test_vertical_step_orientation(self):
        out = detect_edgelets(vertical_step(), levels=1)
        assert len(out) > 20
        near = np.abs(out.positions[:, 0] - 49.5) < 2.0
        assert near.mean() > 0.9
        wrapped = np.minimum(
            np.abs(out.orientations - np.pi / 2),
            np.pi - np.abs(out.orientations - np.pi / 2),
        )
        assert np.all(wrapped < 0.05)

    def test_square_gives_two_orientation_clusters(self):
        out = detect_edgelets(bright_square(), levels=1)
        assert len(out) > 40
        horizontal = np.minimum(out.orientations, np.pi - out.orientations) < 0.05
        vertical = np.abs(out.orientations - np.pi / 2) < 0.05
        assert np.all(horizontal | vertical)
        assert horizontal.sum() > 10 and vertical.sum() > 10

    def test_multiscale_positions_rescaled(self):
        out1 = detect_edgelets(vertical_step(200, 160, col=100), levels=1)
        out2 = detect_edgelets(vertical_step(200, 160, col=100), levels=2)
        assert len(out2) >= len(out1)
        # all edgels, including coarse-level ones, stay near the true edge
        assert np.all(np.abs(out2.positions[:, 0] - 99.5) < 3.0)

    def test_deterministic(self):
        img = bright_square()
        a = detect_edgelets(img)
        b = detect_edgelets(img)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.orientations, b.orientations)

    def test_min_length_filters(self):
        img = np.zeros((40, 40))
        img[20, 18:23] = 1.0  # tiny blob, fitted segment shorter than 10
        out = detect_edgelets(img, levels=1, min_length=10.0)
        assert len(out) == 0

    def test_levels_validation(self):
        with pytest.raises(ConfigError):
            detect_edgelets(np.zeros((8, 8)), levels=0)


class TestEdgelSet:
    def test_orientation_canonicalized(self):
        s = EdgelSet(np.array([[1.0, 2.0]]), np.array([np.pi + 0.3]))
        assert abs(s.orientations[0] - 0.3) < 1e-12

    def test_length_mismatch_raises(self):
        with pytest.raises(DataError):
            EdgelSet(np.zeros((3, 2)), np.zeros(2))

    def test_csv_roundtrip(self, tmp_path):
        s = EdgelSet(np.array([[1.5, 2.5], [3.0, 4.0]]), np.array([0.1, 1.2]))
        path = tmp_path / "edgels.csv"
        s.to_csv(path)
        back = EdgelSet.from_csv(path)
        np.testing.assert_allclose(back.positions, s.positions)
        np.testing.assert_allclose(back.orientations, s.orientations)


class TestImageIO:
    def _roundtrip(self, fmt):
        img = (bright_square(64, 16, 48) * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format=fmt)
        return img, buf.getvalue()

    def test_png(self, tmp_path):
        img, data = self._roundtrip("PNG")
        path = tmp_path / "img.png"
        path.write_bytes(data)
        arr = load_gray(path)
        np.testing.assert_allclose(arr, img / 255.0, atol=1e-9)

    def test_pgm(self, tmp_path):
        img, data = self._roundtrip("PPM")  # PIL writes P5 for mode L
        assert data[:2] == b"P5"
        path = tmp_path / "img.pgm"
        path.write_bytes(data)
        arr = load_gray(path)
        np.testing.assert_allclose(arr, img / 255.0, atol=1e-9)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_gray(tmp_path / "nope.png")
