"""Edgel extraction from grayscale images.

The detector is deliberately simple: threshold the gradient magnitude,
region-grow pixels with coherent gradient directions, fit one straight
segment per region by total least squares, and emit edgels at unit spacing
along each surviving segment. Running it over a small Gaussian pyramid picks
up softer edges that only stand out at coarser scales. Orientations are
always edge directions (along the segment), pi-periodic in [0, pi).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class EdgelSet:
    """Edge pixels with sub-pixel positions (x, y) and edge orientations."""

    positions: np.ndarray  # (n, 2) float
    orientations: np.ndarray  # (n,) float, canonical in [0, pi)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 2)
        ori = np.mod(np.asarray(self.orientations, dtype=float).reshape(-1), np.pi)
        if pos.shape[0] != ori.shape[0]:
            raise DataError("positions and orientations length mismatch")
        pos.flags.writeable = False
        ori.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", ori)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @staticmethod
    def empty() -> "EdgelSet":
        return EdgelSet(np.zeros((0, 2)), np.zeros(0))

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.positions, self.orientations])
        np.savetxt(path, rows, delimiter=",", header="x,y,theta", comments="")

    @staticmethod
    def from_csv(path) -> "EdgelSet":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.size == 0:
            return EdgelSet.empty()
        return EdgelSet(rows[:, :2], rows[:, 2])


@dataclass(frozen=True)
class GradientDirectionImage:
    """Per-pixel gradient direction (radians, [0, pi)) and magnitude."""

    theta: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self):
        if self.theta.shape != self.magnitude.shape:
            raise DataError("theta and magnitude shapes differ")

    @property
    def height(self) -> int:
        return self.theta.shape[0]

    @property
    def width(self) -> int:
        return self.theta.shape[1]

    def sample_nearest(self, xy: np.ndarray) -> np.ndarray:
        """Nearest-neighbor theta at sub-pixel positions (clamped to bounds)."""
        xy = np.atleast_2d(xy)
        ix = np.clip(np.rint(xy[:, 0]).astype(int), 0, self.width - 1)
        iy = np.clip(np.rint(xy[:, 1]).astype(int), 0, self.height - 1)
        return self.theta[iy, ix]


def load_gray(path) -> np.ndarray:
    """Load an 8-bit grayscale image (PGM P5 or PNG) as float in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I;16", "P", "1"):
                im = im.convert("L")
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except FileNotFoundError:
        raise ConfigError(f"image not found: {path}")
    except Exception as exc:  # PIL raises a zoo of decode errors
        raise DataError(f"cannot decode image {path}: {exc}")
    return arr / 255.0


def gradient_direction_image(img: np.ndarray) -> GradientDirectionImage:
    """Sobel gradient direction (reduced to [0, pi)) and magnitude.

    Magnitudes are normalized so a unit intensity step yields ~1.
    """
    img = np.asarray(img, dtype=float)
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 4.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 4.0
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    mag = np.hypot(gx, gy)
    return GradientDirectionImage(theta=theta, magnitude=mag)


def _angular_diff_pi(a: float, b: float) -> float:
    d = (a - b) % np.pi
    return min(d, np.pi - d)


def _grow_regions(mag, theta, mag_threshold, angle_tolerance):
    """Greedy orientation-coherent region growing over 8-neighborhoods.

    Seeds are visited in decreasing magnitude order; a pixel joins a region
    when its gradient direction is within tolerance of the region's running
    circular mean (in doubled-angle space, since directions are pi-periodic).
    """
    height, width = mag.shape
    above = mag > mag_threshold
    visited = np.zeros_like(above, dtype=bool)
    ys, xs = np.nonzero(above)
    order = np.argsort(-mag[ys, xs])
    regions = []
    neighbors = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    for k in order:
        sy, sx = int(ys[k]), int(xs[k])
        if visited[sy, sx]:
            continue
        visited[sy, sx] = True
        stack = [(sy, sx)]
        member_y = [sy]
        member_x = [sx]
        sum_c = np.cos(2.0 * theta[sy, sx])
        sum_s = np.sin(2.0 * theta[sy, sx])
        while stack:
            cy, cx = stack.pop()
            mean_dir = 0.5 * np.arctan2(sum_s, sum_c) % np.pi
            for dy, dx in neighbors:
                ny, nx = cy + dy, cx + dx
                if ny < 0 or ny >= height or nx < 0 or nx >= width:
                    continue
                if visited[ny, nx] or not above[ny, nx]:
                    continue
                if _angular_diff_pi(theta[ny, nx], mean_dir) > angle_tolerance:
                    continue
                visited[ny, nx] = True
                stack.append((ny, nx))
                member_y.append(ny)
                member_x.append(nx)
                sum_c += np.cos(2.0 * theta[ny, nx])
                sum_s += np.sin(2.0 * theta[ny, nx])
        if len(member_y) >= 3:
            regions.append((np.array(member_x, float), np.array(member_y, float)))
    return regions


def _fit_segment(px, py):
    """Total least squares line fit; returns (centroid, direction, t_lo, t_hi)."""
    centroid = np.array([px.mean(), py.mean()])
    d = np.column_stack([px - centroid[0], py - centroid[1]])
    cov = d.T @ d
    eigvals, eigvecs = np.linalg.eigh(cov)
    direction = eigvecs[:, int(np.argmax(eigvals))]
    t = d @ direction
    return centroid, direction, float(t.min()), float(t.max())


def detect_edgelets(
    img: np.ndarray,
    levels: int = 2,
    mag_threshold: float = 0.08,
    angle_tolerance: float = np.pi / 8,
    min_length: float = 5.0,
) -> EdgelSet:
    """Detect straight edge segments and sample them into edgels.

    Coarser pyramid levels are rescaled into level-0 pixel coordinates.
    Deterministic; returns an empty set when nothing passes the thresholds.
    """
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    img = np.asarray(img, dtype=float)
    positions = []
    orientations = []
    level_img = img
    for level in range(levels):
        if level > 0:
            level_img = ndimage.gaussian_filter(level_img, sigma=1.0)[::2, ::2]
            if min(level_img.shape) < 8:
                break
        grad = gradient_direction_image(level_img)
        scale = 2.0**level
        offset = (scale - 1.0) / 2.0  # center of the 2^level pixel block
        for px, py in _grow_regions(
            grad.magnitude, grad.theta, mag_threshold, angle_tolerance
        ):
            centroid, direction, t_lo, t_hi = _fit_segment(px, py)
            if t_hi - t_lo < min_length:
                continue
            ts = np.arange(t_lo, t_hi + 1e-9, 1.0)
            pts = centroid + ts[:, None] * direction
            positions.append(pts * scale + offset)
            ori = np.mod(np.arctan2(direction[1], direction[0]), np.pi)
            orientations.append(np.full(len(ts), ori))
    if not positions:
        return EdgelSet.empty()
    return EdgelSet(np.vstack(positions), np.concatenate(orientations))
