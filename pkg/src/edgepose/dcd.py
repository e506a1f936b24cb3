"""Joint location/orientation distance tensor over an edgel set.

The tensor stacks q per-orientation distance maps: channel j holds, for every
pixel, the minimum over edgels of (Euclidean pixel distance + lambda * wrapped
angular distance between channel angle j*pi/q and the edgel orientation,
both quantized to the channel grid). It is built as

  1. bin edgels into q pi-periodic orientation channels,
  2. exact Euclidean distance transform per channel,
  3. circular forward/backward relaxation across channels, propagating
     value + lambda * (pi/q) per step until no cell changes,
  4. optional Gaussian smoothing along the orientation axis (circular),
     which makes interpolated lookups piecewise smooth for the optimizer.

Lookups interpolate trilinearly (bilinear in x, y; linear and circular in the
orientation coordinate); gradients are numeric differences of the
interpolated field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .edges import EdgelSet
from .edt import exact_edt
from .errors import BorderError, ConfigError, OutOfBoundsError


def angular_distance_pi(a, b):
    """Wrapped pi-periodic angular distance: min_k |a - b + k*pi|, in [0, pi/2]."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), np.pi)
    return np.minimum(d, np.pi - d)


@dataclass(frozen=True)
class DcdTensor:
    """q stacked orientation-conditioned distance maps with smooth lookup."""

    channels: np.ndarray  # (q, height, width) float64, >= 0
    lambda_: float  # orientation weight, pixels per radian
    sigma: float  # orientation-axis smoothing std, in channel units
    empty: bool = False  # built from an empty edgel set (sentinel fill)

    def __post_init__(self):
        self.channels.flags.writeable = False

    @property
    def q(self) -> int:
        return self.channels.shape[0]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def channel_width(self) -> float:
        """Angular width of one orientation channel, pi/q radians."""
        return np.pi / self.q

    @property
    def channel_angles(self) -> np.ndarray:
        return np.arange(self.q) * self.channel_width


def large_sentinel(width: int, height: int, lambda_: float) -> float:
    """Fill value used when no edgel exists: beyond any attainable distance."""
    return float(width + height + lambda_ * np.pi)


def build_dcd(
    edgels: EdgelSet,
    width: int,
    height: int,
    q: int = 60,
    lambda_: float = 100.0,
    sigma: float = 1.0,
) -> DcdTensor:
    """Build the joint distance tensor from an edgel set.

    Edgels are rasterized to their nearest pixel and binned to their nearest
    channel angle; positions rounding outside the image are ignored. An empty
    (or fully out-of-image) edgel set yields a sentinel-filled tensor with
    ``empty=True``.
    """
    if q < 2:
        raise ConfigError("q must be >= 2")
    if lambda_ < 0:
        raise ConfigError("lambda must be >= 0")
    if width < 1 or height < 1:
        raise ConfigError("tensor dimensions must be positive")
    cw = np.pi / q

    ix = np.rint(edgels.positions[:, 0]).astype(int) if len(edgels) else np.zeros(0, int)
    iy = np.rint(edgels.positions[:, 1]).astype(int) if len(edgels) else np.zeros(0, int)
    keep = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    ix, iy = ix[keep], iy[keep]
    if ix.size == 0:
        fill = large_sentinel(width, height, lambda_)
        return DcdTensor(
            channels=np.full((q, height, width), fill),
            lambda_=lambda_,
            sigma=sigma,
            empty=True,
        )
    chan = np.rint(edgels.orientations[keep] / cw).astype(int) % q

    channels = np.empty((q, height, width))
    for j in range(q):
        sel = chan == j
        if not np.any(sel):
            channels[j] = np.inf
            continue
        mask = np.zeros((height, width), dtype=bool)
        mask[iy[sel], ix[sel]] = True
        channels[j] = exact_edt(mask)

    _relax_orientation(channels, lambda_ * cw)

    if sigma > 0:
        radius = int(np.ceil(3.0 * sigma))
        kernel = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
        kernel /= kernel.sum()
        channels = ndimage.convolve1d(channels, kernel, axis=0, mode="wrap")

    return DcdTensor(channels=channels, lambda_=lambda_, sigma=sigma)


def _relax_orientation(channels: np.ndarray, step_cost: float) -> None:
    """Circular min-plus relaxation across channels, in place.

    Full forward + backward sweeps repeat until a whole sweep changes no
    cell; q sweeps is a hard cap (values are non-negative and only ever
    decrease, and each sweep propagates at least one more channel step).
    """
    q = channels.shape[0]
    for _ in range(q):
        changed = False
        for j in range(q):
            cand = channels[j - 1] + step_cost
            better = cand < channels[j]
            if np.any(better):
                channels[j][better] = cand[better]
                changed = True
        for j in range(q - 1, -1, -1):
            cand = channels[(j + 1) % q] + step_cost
            better = cand < channels[j]
            if np.any(better):
                channels[j][better] = cand[better]
                changed = True
        if not changed:
            break


def _prepare_query(tensor: DcdTensor, xy, xi):
    xy = np.asarray(xy, dtype=float)
    scalar = xy.ndim == 1
    xy = np.atleast_2d(xy)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape[0] != xy.shape[0]:
        raise ConfigError("xy and xi length mismatch")
    return xy, xi, scalar


def lookup(tensor: DcdTensor, xy, xi):
    """Interpolated tensor value at sub-pixel position(s) and orientation(s).

    Bilinear in x and y, linear in the orientation coordinate with circular
    wrap across the last channel. Accepts a single (x, y) pair with a scalar
    orientation or batched arrays.
    """
    xy, xi, scalar = _prepare_query(tensor, xy, xi)
    x, y = xy[:, 0], xy[:, 1]
    if np.any(
        (x < 0) | (x > tensor.width - 1) | (y < 0) | (y > tensor.height - 1)
    ) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise OutOfBoundsError("lookup outside tensor domain")
    out = _lookup_raw(tensor, x, y, xi)
    return float(out[0]) if scalar else out


def _lookup_raw(tensor: DcdTensor, x, y, xi):
    cw = tensor.channel_width
    c = np.mod(xi, np.pi) / cw
    j0 = np.floor(c).astype(int) % tensor.q
    fj = c - np.floor(c)
    j1 = (j0 + 1) % tensor.q

    x0 = np.clip(np.floor(x).astype(int), 0, tensor.width - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, tensor.height - 2)
    fx = x - x0
    fy = y - y0

    ch = tensor.channels

    def bilinear(j):
        v00 = ch[j, y0, x0]
        v01 = ch[j, y0, x0 + 1]
        v10 = ch[j, y0 + 1, x0]
        v11 = ch[j, y0 + 1, x0 + 1]
        return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (
            v10 * (1 - fx) + v11 * fx
        ) * fy

    return bilinear(j0) * (1 - fj) + bilinear(j1) * fj


def gradient(tensor: DcdTensor, xy, xi):
    """Numeric gradient (d/dx, d/dy, d/dxi) of the interpolated tensor.

    The spatial components are central differences of the interpolated field
    at +-1 pixel; the orientation component is the circular two-sided
    difference at +-1 channel, so it is expressed per channel step (multiply
    by q/pi for a per-radian derivative). Queries must keep one pixel of
    margin from the border.
    """
    xy, xi, scalar = _prepare_query(tensor, xy, xi)
    x, y = xy[:, 0], xy[:, 1]
    if np.any(
        (x < 1) | (x > tensor.width - 2) | (y < 1) | (y > tensor.height - 2)
    ):
        raise BorderError("gradient query within one pixel of the border")
    cw = tensor.channel_width
    n = x.shape[0]
    # one batched evaluation of all six stencil points per query
    qx = np.concatenate([x + 1, x - 1, x, x, x, x])
    qy = np.concatenate([y, y, y + 1, y - 1, y, y])
    qxi = np.concatenate([xi, xi, xi, xi, xi + cw, xi - cw])
    vals = _lookup_raw(tensor, qx, qy, qxi).reshape(6, n)
    out = np.stack(
        [
            (vals[0] - vals[1]) / 2.0,
            (vals[2] - vals[3]) / 2.0,
            (vals[4] - vals[5]) / 2.0,
        ],
        axis=-1,
    )
    return out[0] if scalar else out


def dump_tensor(tensor: DcdTensor, path) -> None:
    """Debug dump: raw float64 planes plus a JSON header alongside."""
    path = Path(path)
    tensor.channels.astype("<f8").tofile(path)
    header = {
        "schema_version": 1,
        "dtype": "<f8",
        "shape": list(tensor.channels.shape),
        "lambda": tensor.lambda_,
        "sigma": tensor.sigma,
        "empty": tensor.empty,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2))


def load_tensor(path) -> DcdTensor:
    """Load a tensor written by ``dump_tensor``."""
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.fromfile(path, dtype=header["dtype"]).reshape(header["shape"])
    return DcdTensor(
        channels=data,
        lambda_=header["lambda"],
        sigma=header["sigma"],
        empty=header["empty"],
    )
