"""Visible-edge raster templates and pre-computed template banks.

For a given viewpoint, the mesh is rendered into a software depth buffer
(perspective-correct, with a slope-scaled depth bias playing the role of
polygon offset so that samples lying exactly on a surface are not culled by
their own face). Wire edges are then sampled at a fixed metric spacing and a
sample survives when its projected depth agrees with the buffer at its pixel.
Each sample is stored together with a tangent-offset partner point, which is
what later recovers the projected edge direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, EmptyTemplateError
from .geometry import MIN_DEPTH, CameraIntrinsics, Pose, project_points
from .mesh import TriMesh, WireEdge

# Tolerance (meters) when comparing a sample depth against the depth buffer.
DEPTH_EPS = 1e-4

# Depth-bias slope factor in pixels: surfaces are pushed back by one pixel
# worth of their own depth gradient before the visibility comparison.
BIAS_PX = 1.0

# Slope-bias clamp (meters): near-grazing faces would otherwise get an
# unbounded bias and stop occluding anything behind them. Edge samples on a
# grazing face survive through the better-conditioned second face instead.
BIAS_CAP = 1e-3


def render_zbuffer(
    tris_cam: np.ndarray, intr: CameraIntrinsics, bias_px: float = BIAS_PX
) -> np.ndarray:
    """Depth buffer (height, width) from camera-frame triangles (T, 3, 3).

    Unfilled pixels hold +inf. Triangles with any vertex at or behind the
    camera plane are skipped (objects are assumed fully in front); screen
    degenerate triangles contribute nothing.
    """
    zbuf = np.full((intr.height, intr.width), np.inf)
    for tri in np.asarray(tris_cam, dtype=float):
        if np.any(tri[:, 2] <= MIN_DEPTH):
            continue
        uv, z, _ = project_points(intr, tri)
        x_lo = max(int(np.ceil(uv[:, 0].min())), 0)
        x_hi = min(int(np.floor(uv[:, 0].max())), intr.width - 1)
        y_lo = max(int(np.ceil(uv[:, 1].min())), 0)
        y_hi = min(int(np.floor(uv[:, 1].max())), intr.height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        (x0, y0), (x1, y1), (x2, y2) = uv
        denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(denom) < 1e-12:
            continue
        gx, gy = np.meshgrid(
            np.arange(x_lo, x_hi + 1), np.arange(y_lo, y_hi + 1)
        )
        w0 = ((y1 - y2) * (gx - x2) + (x2 - x1) * (gy - y2)) / denom
        w1 = ((y2 - y0) * (gx - x2) + (x0 - x2) * (gy - y2)) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2]  # affine in screen space
        depth = np.where(inside & (inv_z > 0), 1.0 / np.maximum(inv_z, 1e-12), np.inf)
        # affine estimate of the screen-space depth slope, for the bias
        a = np.array([[x1 - x0, y1 - y0], [x2 - x0, y2 - y0]])
        b = np.array([z[1] - z[0], z[2] - z[0]])
        try:
            slope = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            slope = np.zeros(2)
        bias = min(bias_px * (abs(slope[0]) + abs(slope[1])), BIAS_CAP)
        patch = zbuf[y_lo : y_hi + 1, x_lo : x_hi + 1]
        np.minimum(patch, depth + bias, out=patch)
    return zbuf


@dataclass(frozen=True)
class RasterTemplate:
    """3D edge samples (object frame) with tangent-offset partner points."""

    points: np.ndarray  # (m, 3)
    offset_points: np.ndarray  # (m, 3)
    step: float  # sampling spacing along edges, meters
    dr: float  # tangent offset magnitude, meters

    def __post_init__(self):
        if self.points.shape != self.offset_points.shape or self.points.shape[0] < 1:
            raise DataError("template requires equally many points and offsets, >= 1")
        gap = np.linalg.norm(self.offset_points - self.points, axis=1)
        if np.any(np.abs(gap - self.dr) > 1e-12):
            raise DataError("offset points must sit exactly dr from their samples")
        self.points.flags.writeable = False
        self.offset_points.flags.writeable = False

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_wire_edges(edges: list[WireEdge], step: float, dr: float):
    """Sample each edge at spacing ``step``; returns (points, offsets, tangents)."""
    pts = []
    offs = []
    for edge in edges:
        delta = edge.p1 - edge.p0
        length = np.linalg.norm(delta)
        if length < 1e-12:
            continue
        tangent = delta / length
        n = max(2, int(np.ceil(length / step)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        p = edge.p0 + ts[:, None] * delta
        pts.append(p)
        offs.append(p + tangent * dr)
    if not pts:
        raise DataError("no non-degenerate wire edge to sample")
    return np.vstack(pts), np.vstack(offs)


def visible_template(
    mesh: TriMesh,
    edges: list[WireEdge],
    pose: Pose,
    intr: CameraIntrinsics,
    step: float = 0.0015,
    dr: float = 0.001,
    zbuf_width: int | None = None,
    depth_eps: float = DEPTH_EPS,
) -> RasterTemplate:
    """Edge samples visible from ``pose`` (object-in-camera), object frame.

    ``zbuf_width`` optionally renders the occlusion buffer at a different
    horizontal resolution than the camera (scaled intrinsics); the default
    uses the camera resolution.
    """
    if step <= 0 or dr <= 0:
        raise ConfigError("step and dr must be positive")
    z_intr = intr
    if zbuf_width is not None:
        z_intr = intr.scaled(zbuf_width / intr.width)
    tris_cam = pose.transform(mesh.vertices)[mesh.triangles]
    zbuf = render_zbuffer(tris_cam, z_intr)

    points, offsets = sample_wire_edges(edges, step, dr)
    pts_cam = pose.transform(points)
    uv, z, in_front = project_points(z_intr, pts_cam)
    ix = np.rint(uv[:, 0]).astype(int)
    iy = np.rint(uv[:, 1]).astype(int)
    ok = (
        in_front
        & (ix >= 0)
        & (ix < z_intr.width)
        & (iy >= 0)
        & (iy < z_intr.height)
    )
    ok[ok] &= z[ok] <= zbuf[iy[ok], ix[ok]] + depth_eps
    if not ok.any():
        raise EmptyTemplateError("no visible edge sample from this viewpoint")
    return RasterTemplate(
        points=points[ok].copy(), offset_points=offsets[ok].copy(), step=step, dr=dr
    )


@dataclass(frozen=True)
class BankEntry:
    pose: Pose
    template: RasterTemplate


@dataclass(frozen=True)
class TemplateBank:
    """Raster templates pre-computed over a viewpoint grid."""

    object_id: str
    entries: list[BankEntry]
    grid: dict = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise DataError("template bank has no entries")

    def __len__(self) -> int:
        return len(self.entries)


def make_viewpoint_grid(
    x=(0.0, 0.0, 1),
    y=(0.0, 0.0, 1),
    z=(0.5, 0.5, 1),
    rotations=((0.0, 0.0, 0.0),),
) -> tuple[list[Pose], dict]:
    """Regular translation lattice crossed with a discrete rotation set.

    Each of x, y, z is (start, stop, count); rotations are axis-angle
    vectors. Returns the pose list plus grid metadata for serialization.
    """
    xs = np.linspace(*x[:2], int(x[2]))
    ys = np.linspace(*y[:2], int(y[2]))
    zs = np.linspace(*z[:2], int(z[2]))
    poses = [
        Pose(t=[tx, ty, tz], omega=rot)
        for rot in np.atleast_2d(np.asarray(rotations, dtype=float))
        for tz in zs
        for ty in ys
        for tx in xs
    ]
    meta = {
        "x": list(x),
        "y": list(y),
        "z": list(z),
        "rotations": np.atleast_2d(np.asarray(rotations, dtype=float)).tolist(),
    }
    return poses, meta


def build_template_bank(
    mesh: TriMesh,
    edges: list[WireEdge],
    viewpoint_grid: list[Pose],
    intr: CameraIntrinsics,
    step: float = 0.0015,
    dr: float = 0.001,
    object_id: str = "object",
    grid_meta: dict | None = None,
) -> TemplateBank:
    """One template per grid pose; empty viewpoints are recorded and skipped."""
    if not viewpoint_grid:
        raise ConfigError("viewpoint grid is empty")
    entries = []
    skipped = []
    for idx, pose in enumerate(viewpoint_grid):
        try:
            tpl = visible_template(mesh, edges, pose, intr, step=step, dr=dr)
        except (EmptyTemplateError, DataError):
            skipped.append(idx)
            continue
        entries.append(BankEntry(pose=pose, template=tpl))
    if not entries:
        raise DataError("every grid pose produced an empty template")
    return TemplateBank(
        object_id=object_id,
        entries=entries,
        grid=grid_meta or {},
        skipped=skipped,
    )


BANK_FORMAT_VERSION = 1


def save_bank(bank: TemplateBank, path) -> None:
    """Versioned binary bank (.npz) with a JSON sidecar describing the grid."""
    path = Path(path)
    arrays = {
        "poses": np.array([e.pose.params() for e in bank.entries]),
        "steps": np.array([e.template.step for e in bank.entries]),
        "drs": np.array([e.template.dr for e in bank.entries]),
    }
    for i, e in enumerate(bank.entries):
        arrays[f"points_{i}"] = e.template.points
        arrays[f"offsets_{i}"] = e.template.offset_points
    np.savez_compressed(path, **arrays)
    sidecar = {
        "format_version": BANK_FORMAT_VERSION,
        "object_id": bank.object_id,
        "entries": len(bank.entries),
        "grid": bank.grid,
        "skipped": bank.skipped,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_bank(path) -> TemplateBank:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise DataError(f"bank sidecar missing: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("format_version") != BANK_FORMAT_VERSION:
        raise DataError(
            f"unsupported bank format version {sidecar.get('format_version')}"
        )
    with np.load(path) as data:
        entries = []
        for i in range(sidecar["entries"]):
            entries.append(
                BankEntry(
                    pose=Pose.from_params(data["poses"][i]),
                    template=RasterTemplate(
                        points=data[f"points_{i}"],
                        offset_points=data[f"offsets_{i}"],
                        step=float(data["steps"][i]),
                        dr=float(data["drs"][i]),
                    ),
                )
            )
    return TemplateBank(
        object_id=sidecar["object_id"],
        entries=entries,
        grid=sidecar["grid"],
        skipped=sidecar["skipped"],
    )
