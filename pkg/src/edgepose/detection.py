"""Template scanning: project raster templates, rank them by average
tensor distance, and emit top-k object candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dcd import DcdTensor, lookup
from .errors import DataError, EmptyProjectionError, NoVisiblePointsError
from .geometry import CameraIntrinsics, Pose, inside_image, project_points
from .template import RasterTemplate, TemplateBank

CANDIDATES_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ObjectCandidate:
    """A scored pose hypothesis referring back to its bank entry."""

    object_id: str
    pose: Pose  # object in the reference-view camera frame
    avg_dcd: float
    template_ref: int
    score: float | None = None  # gradient-direction score, set after refinement

    def __post_init__(self):
        if self.avg_dcd < 0:
            raise DataError("avg_dcd must be non-negative")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise DataError("score must lie in [0, 1]")

    def with_score(self, score: float) -> "ObjectCandidate":
        return replace(self, score=float(score))

    def with_pose(self, pose: Pose) -> "ObjectCandidate":
        return replace(self, pose=pose)


def project_template(
    template: RasterTemplate,
    pose: Pose,
    intr: CameraIntrinsics,
    view: Pose | None = None,
):
    """Projected template points with their image orientations.

    Returns (xy (k, 2), xi (k,) in [0, pi)). A point pair is dropped when the
    sample projects outside the image or either the sample or its tangent
    partner falls behind the camera; raises when nothing remains.

    ``view`` optionally pre-composes a fixed camera-to-camera transform
    (multi-view usage), leaving ``pose`` expressed in the reference frame.
    """
    eff = pose if view is None else view @ pose
    xy, _, front = project_points(intr, eff.transform(template.points))
    xy_off, _, front_off = project_points(intr, eff.transform(template.offset_points))
    keep = front & front_off & inside_image(intr, xy)
    if not keep.any():
        raise EmptyProjectionError("template projects nowhere into the image")
    d = xy_off[keep] - xy[keep]
    xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
    return xy[keep], xi


def average_dcd(tensor: DcdTensor, xy: np.ndarray, xi: np.ndarray) -> float:
    """Mean tensor value over projected template points."""
    xy = np.atleast_2d(xy)
    if xy.shape[0] == 0:
        raise NoVisiblePointsError("average over an empty projection")
    return float(np.mean(lookup(tensor, xy, xi)))


def _quaternions_from_axis_angle(omegas: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z) for a batch of axis-angle vectors."""
    angles = np.linalg.norm(omegas, axis=1)
    half = angles / 2.0
    scale = np.where(angles > 1e-12, np.sin(half) / np.maximum(angles, 1e-300), 0.5)
    return np.column_stack([np.cos(half), omegas * scale[:, None]])


def scan_candidates(
    tensor: DcdTensor,
    bank: TemplateBank,
    intr: CameraIntrinsics,
    top_k: int,
    min_visible_fraction: float = 0.3,
    nms_trans: float | None = None,
    nms_rot: float | None = None,
) -> list[ObjectCandidate]:
    """Rank every bank entry by average distance, ascending.

    Entries projecting fewer than ``min_visible_fraction`` of their points
    are skipped so degenerate slivers cannot dominate the ranking. Ties
    break on the bank index. Optional pose-distance non-maximum suppression
    collapses entries within (nms_trans, nms_rot) of a better one, which the
    view planner uses to keep its hypothesis set diverse.

    The whole bank is evaluated in a handful of vectorized passes: entries
    sharing a rotation are rotated together and all lookups happen in one
    batch, which is what makes scanning thousand-entry banks cheap.
    """
    if top_k < 1:
        raise DataError("top_k must be >= 1")
    entries = bank.entries
    counts = np.array([len(e.template) for e in entries])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    pts = np.vstack([e.template.points for e in entries])
    offs = np.vstack([e.template.offset_points for e in entries])
    entry_of = np.repeat(np.arange(len(entries)), counts)
    omegas = np.array([e.pose.omega for e in entries])
    ts = np.array([e.pose.t for e in entries])

    rot_pts = np.empty_like(pts)
    rot_offs = np.empty_like(offs)
    uniq, inverse = np.unique(omegas.round(12), axis=0, return_inverse=True)
    for r in range(uniq.shape[0]):
        rows = np.nonzero(inverse[entry_of] == r)[0]
        rot = Pose(omega=uniq[r]).rotation()
        rot_pts[rows] = pts[rows] @ rot.T
        rot_offs[rows] = offs[rows] @ rot.T
    cam_pts = rot_pts + ts[entry_of]
    cam_offs = rot_offs + ts[entry_of]

    xy, _, front = project_points(intr, cam_pts)
    xy_off, _, front_off = project_points(intr, cam_offs)
    keep = front & front_off & inside_image(intr, xy)
    d = xy_off - xy
    xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
    values = np.zeros(xy.shape[0])
    values[keep] = lookup(tensor, xy[keep], xi[keep])

    visible = np.bincount(entry_of[keep], minlength=len(entries))
    sums = np.bincount(entry_of[keep], weights=values[keep], minlength=len(entries))
    ok = visible >= np.maximum(min_visible_fraction * counts, 1)
    order = np.argsort(
        np.where(ok, sums / np.maximum(visible, 1), np.inf), kind="stable"
    )

    picked: list[int] = []
    if nms_trans is not None and nms_rot is not None:
        quats = _quaternions_from_axis_angle(omegas)
        kept_t: list[np.ndarray] = []
        kept_q: list[np.ndarray] = []
        for idx in order:
            if not ok[idx]:
                break
            if kept_t:
                dt = np.linalg.norm(np.array(kept_t) - ts[idx], axis=1)
                near = dt < nms_trans
                if near.any():
                    dots = np.abs(np.array(kept_q)[near] @ quats[idx])
                    dr = 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))
                    if np.any(dr < nms_rot):
                        continue
            picked.append(int(idx))
            kept_t.append(ts[idx])
            kept_q.append(quats[idx])
            if len(picked) >= top_k:
                break
    else:
        for idx in order:
            if not ok[idx]:
                break
            picked.append(int(idx))
            if len(picked) >= top_k:
                break

    return [
        ObjectCandidate(
            object_id=bank.object_id,
            pose=entries[i].pose,
            avg_dcd=float(sums[i] / visible[i]),
            template_ref=i,
        )
        for i in picked
    ]


def candidate_to_dict(c: ObjectCandidate) -> dict:
    return {
        "object_id": c.object_id,
        "pose": {"t": c.pose.t.tolist(), "omega": c.pose.omega.tolist()},
        "avg_dcd": c.avg_dcd,
        "score": c.score,
        "template_ref": c.template_ref,
    }


def candidate_from_dict(d: dict) -> ObjectCandidate:
    return ObjectCandidate(
        object_id=d["object_id"],
        pose=Pose(t=d["pose"]["t"], omega=d["pose"]["omega"]),
        avg_dcd=d["avg_dcd"],
        template_ref=d["template_ref"],
        score=d.get("score"),
    )


def save_candidates(candidates: list[ObjectCandidate], path) -> None:
    payload = {
        "schema_version": CANDIDATES_SCHEMA_VERSION,
        "candidates": [candidate_to_dict(c) for c in candidates],
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_candidates(path) -> list[ObjectCandidate]:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != CANDIDATES_SCHEMA_VERSION:
        raise DataError("unsupported candidates schema version")
    return [candidate_from_dict(d) for d in payload["candidates"]]
