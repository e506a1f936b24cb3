"""Synthetic scenes: reproducible placements, hemisphere viewpoints, and
rendered edge observations with occlusion and noise.

Observations are edge maps, not photorealistic images: every downstream
consumer works on edgels, so the simulator emits exactly the detector's
output format, plus a gradient-direction image whose directions are
edge-consistent at edgel pixels (the scoring convention round-trips) and
seeded-random elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .edges import EdgelSet, GradientDirectionImage
from .errors import ConfigError, DataError, PlacementError
from .geometry import CameraIntrinsics, Pose, look_at, pose_error, project_points
from .mesh import TriMesh, WireEdge
from .nbv.sampling import aabbs_intersect
from .nbv.types import ViewAction
from .template import render_zbuffer, sample_wire_edges, DEPTH_EPS

SCENE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class NoiseParams:
    """Observation degradation: edgel dropout, jitter, clutter, angle noise."""

    dropout_rate: float = 0.0
    jitter_sigma: float = 0.0  # pixels
    clutter_count: int = 0  # spurious edgelets
    orientation_noise_sigma: float = 0.0  # radians

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticScene:
    """Ground-truth object placements (world frame) inside workspace bounds."""

    placements: tuple[tuple[str, Pose], ...]
    bounds: np.ndarray  # (2, 3) lo/hi corners
    seed: int

    def save(self, path) -> None:
        payload = {
            "schema_version": SCENE_SCHEMA_VERSION,
            "seed": self.seed,
            "bounds": np.asarray(self.bounds).tolist(),
            "placements": [
                {"object_id": oid, "t": p.t.tolist(), "omega": p.omega.tolist()}
                for oid, p in self.placements
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @staticmethod
    def load(path) -> "SyntheticScene":
        payload = json.loads(Path(path).read_text())
        if payload.get("schema_version") != SCENE_SCHEMA_VERSION:
            raise DataError("unsupported scene schema version")
        return SyntheticScene(
            placements=tuple(
                (d["object_id"], Pose(t=d["t"], omega=d["omega"]))
                for d in payload["placements"]
            ),
            bounds=np.asarray(payload["bounds"], dtype=float),
            seed=payload["seed"],
        )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation as an axis-angle vector (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-12:
        return np.zeros(3)
    return (2.0 * np.arctan2(vec_norm, q[0]) / vec_norm) * q[1:]


def generate_scene(
    models: dict[str, TriMesh],
    count: int,
    bounds,
    seed: int,
    inflate: float = 0.002,
    max_rejections: int = 10_000,
    rotation_mode: str = "uniform",
) -> SyntheticScene:
    """Rejection-sample non-intersecting placements, deterministic in seed.

    ``rotation_mode`` is "uniform" for arbitrary orientations or "yaw" for
    objects resting flat with a random turn about the world z axis (the
    usual tabletop/bin situation).
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    if rotation_mode not in ("uniform", "yaw"):
        raise ConfigError(f"unknown rotation_mode {rotation_mode!r}")
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    rng = np.random.default_rng(seed)
    ids = sorted(models)
    placements: list[tuple[str, Pose]] = []
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    rejections = 0
    while len(placements) < count:
        if rejections > max_rejections:
            raise PlacementError(
                f"gave up after {max_rejections} rejected placements"
            )
        oid = ids[int(rng.integers(len(ids)))]
        if rotation_mode == "uniform":
            omega = random_rotation(rng)
        else:
            omega = np.array([0.0, 0.0, rng.uniform(0, 2 * np.pi)])
        pose = Pose(t=rng.uniform(bounds[0], bounds[1]), omega=omega)
        box = models[oid].aabb(pose)
        if any(aabbs_intersect(box, other, inflate) for other in boxes):
            rejections += 1
            continue
        placements.append((oid, pose))
        boxes.append(box)
    return SyntheticScene(placements=tuple(placements), bounds=bounds, seed=seed)


def hemisphere_views(
    center,
    radius: float,
    n: int,
    intr: CameraIntrinsics,
    seed: int = 0,
) -> list[ViewAction]:
    """n camera placements on the upper hemisphere, all looking at center.

    A Fibonacci lattice gives near-uniform coverage; the first point is the
    zenith. ``seed`` rotates the lattice's starting azimuth so different
    experiments get different (but reproducible) view sets.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    center = np.asarray(center, dtype=float)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    azimuth0 = np.random.default_rng(seed).uniform(0, 2 * np.pi)
    actions = []
    for k in range(n):
        zfrac = 1.0 - k / n  # (1 - 1/n) .. 1, zenith first
        rho = np.sqrt(max(0.0, 1.0 - zfrac * zfrac))
        az = azimuth0 + k * golden
        offset = radius * np.array(
            [rho * np.cos(az), rho * np.sin(az), zfrac]
        )
        pose = look_at(center + offset, center)
        actions.append(ViewAction(id=k, camera_pose=pose, intrinsics=intr))
    return actions


def render_scene_edgels(
    scene: SyntheticScene,
    view: ViewAction,
    models: dict[str, TriMesh],
    model_edges: dict[str, list[WireEdge]],
    step: float = 0.0015,
    dr: float = 0.001,
):
    """Project every object's wire-edge samples with a shared depth buffer.

    Returns (EdgelSet, per-object stats), where stats rows are
    (object_id, surviving samples, total samples). Self- and inter-object
    occlusion both come from the one combined buffer.
    """
    intr = view.intrinsics
    cam_from_world = view.camera_pose.inverse()
    tri_soup = []
    per_object = []
    for oid, world_pose in scene.placements:
        g = cam_from_world @ world_pose
        tri_soup.append(g.transform(models[oid].vertices)[models[oid].triangles])
        per_object.append((oid, g))
    zbuf = render_zbuffer(np.concatenate(tri_soup), intr)

    positions = []
    orientations = []
    stats = []
    for oid, g in per_object:
        pts, offs = sample_wire_edges(model_edges[oid], step, dr)
        xy, z, front = project_points(intr, g.transform(pts))
        xy_off, _, front_off = project_points(intr, g.transform(offs))
        ix = np.rint(xy[:, 0]).astype(int)
        iy = np.rint(xy[:, 1]).astype(int)
        ok = (
            front
            & front_off
            & (ix >= 0)
            & (ix < intr.width)
            & (iy >= 0)
            & (iy < intr.height)
        )
        ok[ok] &= z[ok] <= zbuf[iy[ok], ix[ok]] + DEPTH_EPS
        d = xy_off[ok] - xy[ok]
        xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
        positions.append(xy[ok])
        orientations.append(xi)
        stats.append((oid, int(ok.sum()), int(ok.size)))
    edgels = EdgelSet(np.vstack(positions), np.concatenate(orientations))
    return edgels, stats


def render_observation(
    scene: SyntheticScene,
    view: ViewAction,
    models: dict[str, TriMesh],
    model_edges: dict[str, list[WireEdge]],
    noise: NoiseParams = NoiseParams(),
    seed: int = 0,
    step: float = 0.0015,
    dr: float = 0.001,
):
    """Noisy edge observation of the scene from one viewpoint.

    Returns (EdgelSet, GradientDirectionImage). The direction image holds
    edge-consistent gradient directions (edge direction minus a quarter
    turn) at edgel pixels and seeded-random directions elsewhere.
    """
    intr = view.intrinsics
    clean, _ = render_scene_edgels(scene, view, models, model_edges, step, dr)
    rng = np.random.default_rng(seed)
    xy = clean.positions.copy()
    xi = clean.orientations.copy()
    if noise.jitter_sigma > 0:
        xy = xy + rng.normal(scale=noise.jitter_sigma, size=xy.shape)
    if noise.orientation_noise_sigma > 0:
        xi = np.mod(
            xi + rng.normal(scale=noise.orientation_noise_sigma, size=xi.shape), np.pi
        )
    if noise.dropout_rate > 0 and xy.shape[0] > 0:
        keep = rng.random(xy.shape[0]) >= noise.dropout_rate
        xy, xi = xy[keep], xi[keep]
    clutter_pos = []
    clutter_ori = []
    for _ in range(noise.clutter_count):
        anchor = rng.uniform([0, 0], [intr.width - 1, intr.height - 1])
        ori = rng.uniform(0, np.pi)
        length = rng.uniform(5, 20)
        ts = np.arange(0.0, length, 1.0)
        seg = anchor + ts[:, None] * np.array([np.cos(ori), np.sin(ori)])
        inside = (
            (seg[:, 0] >= 0)
            & (seg[:, 0] <= intr.width - 1)
            & (seg[:, 1] >= 0)
            & (seg[:, 1] <= intr.height - 1)
        )
        clutter_pos.append(seg[inside])
        clutter_ori.append(np.full(int(inside.sum()), ori))
    if clutter_pos:
        xy = np.vstack([xy] + clutter_pos)
        xi = np.concatenate([xi] + clutter_ori)
    edgels = EdgelSet(xy, xi)

    theta = rng.uniform(0, np.pi, size=(intr.height, intr.width))
    mag = np.zeros((intr.height, intr.width))
    if len(edgels):
        ix = np.clip(np.rint(edgels.positions[:, 0]).astype(int), 0, intr.width - 1)
        iy = np.clip(np.rint(edgels.positions[:, 1]).astype(int), 0, intr.height - 1)
        theta[iy, ix] = np.mod(edgels.orientations - np.pi / 2, np.pi)
        mag[iy, ix] = 1.0
    return edgels, GradientDirectionImage(theta=theta, magnitude=mag)


@dataclass(frozen=True)
class SimulatedObservationSource:
    """Adapter: the planner's observation interface backed by the simulator.

    Each action renders deterministically from (seed, action id), so a run
    is reproducible and repeated queries of one action agree.
    """

    scene: SyntheticScene
    models: dict[str, TriMesh]
    model_edges: dict[str, list[WireEdge]]
    noise: NoiseParams = NoiseParams()
    seed: int = 0
    step: float = 0.0015
    dr: float = 0.001

    def observe(self, action: ViewAction):
        return render_observation(
            self.scene,
            action,
            self.models,
            self.model_edges,
            noise=self.noise,
            seed=(self.seed, action.id),
            step=self.step,
            dr=self.dr,
        )


@dataclass(frozen=True)
class EvalMetrics:
    correct: int
    total_truth: int
    false_positives: int
    errors: tuple[tuple[str, float, float], ...]  # (object_id, dt, dr) per match

    @property
    def correct_rate(self) -> float:
        return self.correct / self.total_truth if self.total_truth else 0.0


def evaluate(
    estimates: list[tuple[str, Pose]],
    scene: SyntheticScene,
    trans_thresh: float = 0.005,
    rot_thresh: float = 0.1,
) -> EvalMetrics:
    """Greedy one-to-one matching of estimates to ground truth.

    Pairs are matched in order of threshold-normalized pose distance. A
    matched estimate counts as correct only when both errors are inside the
    thresholds; every other estimate is a false positive.
    """
    if trans_thresh <= 0 or rot_thresh <= 0:
        raise ConfigError("thresholds must be positive")
    pairs = []
    for ei, (eid, epose) in enumerate(estimates):
        for ti, (tid, tpose) in enumerate(scene.placements):
            if eid != tid:
                continue
            dt, dr = pose_error(tpose, epose)
            pairs.append((dt / trans_thresh + dr / rot_thresh, ei, ti, dt, dr))
    pairs.sort(key=lambda p: p[0])
    used_e: set[int] = set()
    used_t: set[int] = set()
    correct = 0
    errors = []
    for _, ei, ti, dt, dr in pairs:
        if ei in used_e or ti in used_t:
            continue
        used_e.add(ei)
        used_t.add(ti)
        if dt < trans_thresh and dr < rot_thresh:
            correct += 1
            errors.append((estimates[ei][0], dt, dr))
    return EvalMetrics(
        correct=correct,
        total_truth=len(scene.placements),
        false_positives=len(estimates) - correct,
        errors=tuple(errors),
    )


def perturb_pose(pose: Pose, trans_mag: float, rot_mag: float, seed: int) -> Pose:
    """Fixed-magnitude perturbation in a uniformly random direction.

    Translation moves by exactly ``trans_mag`` along a random unit vector;
    rotation composes a ``rot_mag`` turn about a random unit axis.
    """
    if trans_mag < 0 or rot_mag < 0:
        raise ConfigError("magnitudes must be >= 0")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    delta = Pose(t=np.zeros(3), omega=axis * rot_mag)
    rotated = delta @ Pose(t=np.zeros(3), omega=pose.omega)
    return Pose(t=pose.t + direction * trans_mag, omega=rotated.omega)
