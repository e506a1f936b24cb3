"""Shared data types of the view planner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..geometry import CameraIntrinsics, Pose


@dataclass(frozen=True)
class ViewAction:
    """A reachable camera placement: id, world-frame pose, intrinsics."""

    id: int
    camera_pose: Pose  # camera-in-world
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class SceneRealization:
    """A plausible subset of candidate indices treated as a hypothetical scene."""

    members: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class ParticleSet:
    """Weighted pose particles with per-particle observation history.

    Poses are stored as (n, 6) parameter rows in the reference camera frame.
    ``history`` accumulates the squared average tensor distances of the real
    views; ``seen`` tracks which template points each particle has projected
    into any real view so far (the disocclusion bookkeeping).
    """

    object_id: str
    poses: np.ndarray  # (n, 6)
    weights: np.ndarray  # (n,), non-negative, sums to 1
    history: np.ndarray  # (n,), >= 0
    seen: np.ndarray  # (n, m) bool

    def __post_init__(self):
        n = self.poses.shape[0]
        if self.weights.shape != (n,) or self.history.shape != (n,):
            raise DataError("particle arrays disagree in length")
        if self.seen.shape[0] != n:
            raise DataError("seen mask disagrees in length")
        if np.any(self.weights < 0) or np.any(self.history < 0):
            raise DataError("weights and history must be non-negative")
        total = self.weights.sum()
        if total <= 0:
            raise DataError("weights must not all vanish")
        self.weights = self.weights / total

    def __len__(self) -> int:
        return self.poses.shape[0]

    def pose(self, i: int) -> Pose:
        return Pose.from_params(self.poses[i])


@dataclass
class RealizationRender:
    """Per (candidate, action) rendering: plain distance map + edgel depths.

    ``empty`` marks candidates invisible from the action. Maps are stored at
    a reduced scale; distances are already converted back to full-resolution
    pixels.
    """

    dist: np.ndarray | None  # (h, w) float32, >= 0
    depth: np.ndarray | None  # (h, w) float32, depth of nearest edgel, > 0
    scale: float
    empty: bool = False

    @staticmethod
    def empty_marker() -> "RealizationRender":
        return RealizationRender(dist=None, depth=None, scale=1.0, empty=True)
