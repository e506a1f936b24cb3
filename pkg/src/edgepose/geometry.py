"""Rigid transforms, axis-angle rotations, and pinhole projection.

Conventions used throughout the library:

- Camera frame is right-handed with z pointing forward (into the scene),
  x right, y down. Pixel origin is the top-left corner, u right, v down.
- Rotations are parameterized as axis-angle vectors (axis * angle, radians);
  ``rotation_from_axis_angle`` is the Rodrigues exponential map.
- A ``Pose`` maps points from its source frame into its target frame:
  ``p_out = R(omega) @ p + t``. For an object pose expressed in a camera
  frame this is the classic g_(cam,obj).

All functions are pure and all types immutable, so everything here is safe
for unrestricted parallel use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PointBehindCameraError

# Depth below which a point counts as behind the camera.
MIN_DEPTH = 1e-9

# Below this rotation angle the closed-form exp/log maps switch to their
# series expansions to avoid division by ~0.
SMALL_ANGLE = 1e-6


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(omega) -> np.ndarray:
    """Rodrigues exponential map: axis-angle vector to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < SMALL_ANGLE:
        # exp(k) = I + k + k^2/2 + ... ; two terms suffice below SMALL_ANGLE
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def axis_angle_from_rotation(rot: np.ndarray) -> np.ndarray:
    """Log map: rotation matrix to axis-angle vector, stable near 0 and pi.

    Goes through a unit quaternion (Shepperd's method) because the direct
    vee-based formula loses the axis near pi.
    """
    m = np.asarray(rot, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > max(m[0, 0], m[1, 1], m[2, 2]):
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q  # canonical hemisphere: angle in [0, pi]
    q /= np.linalg.norm(q)
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < SMALL_ANGLE:
        return 2.0 * q[1:]  # atan2(n, w)/n -> 1/w ~ 1 for tiny n
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return (angle / vec_norm) * q[1:]


def so3_left_jacobian(omega) -> np.ndarray:
    """Left Jacobian J_l of SO(3): d exp((omega+d)^)/dd at d=0 in world frame.

    With it, d(R(omega) p)/d(omega) = -skew(R p) @ J_l(omega).
    """
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * k + b * (k @ k)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: translation ``t`` (meters) + axis-angle ``omega``."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.t, other.t) and np.array_equal(self.omega, other.omega))

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(3)
        omega = np.array(self.omega, dtype=float).reshape(3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(omega))):
            raise ConfigError("pose parameters must be finite")
        t.flags.writeable = False
        omega.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega", omega)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "Pose":
        mat = np.asarray(mat, dtype=float)
        return Pose(mat[:3, 3], axis_angle_from_rotation(mat[:3, :3]))

    @staticmethod
    def from_params(params) -> "Pose":
        """Build from a flat 6-vector [tx ty tz rx ry rz]."""
        params = np.asarray(params, dtype=float).reshape(6)
        return Pose(params[:3], params[3:])

    def params(self) -> np.ndarray:
        """Flat 6-vector [tx ty tz rx ry rz]."""
        return np.concatenate([self.t, self.omega])

    def rotation(self) -> np.ndarray:
        return rotation_from_axis_angle(self.omega)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation()
        mat[:3, 3] = self.t
        return mat

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation().T + self.t

    def inverse(self) -> "Pose":
        rot_t = self.rotation().T
        return Pose(-rot_t @ self.t, -self.omega)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other)).transform(p) == self(other(p))."""
        rot = self.rotation() @ other.rotation()
        return Pose(self.rotation() @ other.t + self.t, axis_angle_from_rotation(rot))

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)


def transform_point(pose: Pose, point) -> np.ndarray:
    """R(omega) @ p + t."""
    return pose.transform(np.asarray(point, dtype=float))


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation error in meters, rotation error in radians) between two poses."""
    dt = float(np.linalg.norm(a.t - b.t))
    rel = a.rotation().T @ b.rotation()
    dr = float(np.linalg.norm(axis_angle_from_rotation(rel)))
    return dt, dr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Undistorted pinhole camera: focal lengths, principal point, image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same camera at a resampled resolution."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            max(1, int(round(self.width * factor))),
            max(1, int(round(self.height * factor))),
        )


def project(intr: CameraIntrinsics, p_cam) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates (x, y)."""
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[2]
    if z <= MIN_DEPTH:
        raise PointBehindCameraError(f"point depth {z} <= {MIN_DEPTH}")
    return np.array(
        [intr.fx * p_cam[0] / z + intr.cx, intr.fy * p_cam[1] / z + intr.cy]
    )


def project_points(intr: CameraIntrinsics, pts_cam: np.ndarray):
    """Vectorized projection of (N, 3) camera-frame points.

    Returns (xy (N,2), z (N,), in_front (N,) bool). Points behind the camera
    get arbitrary xy values; callers must honor the mask.
    """
    pts_cam = np.asarray(pts_cam, dtype=float)
    z = pts_cam[:, 2]
    in_front = z > MIN_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    xy = np.empty((pts_cam.shape[0], 2))
    xy[:, 0] = intr.fx * pts_cam[:, 0] / safe_z + intr.cx
    xy[:, 1] = intr.fy * pts_cam[:, 1] / safe_z + intr.cy
    return xy, z, in_front


def inside_image(intr: CameraIntrinsics, xy: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of pixel coordinates within the image, with optional margin."""
    xy = np.asarray(xy, dtype=float)
    return (
        (xy[..., 0] >= margin)
        & (xy[..., 0] <= intr.width - 1 - margin)
        & (xy[..., 1] >= margin)
        & (xy[..., 1] <= intr.height - 1 - margin)
    )


def projection_jacobian(
    intr: CameraIntrinsics, pose: Pose, p_obj, view: Pose | None = None
) -> np.ndarray:
    """2x6 derivative of the projected pixel w.r.t. the six pose parameters.

    ``view`` optionally pre-composes a fixed camera-to-camera transform, so
    the jacobian is taken of pi(view * pose * p) w.r.t. pose; this is what a
    multi-view cost needs while keeping the optimization variable in the
    reference frame.
    """
    jacs, _, _ = projection_jacobians(intr, pose, np.asarray(p_obj, dtype=float)[None, :], view)
    return jacs[0]


def projection_jacobians(
    intr: CameraIntrinsics,
    pose: Pose,
    pts_obj: np.ndarray,
    view: Pose | None = None,
):
    """Vectorized 2x6 projection jacobians for (N, 3) object points.

    Returns (jacs (N,2,6), xy (N,2), z (N,)). Raises if any point ends up
    behind the camera; batch callers that tolerate dropouts should mask
    beforehand via ``project_points``.
    """
    pts_obj = np.asarray(pts_obj, dtype=float)
    rot = pose.rotation()
    rotated = pts_obj @ rot.T  # R p, before translation
    pts_ref = rotated + pose.t
    if view is None:
        view_rot = np.eye(3)
        pts_cam = pts_ref
    else:
        view_rot = view.rotation()
        pts_cam = pts_ref @ view_rot.T + view.t

    z = pts_cam[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise PointBehindCameraError("jacobian requested for point behind camera")

    # d p_cam / d(T, Omega): translation block is view_rot, rotation block is
    # view_rot @ (-skew(R p) @ J_l(omega)) per the exponential-map derivative.
    jl = so3_left_jacobian(pose.omega)
    n = pts_obj.shape[0]
    skews = np.zeros((n, 3, 3))
    skews[:, 0, 1] = rotated[:, 2]
    skews[:, 0, 2] = -rotated[:, 1]
    skews[:, 1, 0] = -rotated[:, 2]
    skews[:, 1, 2] = rotated[:, 0]
    skews[:, 2, 0] = rotated[:, 1]
    skews[:, 2, 1] = -rotated[:, 0]
    dp_domega = np.einsum("ab,nbc,cd->nad", view_rot, skews, jl)
    dp_dt = np.broadcast_to(view_rot, (n, 3, 3))

    inv_z = 1.0 / z
    du_dp = np.zeros((n, 2, 3))
    du_dp[:, 0, 0] = intr.fx * inv_z
    du_dp[:, 0, 2] = -intr.fx * pts_cam[:, 0] * inv_z * inv_z
    du_dp[:, 1, 1] = intr.fy * inv_z
    du_dp[:, 1, 2] = -intr.fy * pts_cam[:, 1] * inv_z * inv_z

    jacs = np.empty((n, 2, 6))
    jacs[:, :, :3] = du_dp @ dp_dt
    jacs[:, :, 3:] = du_dp @ dp_domega
    xy = np.empty((n, 2))
    xy[:, 0] = intr.fx * pts_cam[:, 0] * inv_z + intr.cx
    xy[:, 1] = intr.fy * pts_cam[:, 1] * inv_z + intr.cy
    return jacs, xy, z


def look_at(eye, center, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-in-world pose with the optical axis through ``center``.

    The image y axis is aligned against ``up`` (so ``up`` appears upward);
    when the view direction is parallel to ``up`` the fallback reference is
    world +y, which keeps the construction deterministic at the zenith.
    """
    eye = np.asarray(eye, dtype=float)
    center = np.asarray(center, dtype=float)
    forward = center - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ConfigError("look_at eye and center coincide")
    z_cam = forward / norm
    up = np.asarray(up, dtype=float)
    if abs(np.dot(z_cam, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    y_cam = -up + np.dot(up, z_cam) * z_cam
    y_cam /= np.linalg.norm(y_cam)
    x_cam = np.cross(y_cam, z_cam)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    rot = np.column_stack([x_cam, y_cam, z_cam])
    return Pose(eye, axis_angle_from_rotation(rot))
