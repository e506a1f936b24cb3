"""Direct pose refinement against distance tensors, single- and multi-view.

Residuals are tensor lookups at the projected template points; their
derivatives chain the tensor's numeric gradient with the analytic projection
jacobian and the orientation derivative recovered from the tangent-offset
partner points. A Levenberg-Marquardt loop with a Huber loss drives the six
pose parameters; the damping is multiplied by 10 on a rejected step and
divided by 10 on an accepted one.

Template points whose projection leaves the usable image region (or whose
projected tangent collapses) contribute neither residual nor jacobian for
that evaluation, which avoids the discontinuities hard clamping would cause.
The visible-point set is frozen at template construction time: occlusion is
not re-derived during the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dcd import DcdTensor, gradient, lookup
from .edges import GradientDirectionImage
from .errors import ConfigError, EmptyProjectionError, NoVisiblePointsError
from .geometry import (
    CameraIntrinsics,
    Pose,
    inside_image,
    project_points,
    projection_jacobians,
)
from .template import RasterTemplate

# Projected tangent pairs shorter than this (pixels) have no usable
# orientation and are dropped for the iteration.
MIN_TANGENT_PX = 1e-9


@dataclass(frozen=True)
class RegistrationView:
    """One observation: its tensor, the camera transform, and intrinsics.

    ``view`` maps reference-camera coordinates into this view's camera; the
    reference view itself uses the identity.
    """

    tensor: DcdTensor
    view: Pose
    intr: CameraIntrinsics


@dataclass(frozen=True)
class RegistrationOptions:
    max_iterations: int = 50
    initial_damping: float = 1e-3
    huber_delta: float = 10.0
    step_tol: float = 1e-6
    cost_tol: float = 1e-8
    max_damping: float = 1e10
    # bound on damping retries within one iteration; each retry costs a full
    # cost evaluation, so hopeless fits should give up quickly
    max_step_rejections: int = 12


@dataclass(frozen=True)
class RegistrationProblem:
    views: list[RegistrationView]
    template: RasterTemplate
    initial: Pose
    options: RegistrationOptions = field(default_factory=RegistrationOptions)

    def __post_init__(self):
        if not self.views:
            raise ConfigError("registration needs at least one view")


@dataclass(frozen=True)
class RegistrationResult:
    pose: Pose
    final_cost: float
    iterations: int
    converged: bool


def single_view_problem(
    tensor: DcdTensor,
    intr: CameraIntrinsics,
    template: RasterTemplate,
    initial: Pose,
    options: RegistrationOptions | None = None,
) -> RegistrationProblem:
    return RegistrationProblem(
        views=[RegistrationView(tensor=tensor, view=Pose(), intr=intr)],
        template=template,
        initial=initial,
        options=options or RegistrationOptions(),
    )


def _huber_cost(residuals: np.ndarray, delta: float) -> float:
    """0.5 * sum(rho(r^2)) with rho linearized beyond ``delta``."""
    sq = residuals**2
    quad = sq <= delta * delta
    rho = np.where(quad, sq, 2.0 * delta * np.abs(residuals) - delta * delta)
    return 0.5 * float(rho.sum())


def _huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    absr = np.abs(residuals)
    return np.where(absr <= delta, 1.0, delta / np.maximum(absr, 1e-300))


def _visible_projection(view: RegistrationView, template: RasterTemplate, pose: Pose):
    """Projection of (points, offsets) with the mask of usable pairs.

    Usable means both points in front of the camera and the sample inside
    the one-pixel interior margin the tensor gradient needs.
    """
    eff = view.view @ pose
    xy, _, front = project_points(view.intr, eff.transform(template.points))
    xy_off, _, front_off = project_points(
        view.intr, eff.transform(template.offset_points)
    )
    mask = front & front_off & inside_image(view.intr, xy, margin=1.0)
    d = xy_off - xy
    mask &= np.hypot(d[:, 0], d[:, 1]) > MIN_TANGENT_PX
    return xy, xy_off, mask


def evaluate_cost(problem: RegistrationProblem, pose: Pose):
    """Robustified cost and per-point residuals at ``pose``, over all views.

    Residuals are concatenated in view order. Raises when no template point
    projects usably into any view.
    """
    residuals = []
    for view in problem.views:
        xy, xy_off, mask = _visible_projection(view, problem.template, pose)
        if not mask.any():
            continue
        d = xy_off[mask] - xy[mask]
        xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
        residuals.append(lookup(view.tensor, xy[mask], xi))
    if not residuals:
        raise NoVisiblePointsError("pose projects no template point into any view")
    residuals = np.concatenate(residuals)
    return _huber_cost(residuals, problem.options.huber_delta), residuals


def _residuals_and_jacobian(problem: RegistrationProblem, pose: Pose):
    """Stacked residual vector and its (N, 6) jacobian at ``pose``."""
    res_blocks = []
    jac_blocks = []
    for view in problem.views:
        xy, xy_off, mask = _visible_projection(view, problem.template, pose)
        if not mask.any():
            continue
        pts = problem.template.points[mask]
        offs = problem.template.offset_points[mask]
        jac_pts, xy_m, _ = projection_jacobians(view.intr, pose, pts, view.view)
        jac_off, xy_off_m, _ = projection_jacobians(view.intr, pose, offs, view.view)
        d = xy_off_m - xy_m
        xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
        res = lookup(view.tensor, xy_m, xi)
        grad = gradient(view.tensor, xy_m, xi)
        # orientation component is per channel step; the chain rule needs it
        # per radian
        grad_xi = grad[:, 2] * (view.tensor.q / np.pi)
        norm_sq = d[:, 0] ** 2 + d[:, 1] ** 2
        dxi_dd = np.stack([-d[:, 1] / norm_sq, d[:, 0] / norm_sq], axis=1)
        dxi_dpose = np.einsum("ni,nij->nj", dxi_dd, jac_off - jac_pts)
        rows = (
            grad[:, 0:1] * jac_pts[:, 0, :]
            + grad[:, 1:2] * jac_pts[:, 1, :]
            + grad_xi[:, None] * dxi_dpose
        )
        res_blocks.append(res)
        jac_blocks.append(rows)
    if not res_blocks:
        raise NoVisiblePointsError("pose projects no template point into any view")
    return np.concatenate(res_blocks), np.vstack(jac_blocks)


def d2co_register(problem: RegistrationProblem) -> RegistrationResult:
    """Levenberg-Marquardt refinement of the six pose parameters."""
    opts = problem.options
    pose = problem.initial
    cost, _ = evaluate_cost(problem, pose)
    damping = opts.initial_damping
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        residuals, jac = _residuals_and_jacobian(problem, pose)
        weights = _huber_weights(residuals, opts.huber_delta)
        jtw = jac.T * weights
        hessian = jtw @ jac
        grad_vec = jtw @ residuals
        accepted = False
        rejections = 0
        while damping <= opts.max_damping and rejections <= opts.max_step_rejections:
            lhs = hessian + damping * np.diag(np.diag(hessian)) + 1e-12 * np.eye(6)
            try:
                step = np.linalg.solve(lhs, -grad_vec)
            except np.linalg.LinAlgError:
                damping *= 10.0
                rejections += 1
                continue
            if np.linalg.norm(step) < opts.step_tol:
                converged = True
                break
            candidate = Pose.from_params(pose.params() + step)
            try:
                cand_cost, _ = evaluate_cost(problem, candidate)
            except NoVisiblePointsError:
                cand_cost = np.inf
            if cand_cost <= cost:
                relative_drop = (cost - cand_cost) / max(cost, 1e-300)
                pose = candidate
                cost = cand_cost
                damping = max(damping / 10.0, 1e-12)
                accepted = True
                if relative_drop < opts.cost_tol:
                    converged = True
                break
            damping *= 10.0
            rejections += 1
        if converged or not accepted:
            break
    return RegistrationResult(
        pose=pose, final_cost=cost, iterations=iterations, converged=converged
    )


def score(
    pose: Pose,
    template: RasterTemplate,
    grad_dir: GradientDirectionImage,
    intr: CameraIntrinsics,
    view: Pose | None = None,
) -> float:
    """Mean absolute cosine between projected template edge directions and
    image edge directions, in [0, 1].

    The gradient direction image stores gradient orientations; edge
    directions sit a quarter turn away, so the comparison applies a +pi/2
    offset before the cosine. Sampling is nearest-neighbor.
    """
    eff = pose if view is None else view @ pose
    xy, _, front = project_points(intr, eff.transform(template.points))
    xy_off, _, front_off = project_points(intr, eff.transform(template.offset_points))
    keep = front & front_off & inside_image(intr, xy)
    if not keep.any():
        raise EmptyProjectionError("no template point projects inside the image")
    d = xy_off[keep] - xy[keep]
    xi = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
    theta = grad_dir.sample_nearest(xy[keep])
    return float(np.mean(np.abs(np.cos(theta + np.pi / 2 - xi))))
