"""Per-candidate render cache and realization-conditioned distances.

Evaluating a likelihood for every (particle, realization, action) triple is
only tractable because a realization's distance map decomposes over its
members: one plain distance map and one nearest-edgel depth buffer per
(candidate, action) suffice, and a realization is scored pointwise as the
minimum over its members, with member depth buffers vetoing points they
occlude. The hot loop over realizations runs in a compiled kernel; the
scalar path below is the reference the kernel is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from ..detection import ObjectCandidate
from ..edt import exact_edt_with_indices
from ..errors import NoVisiblePointsError
from ..geometry import CameraIntrinsics, Pose, project_points
from ..template import RasterTemplate
from .types import RealizationRender, SceneRealization, ViewAction

# Sentinel distance for realizations that say nothing about a particle
# (empty member set, or every point occlusion-vetoed).
LARGE_CD = 1e4

# A member's nearest edgel must be at least this much (meters) in front of a
# template point before the point counts as occluded by that member.
OCCLUSION_EPS = 0.005


@dataclass
class RenderCache:
    """Distance/depth maps per (candidate index, action id) plus the context
    needed to project particles of the searched object."""

    renders: dict[tuple[int, int], RealizationRender]
    actions: dict[int, ViewAction]
    ref_cam_pose: Pose  # world pose of the reference camera
    template: RasterTemplate  # searched object's template (particle geometry)
    point_idx: np.ndarray  # subsample of template rows used for likelihoods
    scale: float
    occlusion_eps: float = OCCLUSION_EPS


def subsample_indices(total: int, count: int) -> np.ndarray:
    """Deterministic, evenly spread row subset."""
    if count <= 0 or count >= total:
        return np.arange(total)
    return np.unique(np.linspace(0, total - 1, count).astype(int))


def render_candidate_map(
    candidate_pose: Pose,
    template: RasterTemplate,
    action: ViewAction,
    ref_cam_pose: Pose,
    scale: float,
) -> RealizationRender:
    """Distance map + nearest-edgel depth buffer of one candidate from one action.

    The candidate pose lives in the reference camera frame; the map is
    rendered at ``scale`` times the action's resolution with distances
    converted back to full-resolution pixels.
    """
    intr = action.intrinsics.scaled(scale)
    g = action.camera_pose.inverse() @ ref_cam_pose @ candidate_pose
    xy, z, front = project_points(intr, g.transform(template.points))
    ix = np.rint(xy[:, 0]).astype(int)
    iy = np.rint(xy[:, 1]).astype(int)
    ok = front & (ix >= 0) & (ix < intr.width) & (iy >= 0) & (iy < intr.height)
    if not ok.any():
        return RealizationRender.empty_marker()
    mask = np.zeros((intr.height, intr.width), dtype=bool)
    depth_at = np.full((intr.height, intr.width), np.inf)
    for x, y, depth in zip(ix[ok], iy[ok], z[ok]):
        mask[y, x] = True
        if depth < depth_at[y, x]:
            depth_at[y, x] = depth
    dist, fy, fx = exact_edt_with_indices(mask)
    return RealizationRender(
        dist=(dist / scale).astype(np.float32),
        depth=depth_at[fy, fx].astype(np.float32),
        scale=scale,
    )


def render_realization_maps(
    candidates: list[ObjectCandidate],
    templates: list[RasterTemplate],
    actions: list[ViewAction],
    ref_cam_pose: Pose,
    searched_template: RasterTemplate,
    scale: float = 0.25,
    likelihood_points: int = 32,
    occlusion_eps: float = OCCLUSION_EPS,
) -> RenderCache:
    """Precompute every (candidate, action) map once.

    Work scales with the candidate count, not the (much larger) number of
    realizations evaluated against the cache later.
    """
    renders: dict[tuple[int, int], RealizationRender] = {}
    for ci, (cand, tpl) in enumerate(zip(candidates, templates)):
        for action in actions:
            renders[(ci, action.id)] = render_candidate_map(
                cand.pose, tpl, action, ref_cam_pose, scale
            )
    return RenderCache(
        renders=renders,
        actions={a.id: a for a in actions},
        ref_cam_pose=ref_cam_pose,
        template=searched_template,
        point_idx=subsample_indices(len(searched_template), likelihood_points),
        scale=scale,
        occlusion_eps=occlusion_eps,
    )


def project_particle(
    cache: RenderCache, particle_pose: Pose, action: ViewAction
):
    """Scaled pixel indices and depths of the particle's likelihood points.

    Returns (ix, iy, z, valid); valid flags points landing inside the map.
    """
    intr = action.intrinsics.scaled(cache.scale)
    g = action.camera_pose.inverse() @ cache.ref_cam_pose @ particle_pose
    pts = cache.template.points[cache.point_idx]
    xy, z, front = project_points(intr, g.transform(pts))
    ix = np.clip(np.rint(xy[:, 0]).astype(int), 0, intr.width - 1)
    iy = np.clip(np.rint(xy[:, 1]).astype(int), 0, intr.height - 1)
    valid = (
        front
        & (xy[:, 0] >= 0)
        & (xy[:, 0] <= intr.width - 1)
        & (xy[:, 1] >= 0)
        & (xy[:, 1] <= intr.height - 1)
    )
    return ix, iy, z, valid


def realization_avg_cd(
    realization: SceneRealization,
    particle_pose: Pose,
    action: ViewAction,
    cache: RenderCache,
) -> float:
    """Average distance of the particle's points under one realization.

    Per point: the minimum over member distance maps; a point occluded by
    any member (member edgel depth in front of the point by more than the
    occlusion epsilon) is excluded from the average. Empty realizations and
    fully-vetoed projections yield the LARGE_CD sentinel.
    """
    ix, iy, z, valid = project_particle(cache, particle_pose, action)
    if not valid.any():
        raise NoVisiblePointsError("particle projects nowhere into this action")
    if len(realization) == 0:
        return LARGE_CD
    total = 0.0
    count = 0
    for p in np.nonzero(valid)[0]:
        best = np.inf
        occluded = False
        for m in realization.members:
            render = cache.renders[(m, action.id)]
            if render.empty:
                continue
            if render.depth[iy[p], ix[p]] < z[p] - cache.occlusion_eps:
                occluded = True
                break
            best = min(best, float(render.dist[iy[p], ix[p]]))
        if occluded or not np.isfinite(best):
            continue
        total += best
        count += 1
    if count == 0:
        return LARGE_CD
    return total / count


@njit(parallel=True, cache=True)
def _batch_avg_cd(dist, depth, empty, z, valid, members, offsets, eps, large):
    """mu[i, j]: masked mean over points of the member-minimum distance.

    dist/depth: (n_cand, n_part, n_pts); empty: (n_cand,); z/valid:
    (n_part, n_pts); members+offsets: realizations in CSR layout.
    """
    n_part, n_pts = z.shape
    n_real = offsets.size - 1
    out = np.empty((n_part, n_real))
    for j in prange(n_real):
        lo, hi = offsets[j], offsets[j + 1]
        for i in range(n_part):
            if hi == lo:
                out[i, j] = large
                continue
            acc = 0.0
            cnt = 0
            for p in range(n_pts):
                if not valid[i, p]:
                    continue
                best = 1e30
                occluded = False
                for k in range(lo, hi):
                    c = members[k]
                    if empty[c]:
                        continue
                    if depth[c, i, p] < z[i, p] - eps:
                        occluded = True
                        break
                    d = dist[c, i, p]
                    if d < best:
                        best = d
                if occluded or best >= 1e29:
                    continue
                acc += best
                cnt += 1
            out[i, j] = acc / cnt if cnt > 0 else large
    return out


def batch_realization_avg_cd(
    realizations: list[SceneRealization],
    particle_poses: np.ndarray,
    action: ViewAction,
    cache: RenderCache,
    n_candidates: int,
):
    """mu table (n_particles, n_realizations) for one action, plus the
    per-particle count of validly projected points.

    Matches ``realization_avg_cd`` pointwise; particles with no valid
    projection get LARGE_CD rows (the caller decides how to treat them).
    """
    n_part = particle_poses.shape[0]
    n_pts = cache.point_idx.size
    ix = np.empty((n_part, n_pts), np.int64)
    iy = np.empty((n_part, n_pts), np.int64)
    z = np.empty((n_part, n_pts))
    valid = np.empty((n_part, n_pts), np.bool_)
    for i in range(n_part):
        ix[i], iy[i], z[i], valid[i] = project_particle(
            cache, Pose.from_params(particle_poses[i]), action
        )
    empty = np.zeros(n_candidates, np.bool_)
    dist = np.zeros((n_candidates, n_part, n_pts), np.float32)
    depth = np.full((n_candidates, n_part, n_pts), np.inf, np.float32)
    for c in range(n_candidates):
        render = cache.renders[(c, action.id)]
        if render.empty:
            empty[c] = True
            continue
        dist[c] = render.dist[iy, ix]
        depth[c] = render.depth[iy, ix]
    sizes = np.array([len(r) for r in realizations], np.int64)
    members = np.array(
        [m for r in realizations for m in r.members], np.int64
    ) if sizes.sum() else np.zeros(0, np.int64)
    offsets = np.zeros(len(realizations) + 1, np.int64)
    offsets[1:] = np.cumsum(sizes)
    mu = _batch_avg_cd(
        dist, depth, empty, z, valid.astype(np.bool_), members, offsets,
        cache.occlusion_eps, LARGE_CD,
    )
    return mu, valid.sum(axis=1)
