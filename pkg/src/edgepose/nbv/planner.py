"""Active view selection: particle belief, mutual information, and the full
detect / plan / observe / update loop, plus the two baseline planners.

State lives in the reference camera frame (the frame of the first image).
Actions are world-frame camera placements; the initial camera's world pose
relates the two. The planner only ever consumes edge observations, so any
source that maps an action to (edgels, gradient-direction image) works, the
bundled simulator being one such source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ..dcd import DcdTensor, build_dcd
from ..detection import ObjectCandidate, project_template, scan_candidates
from ..edges import EdgelSet, GradientDirectionImage
from ..errors import ConfigError, DataError, NoVisiblePointsError
from ..geometry import CameraIntrinsics, Pose, inside_image, pose_error, project_points
from ..mesh import TriMesh, WireEdge
from ..registration import (
    RegistrationOptions,
    RegistrationProblem,
    RegistrationView,
    d2co_register,
    score,
)
from ..template import RasterTemplate, TemplateBank
from .rendering import (
    LARGE_CD,
    RenderCache,
    batch_realization_avg_cd,
    realization_avg_cd,
    render_realization_maps,
    subsample_indices,
)
from .sampling import sample_combinations
from .types import ParticleSet, SceneRealization, ViewAction


class ObservationSource(Protocol):
    """Anything that can produce an edge observation for a camera placement."""

    def observe(self, action: ViewAction) -> tuple[EdgelSet, GradientDirectionImage]:
        ...


@dataclass(frozen=True)
class ModelAssets:
    """Everything the planner needs about one object type."""

    object_id: str
    mesh: TriMesh
    edges: list[WireEdge]
    bank: TemplateBank


@dataclass
class NbvConfig:
    target_object: str
    n_candidates: int = 40
    n_particles: int = 200
    n_combinations: int = 1000
    max_views: int = 4  # planned views beyond the initial image
    mi_epsilon: float = 1e-3
    strategy: str = "mi-max"  # mi-max | dis | random
    initial_action: int = 0
    seed: int = 0
    # tensor parameters for real views
    q: int = 60
    lambda_: float = 100.0
    sigma: float = 1.0
    # detection
    nms_trans: float = 0.010
    nms_rot: float = 0.2
    min_visible_fraction: float = 0.3
    scan_depth: int = 4  # scan this multiple of the candidate quota per model
    # refinement
    refine: RegistrationOptions = field(
        default_factory=lambda: RegistrationOptions(max_iterations=25)
    )
    particle_refine: RegistrationOptions = field(
        default_factory=lambda: RegistrationOptions(
            max_iterations=8, max_step_rejections=4
        )
    )
    refine_points: int = 120  # template subsample for particle refinement
    # realization cache
    render_scale: float = 0.25
    likelihood_points: int = 32
    occlusion_eps: float = 0.005
    plausibility_inflate: float = 0.002
    # particles
    seed_jitter_t: float = 0.004
    seed_jitter_omega: float = 0.04
    resample_jitter_t: float = 0.002
    resample_jitter_omega: float = 0.02
    # final mode extraction
    cluster_trans: float = 0.005
    cluster_rot: float = 0.1
    detection_weight_threshold: float = 0.1

    def __post_init__(self):
        if self.strategy not in ("mi-max", "dis", "random"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.max_views < 1:
            raise ConfigError("max_views must be >= 1")


# ---------------------------------------------------------------------------
# Likelihood and mutual information
# ---------------------------------------------------------------------------


def likelihood(
    realization: SceneRealization,
    particle_pose: Pose,
    history: float,
    action: ViewAction,
    cache: RenderCache,
    gamma: float,
) -> float:
    """Unnormalized observation likelihood of one particle.

    gamma * exp(-history - mu^2) with mu the realization-conditioned average
    distance; gamma in (0, 1] is the fraction of template points seen across
    the real views plus this synthetic one, rewarding disocclusions.
    """
    if not (0.0 < gamma <= 1.0):
        raise ConfigError("gamma must lie in (0, 1]")
    mu = realization_avg_cd(realization, particle_pose, action, cache)
    return float(gamma * np.exp(-history - mu * mu))


def likelihood_rows(
    particles: ParticleSet,
    realizations: list[SceneRealization],
    action: ViewAction,
    cache: RenderCache,
    n_candidates: int,
):
    """Per-particle likelihood over realizations, normalized per row.

    Per-particle constants (history, gamma) cancel in the row normalization,
    so rows are computed from the mu table alone; particles that do not
    project into the action get uniform rows (the observation says nothing
    about them).
    """
    mu, n_valid = batch_realization_avg_cd(
        realizations, particles.poses, action, cache, n_candidates
    )
    mu_sq = mu * mu
    mu_sq -= mu_sq.min(axis=1, keepdims=True)  # row shift, cancels below
    rows = np.exp(-mu_sq)
    rows[n_valid == 0] = 1.0
    norms = rows.sum(axis=1, keepdims=True)
    degenerate = norms[:, 0] <= 0
    rows[degenerate] = 1.0
    norms[degenerate] = rows.shape[1]
    return rows / norms


def mi_from_rows(rows: np.ndarray, weights: np.ndarray) -> float:
    """Mutual information from per-particle observation distributions.

    ``rows[i]`` is p(z | particle i, action), already normalized over the
    observation samples; the evidence mixes the rows with the particle
    weights. The outer expectation over particles is uniform.
    """
    rows = np.asarray(rows, dtype=float)
    weights = np.asarray(weights, dtype=float)
    evidence = weights @ rows
    assert abs(evidence.sum() - 1.0) < 1e-9, "evidence must be a distribution"
    ratio = np.maximum(rows, 1e-300) / np.maximum(evidence[None, :], 1e-300)
    terms = np.where(rows > 0, rows * np.log(ratio), 0.0)
    return float(terms.sum() / rows.shape[0])


def mutual_information(
    particles: ParticleSet,
    realizations: list[SceneRealization],
    action: ViewAction,
    cache: RenderCache,
    n_candidates: int | None = None,
) -> float:
    """Mutual information between the particle belief and the sampled
    observation set for one action."""
    if len(particles) == 0 or not realizations:
        raise DataError("mutual information needs particles and realizations")
    if n_candidates is None:
        n_candidates = 1 + max(m for r in realizations for m in r.members) if any(
            len(r) for r in realizations
        ) else 1
    rows = likelihood_rows(particles, realizations, action, cache, n_candidates)
    return mi_from_rows(rows, particles.weights)


def select_action(
    particles: ParticleSet,
    realizations: list[SceneRealization],
    actions: list[ViewAction],
    visited: set[int],
    cache: RenderCache,
    n_candidates: int | None = None,
):
    """Highest-MI unvisited action; ties break on the lowest action id.

    Returns (action, mi per evaluated action id).
    """
    unvisited = [a for a in actions if a.id not in visited]
    if not unvisited:
        raise DataError("no unvisited action left")
    mi_by_action: dict[int, float] = {}
    for action in unvisited:
        mi_by_action[action.id] = mutual_information(
            particles, realizations, action, cache, n_candidates
        )
    best = max(unvisited, key=lambda a: (mi_by_action[a.id], -a.id))
    return best, mi_by_action


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def random_baseline(actions: list[ViewAction], visited: set[int], rng) -> ViewAction:
    """Uniform draw among unvisited actions, seeded."""
    unvisited = [a for a in actions if a.id not in visited]
    if not unvisited:
        raise DataError("no unvisited action left")
    rng = np.random.default_rng(rng)
    return unvisited[int(rng.integers(len(unvisited)))]


def visible_point_mask(
    template: RasterTemplate,
    pose: Pose,
    action: ViewAction,
    ref_cam_pose: Pose,
) -> np.ndarray:
    """Which template points project inside the action's image, in front."""
    g = action.camera_pose.inverse() @ ref_cam_pose @ pose
    xy, _, front = project_points(action.intrinsics, g.transform(template.points))
    return front & inside_image(action.intrinsics, xy)


def dis_baseline(
    candidates: list[ObjectCandidate],
    actions: list[ViewAction],
    visited: set[int],
    templates: list[RasterTemplate],
    seen_masks: list[np.ndarray],
    ref_cam_pose: Pose,
) -> ViewAction:
    """Maximum-disocclusion baseline: argmax of sum_c score_c * (number of
    candidate template points newly visible from the action)."""
    unvisited = [a for a in actions if a.id not in visited]
    if not unvisited:
        raise DataError("no unvisited action left")
    best = None
    best_gain = -1.0
    for action in sorted(unvisited, key=lambda a: a.id):
        gain = 0.0
        for cand, tpl, seen in zip(candidates, templates, seen_masks):
            visible = visible_point_mask(tpl, cand.pose, action, ref_cam_pose)
            gain += (cand.score or 0.0) * float(np.count_nonzero(visible & ~seen))
        if gain > best_gain:
            best_gain = gain
            best = action
    return best


# ---------------------------------------------------------------------------
# Particle belief
# ---------------------------------------------------------------------------


def low_variance_resample(weights: np.ndarray, n: int, rng) -> np.ndarray:
    """Systematic resampling: indices drawn with a single random offset."""
    rng = np.random.default_rng(rng)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def seed_particles(
    candidates: list[ObjectCandidate],
    object_id: str,
    template: RasterTemplate,
    n_particles: int,
    rng,
    jitter_t: float,
    jitter_omega: float,
) -> ParticleSet:
    """Particles jittered around the target-type candidates.

    Candidates are chosen with probability proportional to their score
    weight exp(-(1 - score)^2); weights start uniform.
    """
    targets = [c for c in candidates if c.object_id == object_id]
    if not targets:
        raise DataError(f"no candidate of type {object_id!r} to seed from")
    rng = np.random.default_rng(rng)
    w = np.array([np.exp(-((1.0 - (c.score or 0.0)) ** 2)) for c in targets])
    w /= w.sum()
    picks = rng.choice(len(targets), size=n_particles, p=w)
    poses = np.empty((n_particles, 6))
    for i, pick in enumerate(picks):
        base = targets[pick].pose.params()
        poses[i, :3] = base[:3] + rng.normal(scale=jitter_t, size=3)
        poses[i, 3:] = base[3:] + rng.normal(scale=jitter_omega, size=3)
    return ParticleSet(
        object_id=object_id,
        poses=poses,
        weights=np.full(n_particles, 1.0 / n_particles),
        history=np.zeros(n_particles),
        seen=np.zeros((n_particles, len(template)), dtype=bool),
    )


@dataclass
class RealView:
    tensor: DcdTensor
    view: Pose  # reference camera -> this view's camera
    action: ViewAction


def average_tensor_distance(
    tensor: DcdTensor,
    template: RasterTemplate,
    pose: Pose,
    view: Pose,
    intr: CameraIntrinsics,
    point_idx: np.ndarray,
) -> float:
    """Average tensor value over a template subsample; LARGE_CD when unseen."""
    sub = RasterTemplate(
        points=template.points[point_idx],
        offset_points=template.offset_points[point_idx],
        step=template.step,
        dr=template.dr,
    )
    try:
        xy, xi = project_template(sub, pose, intr, view=view)
    except Exception:
        return LARGE_CD
    from ..dcd import lookup

    return float(np.mean(lookup(tensor, xy, xi)))


def update_particles(
    particles: ParticleSet,
    new_view: RealView,
    all_views: list[RealView],
    template: RasterTemplate,
    cfg: NbvConfig,
    rng,
) -> tuple[ParticleSet, dict]:
    """One Bayes step: refine, re-weight, resample.

    Every particle is refined with multi-view registration over all real
    views collected so far; its history then grows by the squared average
    distance measured on the new view; weights are gamma * exp(-history)
    with gamma the fraction of template points seen in any real view, and a
    low-variance resampler with Gaussian jitter regenerates the set.
    """
    rng = np.random.default_rng(rng)
    point_idx = subsample_indices(len(template), cfg.refine_points)
    refine_template = RasterTemplate(
        points=template.points[point_idx],
        offset_points=template.offset_points[point_idx],
        step=template.step,
        dr=template.dr,
    )
    reg_views = [
        RegistrationView(tensor=v.tensor, view=v.view, intr=v.action.intrinsics)
        for v in all_views
    ]
    mu_idx = subsample_indices(len(template), cfg.likelihood_points)
    n = len(particles)
    poses = particles.poses.copy()
    history = particles.history.copy()
    seen = particles.seen.copy()
    for i in range(n):
        start = Pose.from_params(poses[i])
        try:
            problem = RegistrationProblem(
                views=reg_views,
                template=refine_template,
                initial=start,
                options=cfg.particle_refine,
            )
            refined = d2co_register(problem).pose
        except NoVisiblePointsError:
            refined = start
        poses[i] = refined.params()
        mu = average_tensor_distance(
            new_view.tensor,
            template,
            refined,
            new_view.view,
            new_view.action.intrinsics,
            mu_idx,
        )
        history[i] += mu * mu
        seen[i] |= _seen_update(template, refined, new_view)
    gamma = seen.mean(axis=1)
    shifted = history - history.min()
    weights = gamma * np.exp(-shifted)
    degenerate = False
    if not np.isfinite(weights).all() or weights.sum() <= 0:
        weights = np.full(n, 1.0 / n)
        degenerate = True
    weights = weights / weights.sum()
    idx = low_variance_resample(weights, n, rng)
    new_poses = poses[idx].copy()
    new_poses[:, :3] += rng.normal(scale=cfg.resample_jitter_t, size=(n, 3))
    new_poses[:, 3:] += rng.normal(scale=cfg.resample_jitter_omega, size=(n, 3))
    out = ParticleSet(
        object_id=particles.object_id,
        poses=new_poses,
        weights=np.full(n, 1.0 / n),
        history=history[idx].copy(),
        seen=seen[idx].copy(),
    )
    posterior = ParticleSet(
        object_id=particles.object_id,
        poses=poses,
        weights=weights,
        history=history,
        seen=seen,
    )
    info = {
        "degenerate": degenerate,
        "pre_resample_weights": weights,
        "pre_resample_poses": poses,
        # the Bayes posterior at this step: refined poses with their weights,
        # before resampling re-spreads the set for the next prediction
        "posterior": posterior,
        "mean_history": float(history.mean()),
    }
    return out, info


def _seen_update(template: RasterTemplate, pose: Pose, view: RealView) -> np.ndarray:
    """Template points of ``pose`` visible in a real view (reference frame)."""
    eff = view.view @ pose
    xy, _, front = project_points(view.action.intrinsics, eff.transform(template.points))
    return front & inside_image(view.action.intrinsics, xy)


def _weighted_mean_pose(poses: np.ndarray, weights: np.ndarray) -> Pose:
    """Weight-averaged pose of a tight cluster.

    Translation averages directly; rotation averages unit quaternions after
    aligning their signs to the heaviest member (adequate for clusters whose
    spread is well below a radian).
    """
    weights = weights / weights.sum()
    t = weights @ poses[:, :3]
    quats = np.empty((poses.shape[0], 4))
    for k in range(poses.shape[0]):
        omega = poses[k, 3:]
        angle = np.linalg.norm(omega)
        axis = omega / angle if angle > 1e-12 else np.zeros(3)
        quats[k, 0] = np.cos(angle / 2.0)
        quats[k, 1:] = np.sin(angle / 2.0) * axis
    ref = quats[int(np.argmax(weights))]
    signs = np.where(quats @ ref >= 0, 1.0, -1.0)
    mean_q = (weights * signs) @ quats
    mean_q /= np.linalg.norm(mean_q)
    vec_norm = np.linalg.norm(mean_q[1:])
    if vec_norm < 1e-12:
        omega = np.zeros(3)
    else:
        omega = (2.0 * np.arctan2(vec_norm, abs(mean_q[0])) / vec_norm) * mean_q[1:]
        if mean_q[0] < 0:
            omega = -omega
    return Pose(t=t, omega=omega)


def cluster_particles(
    particles: ParticleSet,
    weights: np.ndarray | None = None,
    trans_radius: float = 0.005,
    rot_radius: float = 0.1,
):
    """Greedy mode extraction: heaviest unassigned particle seeds a cluster
    and absorbs everything within the pose radii.

    Returns (pose, weight) per cluster, heaviest first. The reported pose is
    the weighted mean of the members, which averages away the resampling
    jitter that any single member carries.
    """
    w = particles.weights if weights is None else weights
    order = np.argsort(-w)
    assigned = np.zeros(len(particles), dtype=bool)
    clusters = []
    for i in order:
        if assigned[i]:
            continue
        center = particles.pose(int(i))
        members = []
        for j in order:
            if assigned[j]:
                continue
            dt, dr = pose_error(center, particles.pose(int(j)))
            if dt < trans_radius and dr < rot_radius:
                assigned[j] = True
                members.append(int(j))
        member_w = np.maximum(w[members], 1e-12)
        clusters.append(
            (_weighted_mean_pose(particles.poses[members], member_w), float(w[members].sum()))
        )
    clusters.sort(key=lambda c: -c[1])
    return clusters


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------


@dataclass
class NbvResult:
    detections: list[tuple[str, Pose, float]]  # (object_id, world pose, weight)
    telemetry: list[dict]
    particles: ParticleSet
    candidates: list[ObjectCandidate]


@dataclass
class NbvState:
    """Prepared planning state after the initial observation.

    Immutable for the planning loop's purposes: ``run_nbv`` copies the
    mutable pieces, so several strategies can run from one preparation.
    """

    actions: list[ViewAction]
    ref_cam_pose: Pose
    candidates: list[ObjectCandidate]
    templates: list[RasterTemplate]
    realizations: list[SceneRealization]
    cache: RenderCache
    particles: ParticleSet
    searched_template: RasterTemplate
    initial_view: "RealView"
    seen_masks: list[np.ndarray]


def detect_and_refine(
    edgels: EdgelSet,
    grad_dir: GradientDirectionImage,
    models: dict[str, ModelAssets],
    intr: CameraIntrinsics,
    cfg: NbvConfig,
):
    """Initial detection across all model banks plus refinement and scoring.

    Returns (candidates, templates, tensor). Candidate poses are in the
    observing camera's frame; each model contributes an equal share of the
    candidate budget. The scan keeps several times that share so that true
    poses buried in the (noisy) distance ranking survive to refinement; the
    final cut ranks by the refined gradient-direction score, which separates
    validated matches from junk far more sharply than the raw distance.
    """
    tensor = build_dcd(
        edgels, intr.width, intr.height, q=cfg.q, lambda_=cfg.lambda_, sigma=cfg.sigma
    )
    per_model = max(1, int(np.ceil(cfg.n_candidates / max(len(models), 1))))
    candidates: list[ObjectCandidate] = []
    templates: list[RasterTemplate] = []
    for oid in sorted(models):
        assets = models[oid]
        found = scan_candidates(
            tensor,
            assets.bank,
            intr,
            top_k=per_model * max(1, cfg.scan_depth),
            min_visible_fraction=cfg.min_visible_fraction,
            nms_trans=cfg.nms_trans,
            nms_rot=cfg.nms_rot,
        )
        refined_model: list[ObjectCandidate] = []
        for cand in found:
            tpl = assets.bank.entries[cand.template_ref].template
            problem = RegistrationProblem(
                views=[RegistrationView(tensor=tensor, view=Pose(), intr=intr)],
                template=tpl,
                initial=cand.pose,
                options=cfg.refine,
            )
            try:
                refined = d2co_register(problem)
                pose = refined.pose
            except NoVisiblePointsError:
                pose = cand.pose
            try:
                s = score(pose, tpl, grad_dir, intr)
            except Exception:
                s = 0.0
            refined_model.append(cand.with_pose(pose).with_score(s))
        order = np.argsort([-c.score for c in refined_model])[:per_model]
        for i in order:
            candidates.append(refined_model[i])
            templates.append(
                models[refined_model[i].object_id].bank.entries[
                    refined_model[i].template_ref
                ].template
            )
    order = np.argsort([-(c.score or 0.0) for c in candidates])[: cfg.n_candidates]
    candidates = [candidates[i] for i in order]
    templates = [templates[i] for i in order]
    return candidates, templates, tensor


def prepare_nbv(
    source: ObservationSource,
    models: dict[str, ModelAssets],
    actions: list[ViewAction],
    cfg: NbvConfig,
) -> NbvState:
    """Initial observation, detection, refinement, combination sampling,
    render-cache construction, and particle seeding."""
    if cfg.target_object not in models:
        raise ConfigError(f"target object {cfg.target_object!r} not among models")
    by_id = {a.id: a for a in actions}
    if cfg.initial_action not in by_id:
        raise ConfigError("initial action id not in the action set")
    rng = np.random.default_rng(cfg.seed)
    initial_action = by_id[cfg.initial_action]
    ref_cam_pose = initial_action.camera_pose
    intr = initial_action.intrinsics

    edgels, grad_dir = source.observe(initial_action)
    candidates, templates, tensor0 = detect_and_refine(
        edgels, grad_dir, models, intr, cfg
    )
    if not candidates:
        raise DataError("initial detection produced no candidate")

    aabbs = [
        models[c.object_id].mesh.aabb(c.pose) for c in candidates
    ]
    realizations = sample_combinations(
        [c.score or 0.0 for c in candidates],
        aabbs,
        cfg.n_combinations,
        rng,
        inflate=cfg.plausibility_inflate,
    )
    searched_template = max(
        (t for c, t in zip(candidates, templates) if c.object_id == cfg.target_object),
        key=len,
        default=None,
    )
    if searched_template is None:
        raise DataError("no candidate of the searched type")
    cache = render_realization_maps(
        candidates,
        templates,
        actions,
        ref_cam_pose,
        searched_template,
        scale=cfg.render_scale,
        likelihood_points=cfg.likelihood_points,
        occlusion_eps=cfg.occlusion_eps,
    )
    particles = seed_particles(
        candidates,
        cfg.target_object,
        searched_template,
        cfg.n_particles,
        rng,
        cfg.seed_jitter_t,
        cfg.seed_jitter_omega,
    )
    initial_view = RealView(tensor=tensor0, view=Pose(), action=initial_action)
    for i in range(len(particles)):
        particles.seen[i] = _seen_update(
            searched_template, particles.pose(i), initial_view
        )
    seen_masks = [
        visible_point_mask(t, c.pose, initial_action, ref_cam_pose)
        for c, t in zip(candidates, templates)
    ]
    return NbvState(
        actions=actions,
        ref_cam_pose=ref_cam_pose,
        candidates=candidates,
        templates=templates,
        realizations=realizations,
        cache=cache,
        particles=particles,
        searched_template=searched_template,
        initial_view=initial_view,
        seen_masks=seen_masks,
    )


def run_nbv(
    state: NbvState,
    source: ObservationSource,
    cfg: NbvConfig,
    on_step: Callable[[dict], None] | None = None,
) -> NbvResult:
    """Plan / observe / update until the view budget is exhausted (or, for
    the MI strategy, the best attainable MI falls below the threshold).

    Leaves ``state`` untouched so several strategies can share it.
    """
    rng = np.random.default_rng((cfg.seed, 1))
    actions = state.actions
    ref_cam_pose = state.ref_cam_pose
    candidates = state.candidates
    templates = state.templates
    realizations = state.realizations
    cache = state.cache
    searched_template = state.searched_template
    particles = state.particles
    posterior = state.particles  # detections read the latest Bayes posterior
    views = [state.initial_view]
    visited = {state.initial_view.action.id}
    seen_masks = [m.copy() for m in state.seen_masks]

    telemetry: list[dict] = []
    for step in range(1, cfg.max_views + 1):
        unvisited = [a for a in actions if a.id not in visited]
        if not unvisited:
            break
        mi_map: dict[int, float] = {}
        if cfg.strategy == "mi-max":
            action, mi_map = select_action(
                particles, realizations, actions, visited, cache, len(candidates)
            )
            if mi_map[action.id] < cfg.mi_epsilon:
                break
        elif cfg.strategy == "dis":
            action = dis_baseline(
                candidates, actions, visited, templates, seen_masks, ref_cam_pose
            )
        else:
            action = random_baseline(actions, visited, rng)
        visited.add(action.id)

        obs_edgels, _ = source.observe(action)
        tensor = build_dcd(
            obs_edgels,
            action.intrinsics.width,
            action.intrinsics.height,
            q=cfg.q,
            lambda_=cfg.lambda_,
            sigma=cfg.sigma,
        )
        g = action.camera_pose.inverse() @ ref_cam_pose
        new_view = RealView(tensor=tensor, view=g, action=action)
        views.append(new_view)
        particles, info = update_particles(
            particles, new_view, views, searched_template, cfg, rng
        )
        posterior = info["posterior"]
        for ci in range(len(candidates)):
            seen_masks[ci] |= visible_point_mask(
                templates[ci], candidates[ci].pose, action, ref_cam_pose
            )
        clusters = cluster_particles(
            posterior,
            weights=None,
            trans_radius=cfg.cluster_trans,
            rot_radius=cfg.cluster_rot,
        )
        detections = extract_detections(posterior, ref_cam_pose, cfg)
        row = {
            "step": step,
            "action_id": action.id,
            "strategy": cfg.strategy,
            "mi": {str(k): v for k, v in sorted(mi_map.items())},
            "degenerate_weights": info["degenerate"],
            "mean_history": info["mean_history"],
            "n_clusters": len(clusters),
            "top_cluster_weight": clusters[0][1] if clusters else 0.0,
            "detections": [
                {"object_id": oid, "pose": pose.params().tolist(), "weight": w}
                for oid, pose, w in detections
            ],
        }
        telemetry.append(row)
        if on_step is not None:
            on_step(row)

    detections = extract_detections(posterior, ref_cam_pose, cfg)
    return NbvResult(
        detections=detections,
        telemetry=telemetry,
        particles=particles,
        candidates=candidates,
    )


def nbv_loop(
    source: ObservationSource,
    models: dict[str, ModelAssets],
    actions: list[ViewAction],
    cfg: NbvConfig,
    on_step: Callable[[dict], None] | None = None,
) -> NbvResult:
    """Full active detection run: preparation plus the planning loop."""
    state = prepare_nbv(source, models, actions, cfg)
    return run_nbv(state, source, cfg, on_step=on_step)


def extract_detections(
    particles: ParticleSet, ref_cam_pose: Pose, cfg: NbvConfig
) -> list[tuple[str, Pose, float]]:
    """Cluster the belief and keep modes above the weight threshold,
    reported in the world frame."""
    clusters = cluster_particles(
        particles,
        trans_radius=cfg.cluster_trans,
        rot_radius=cfg.cluster_rot,
    )
    out = []
    for pose_ref, weight in clusters:
        if weight >= cfg.detection_weight_threshold:
            out.append((particles.object_id, ref_cam_pose @ pose_ref, weight))
    return out
