"""Next-best-view planning: observation sampling, particle belief, and
mutual-information action selection."""

from .planner import (
    NbvState,
    prepare_nbv,
    run_nbv,
    ModelAssets,
    NbvConfig,
    NbvResult,
    cluster_particles,
    detect_and_refine,
    extract_detections,
    dis_baseline,
    likelihood,
    low_variance_resample,
    mutual_information,
    nbv_loop,
    random_baseline,
    seed_particles,
    select_action,
    update_particles,
)
from .rendering import (
    LARGE_CD,
    RenderCache,
    batch_realization_avg_cd,
    realization_avg_cd,
    render_realization_maps,
)
from .sampling import aabbs_intersect, candidate_probability, sample_combinations
from .types import ParticleSet, RealizationRender, SceneRealization, ViewAction

__all__ = [
    "NbvState",
    "prepare_nbv",
    "run_nbv",
    "LARGE_CD",
    "ModelAssets",
    "NbvConfig",
    "NbvResult",
    "ParticleSet",
    "RealizationRender",
    "RenderCache",
    "SceneRealization",
    "ViewAction",
    "aabbs_intersect",
    "batch_realization_avg_cd",
    "candidate_probability",
    "cluster_particles",
    "detect_and_refine",
    "extract_detections",
    "dis_baseline",
    "likelihood",
    "low_variance_resample",
    "mutual_information",
    "nbv_loop",
    "random_baseline",
    "realization_avg_cd",
    "render_realization_maps",
    "sample_combinations",
    "seed_particles",
    "select_action",
    "update_particles",
]
