"""Command-line entry points wiring the library into reproducible runs.

Subcommands: detect, register, nbv, benchmark, render-scene. All inputs come
from a JSON config (EDGEPOSE_CONFIG or --config) plus ``--set`` overrides;
outputs are JSON / JSON-lines / CSV with schema-version fields. Exit codes:
0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import ENV_CONFIG, ExperimentConfig, load_config
from .dcd import build_dcd
from .detection import (
    CANDIDATES_SCHEMA_VERSION,
    candidate_to_dict,
    load_candidates,
    save_candidates,
    scan_candidates,
)
from .edges import detect_edgelets, gradient_direction_image, load_gray
from .errors import ConfigError, DataError, EdgeposeError
from .geometry import Pose
from .nbv import nbv_loop
from .registration import (
    RegistrationProblem,
    RegistrationView,
    d2co_register,
    score,
)
from .simulate import (
    SimulatedObservationSource,
    SyntheticScene,
    evaluate,
    generate_scene,
    hemisphere_views,
)

TELEMETRY_SCHEMA_VERSION = 1


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# schema_version=1"])
        writer.writerow(header)
        writer.writerows(rows)


def _scene_from_args(cfg: ExperimentConfig, args) -> SyntheticScene:
    if getattr(args, "scene", None):
        return SyntheticScene.load(args.scene)
    scene_cfg = cfg.raw["scene"]
    return generate_scene(
        cfg.meshes(),
        int(scene_cfg["count"]),
        scene_cfg["bounds"],
        seed=cfg.seed if args.scene_seed is None else args.scene_seed,
        rotation_mode=scene_cfg.get("rotation_mode", "uniform"),
    )


def _actions(cfg: ExperimentConfig):
    views = cfg.raw["views"]
    return hemisphere_views(
        views["center"], views["radius"], int(views["count"]), cfg.intrinsics,
        seed=cfg.seed,
    )


def _observation(cfg: ExperimentConfig, args, scene, actions):
    """Edgels + gradient-direction image, from a file or the simulator."""
    if getattr(args, "image", None):
        img = load_gray(args.image)
        det = cfg.raw["detector"]
        edgels = detect_edgelets(
            img,
            levels=int(det["levels"]),
            mag_threshold=float(det["mag_threshold"]),
            angle_tolerance=float(det["angle_tolerance"]),
            min_length=float(det["min_length"]),
        )
        return edgels, gradient_direction_image(img)
    source = SimulatedObservationSource(
        scene, cfg.meshes(), cfg.wire_edges(), cfg.noise, seed=cfg.seed,
        step=float(cfg.raw["template"]["step"]),
    )
    return source.observe(actions[args.action_id])


def cmd_detect(cfg: ExperimentConfig, args) -> int:
    actions = _actions(cfg)
    scene = None if args.image else _scene_from_args(cfg, args)
    edgels, _ = _observation(cfg, args, scene, actions)
    tensor_cfg = cfg.raw["tensor"]
    tensor = build_dcd(
        edgels,
        cfg.intrinsics.width,
        cfg.intrinsics.height,
        q=int(tensor_cfg["q"]),
        lambda_=float(tensor_cfg["lambda"]),
        sigma=float(tensor_cfg["sigma"]),
    )
    assets = cfg.build_assets(cache_dir=cfg.output_dir / "banks", rebuild=args.rebuild_banks)
    candidates = []
    for oid in sorted(assets):
        candidates.extend(
            scan_candidates(tensor, assets[oid].bank, cfg.intrinsics, top_k=args.top_k)
        )
    candidates.sort(key=lambda c: c.avg_dcd)
    candidates = candidates[: args.top_k]
    out = Path(args.output or cfg.output_dir / "candidates.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_candidates(candidates, out)
    print(f"wrote {len(candidates)} candidates to {out}")
    return 0


def cmd_register(cfg: ExperimentConfig, args) -> int:
    candidates = load_candidates(args.candidates)
    actions = _actions(cfg)
    scene = _scene_from_args(cfg, args)
    source = SimulatedObservationSource(
        scene, cfg.meshes(), cfg.wire_edges(), cfg.noise, seed=cfg.seed,
        step=float(cfg.raw["template"]["step"]),
    )
    tensor_cfg = cfg.raw["tensor"]
    views = []
    grad_dir0 = None
    ref = actions[0].camera_pose
    for action in actions[: max(1, args.views)]:
        edgels, grad_dir = source.observe(action)
        tensor = build_dcd(
            edgels, cfg.intrinsics.width, cfg.intrinsics.height,
            q=int(tensor_cfg["q"]), lambda_=float(tensor_cfg["lambda"]),
            sigma=float(tensor_cfg["sigma"]),
        )
        if grad_dir0 is None:
            grad_dir0 = grad_dir
        views.append(
            RegistrationView(
                tensor=tensor,
                view=action.camera_pose.inverse() @ ref,
                intr=cfg.intrinsics,
            )
        )
    assets = cfg.build_assets(cache_dir=cfg.output_dir / "banks", rebuild=False)
    records = []
    for cand in candidates:
        record = candidate_to_dict(cand)
        try:
            template = assets[cand.object_id].bank.entries[cand.template_ref].template
            problem = RegistrationProblem(
                views=views,
                template=template,
                initial=cand.pose,
                options=cfg.registration_options,
            )
            result = d2co_register(problem)
            record["pose"] = {
                "t": result.pose.t.tolist(),
                "omega": result.pose.omega.tolist(),
            }
            record["score"] = score(result.pose, template, grad_dir0, cfg.intrinsics)
            record["final_cost"] = result.final_cost
            record["converged"] = result.converged
        except EdgeposeError as exc:
            record["error"] = str(exc)
        records.append(record)
    out = Path(args.output or cfg.output_dir / "refined.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(
            {"schema_version": CANDIDATES_SCHEMA_VERSION, "candidates": records},
            indent=2,
        )
    )
    print(f"wrote {len(records)} refined candidates to {out}")
    return 0


def cmd_nbv(cfg: ExperimentConfig, args) -> int:
    actions = _actions(cfg)
    scene = _scene_from_args(cfg, args)
    source = SimulatedObservationSource(
        scene, cfg.meshes(), cfg.wire_edges(), cfg.noise, seed=cfg.seed,
        step=float(cfg.raw["template"]["step"]),
    )
    assets = cfg.build_assets(cache_dir=cfg.output_dir / "banks", rebuild=args.rebuild_banks)
    overrides = {}
    if args.strategy:
        overrides["strategy"] = args.strategy
    if args.max_views is not None:
        overrides["max_views"] = args.max_views
    nbv_cfg = cfg.nbv_config(**overrides)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    telemetry_path = cfg.output_dir / "telemetry.jsonl"
    with open(telemetry_path, "w") as fh:
        fh.write(json.dumps({"schema_version": TELEMETRY_SCHEMA_VERSION}) + "\n")

        def on_step(row):
            fh.write(json.dumps(row) + "\n")
            fh.flush()

        result = nbv_loop(source, assets, actions, nbv_cfg, on_step=on_step)
    detections = [
        {"object_id": oid, "t": p.t.tolist(), "omega": p.omega.tolist(), "weight": w}
        for oid, p, w in result.detections
    ]
    det_path = cfg.output_dir / "detections.json"
    det_path.write_text(
        json.dumps({"schema_version": 1, "detections": detections}, indent=2)
    )
    target_scene = SyntheticScene(
        placements=tuple(
            p for p in scene.placements if p[0] == nbv_cfg.target_object
        ),
        bounds=scene.bounds,
        seed=scene.seed,
    )
    metrics = evaluate(
        [(oid, Pose(t=d["t"], omega=d["omega"])) for oid, d in
         ((d["object_id"], d) for d in detections)],
        target_scene,
    )
    _write_csv(
        cfg.output_dir / "nbv_metrics.csv",
        ["strategy", "views", "correct", "total_truth", "false_positives"],
        [[nbv_cfg.strategy, len(result.telemetry) + 1, metrics.correct,
          metrics.total_truth, metrics.false_positives]],
    )
    print(
        f"{nbv_cfg.strategy}: {metrics.correct}/{metrics.total_truth} correct, "
        f"{metrics.false_positives} false positives; telemetry in {telemetry_path}"
    )
    return 0


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    from . import experiments

    bench = cfg.raw["benchmark"]
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    suites = (
        ["basin", "multiview", "detection", "scoring", "nbv", "timing"]
        if args.suite == "all"
        else [args.suite]
    )
    for suite in suites:
        if suite == "basin":
            res = experiments.registration_basin_experiment(
                magnitudes_mm=tuple(bench["basin_magnitudes_mm"]),
                n_scenes=int(bench["basin_scenes"]),
                perturbations_per_scene=int(bench["basin_perturbations"]),
                seed=cfg.seed,
            )
            _write_csv(
                out_dir / "basin.csv",
                ["magnitude_mm", "success_rate", "n_trials"],
                [
                    [m, r, res["n_trials"]]
                    for m, r in zip(res["magnitudes_mm"], res["success_rates"])
                ],
            )
        elif suite == "multiview":
            res = experiments.multiview_gain_experiment(
                n_scenes=int(bench["multiview_scenes"]), seed=cfg.seed
            )
            _write_csv(
                out_dir / "multiview.csv",
                ["views", "correct_rate", "mean_occlusion"],
                [
                    [1, res["single_rate"], res["mean_occlusion"]],
                    [3, res["multi_rate"], res["mean_occlusion"]],
                ],
            )
        elif suite == "detection":
            res = experiments.detection_ranking_experiment(
                n_scenes=int(bench["detection_scenes"]),
                bank_entries=int(bench["detection_bank"]),
                seed=cfg.seed,
            )
            _write_csv(
                out_dir / "detection.csv",
                ["allowed_false_positives", "true_positive_rate"],
                list(enumerate(res["tp_curve"])),
            )
        elif suite == "scoring":
            res = experiments.scoring_calibration_experiment(
                n_trials=int(bench["scoring_trials"]), seed=cfg.seed
            )
            _write_csv(
                out_dir / "scoring.csv",
                ["trial", "truth_score", "displaced_score"],
                [
                    [i, t, d]
                    for i, (t, d) in enumerate(
                        zip(res["truth_scores"], res["displaced_scores"])
                    )
                ],
            )
        elif suite == "nbv":
            res = experiments.nbv_experiment(
                n_scenes=int(bench["nbv_scenes"]),
                seed=cfg.seed,
                n_actions=int(cfg.raw["views"]["count"]),
                target_object=cfg.raw["nbv"]["target_object"],
                cfg_overrides={
                    "n_candidates": int(cfg.raw["nbv"]["n_candidates"]),
                    "n_particles": int(cfg.raw["nbv"]["n_particles"]),
                    "n_combinations": int(cfg.raw["nbv"]["n_combinations"]),
                    "max_views": int(cfg.raw["nbv"]["max_views"]),
                },
            )
            _write_csv(
                out_dir / "nbv_curves.csv",
                ["scene", "strategy", "views", "correct_rate", "false_positives",
                 "action_id"],
                [
                    [r["scene"], r["strategy"], r["views"], r["correct_rate"],
                     r["false_positives"], r["action_id"]]
                    for r in res["rows"]
                ],
            )
        elif suite == "timing":
            res = experiments.timing_benchmark(seed=cfg.seed)
            _write_csv(
                out_dir / "timing.csv",
                ["metric", "value"],
                [[k, v] for k, v in res.items()],
            )
        else:
            raise ConfigError(f"unknown benchmark suite {suite!r}")
        print(f"benchmark suite {suite!r} written under {out_dir}")
    return 0


def cmd_render_scene(cfg: ExperimentConfig, args) -> int:
    scene = _scene_from_args(cfg, args)
    actions = _actions(cfg)
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    scene.save(out_dir / "scene.json")
    source = SimulatedObservationSource(
        scene, cfg.meshes(), cfg.wire_edges(), cfg.noise, seed=cfg.seed,
        step=float(cfg.raw["template"]["step"]),
    )
    n = min(args.views, len(actions))
    for action in actions[:n]:
        edgels, _ = source.observe(action)
        edgels.to_csv(out_dir / f"edgels_view{action.id:03d}.csv")
    print(f"wrote scene.json and {n} edgel files under {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgepose",
        description=(
            "Edge-based object detection, direct distance-tensor pose "
            "registration, and next-best-view planning."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument(
            "--config", help=f"config JSON (default: ${ENV_CONFIG} or built-ins)"
        )
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config entry by dotted path",
        )

    p = sub.add_parser("detect", help="scan template banks against one observation")
    common(p)
    p.add_argument("--image", help="grayscale image (PGM/PNG) instead of the simulator")
    p.add_argument("--scene", help="scene JSON to simulate from")
    p.add_argument("--scene-seed", type=int, default=None)
    p.add_argument("--action-id", type=int, default=0)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--output")
    p.add_argument("--rebuild-banks", action="store_true")

    p = sub.add_parser("register", help="refine candidates over one or more views")
    common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--scene", help="scene JSON to simulate from")
    p.add_argument("--scene-seed", type=int, default=None)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--output")

    p = sub.add_parser("nbv", help="run the active detection loop")
    common(p)
    p.add_argument("--scene", help="scene JSON to simulate from")
    p.add_argument("--scene-seed", type=int, default=None)
    p.add_argument("--strategy", choices=["mi-max", "dis", "random"])
    p.add_argument("--max-views", type=int, default=None)
    p.add_argument("--rebuild-banks", action="store_true")

    p = sub.add_parser("benchmark", help="run a benchmark suite, emit CSV tables")
    common(p)
    p.add_argument(
        "--suite",
        default="all",
        choices=["basin", "multiview", "detection", "scoring", "nbv", "timing", "all"],
    )

    p = sub.add_parser("render-scene", help="generate a scene and its edge maps")
    common(p)
    p.add_argument("--scene", help="existing scene JSON to re-render")
    p.add_argument("--scene-seed", type=int, default=None)
    p.add_argument("--views", type=int, default=4)

    return parser


_COMMANDS = {
    "detect": cmd_detect,
    "register": cmd_register,
    "nbv": cmd_nbv,
    "benchmark": cmd_benchmark,
    "render-scene": cmd_render_scene,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EdgeposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
