"""Experiment configuration: JSON with defaults, overrides, and asset
construction shared by all CLI subcommands."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import CameraIntrinsics, Pose
from .mesh import TriMesh, extract_wire_edges, load_stl, make_primitive
from .nbv import ModelAssets, NbvConfig
from .registration import RegistrationOptions
from .simulate import NoiseParams
from .template import TemplateBank, build_template_bank, load_bank, save_bank

ENV_CONFIG = "EDGEPOSE_CONFIG"

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "output_dir": "edgepose-out",
    "intrinsics": {
        "fx": 420.0, "fy": 420.0, "cx": 160.0, "cy": 120.0,
        "width": 320, "height": 240,
    },
    "models": [
        {"id": "box", "kind": "box", "size": [0.05, 0.04, 0.03]},
        {"id": "cylinder", "kind": "cylinder", "radius": 0.018, "height": 0.045,
         "segments": 24},
        {"id": "lbracket", "kind": "lbracket", "width": 0.06, "height": 0.06,
         "thickness": 0.02, "depth": 0.025},
    ],
    "template": {"step": 0.003, "dr": 0.001, "dihedral_threshold": 0.52},
    "detector": {
        "levels": 2, "mag_threshold": 0.08,
        "angle_tolerance": 0.39269908169872414, "min_length": 5.0,
    },
    "tensor": {"q": 60, "lambda": 100.0, "sigma": 1.0},
    "bank": {
        "x": [-0.08, 0.08, 9],
        "y": [-0.06, 0.06, 7],
        "z": [0.45, 0.45, 1],
        "upright_yaws": 24,
        "rotations": None,
    },
    "registration": {
        "max_iterations": 50, "huber_delta": 10.0, "initial_damping": 1e-3,
    },
    "scene": {
        "count": 4,
        "bounds": [[-0.07, -0.05, 0.0], [0.07, 0.05, 0.0]],
        "rotation_mode": "yaw",
        "noise": {
            "dropout_rate": 0.05, "jitter_sigma": 0.2, "clutter_count": 5,
            "orientation_noise_sigma": 0.0,
        },
    },
    "views": {"center": [0.0, 0.0, 0.0], "radius": 0.45, "count": 32},
    "nbv": {
        "target_object": "lbracket",
        "n_candidates": 40,
        "n_particles": 200,
        "n_combinations": 1000,
        "max_views": 4,
        "mi_epsilon": 1e-3,
        "strategy": "mi-max",
        "initial_action": 0,
    },
    "benchmark": {
        "basin_magnitudes_mm": [5.0, 10.0, 15.0, 20.0, 25.0],
        "basin_scenes": 25,
        "basin_perturbations": 4,
        "multiview_scenes": 50,
        "detection_scenes": 50,
        "detection_bank": 200,
        "scoring_trials": 100,
        "nbv_scenes": 20,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=json_value`` command-line overrides."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are allowed
        node = cfg
        keys = path.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return cfg


class ExperimentConfig:
    """Validated configuration plus lazily-built assets."""

    def __init__(self, raw: dict, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir
        self.seed = int(raw["seed"])
        self.output_dir = Path(raw["output_dir"])
        if not self.output_dir.is_absolute():
            self.output_dir = base_dir / self.output_dir
        self.intrinsics = CameraIntrinsics(**raw["intrinsics"])
        self.noise = NoiseParams(**raw["scene"]["noise"])
        self.registration_options = RegistrationOptions(
            max_iterations=int(raw["registration"]["max_iterations"]),
            huber_delta=float(raw["registration"]["huber_delta"]),
            initial_damping=float(raw["registration"]["initial_damping"]),
        )
        self._meshes: dict[str, TriMesh] | None = None
        self._validate()

    def _validate(self):
        raw = self.raw
        if raw["tensor"]["q"] < 2:
            raise ConfigError("tensor.q must be >= 2")
        if raw["tensor"]["lambda"] < 0:
            raise ConfigError("tensor.lambda must be >= 0")
        if raw["template"]["step"] <= 0 or raw["template"]["dr"] <= 0:
            raise ConfigError("template.step and template.dr must be positive")
        if not raw["models"]:
            raise ConfigError("at least one model is required")
        ids = [m["id"] for m in raw["models"]]
        if len(set(ids)) != len(ids):
            raise ConfigError("model ids must be unique")
        for model in raw["models"]:
            if "stl" in model:
                path = self._resolve(model["stl"])
                if not path.exists():
                    raise ConfigError(f"model file missing: {path}")
        if raw["views"]["count"] < 1:
            raise ConfigError("views.count must be >= 1")

    def _resolve(self, path_str: str) -> Path:
        path = Path(path_str)
        return path if path.is_absolute() else self.base_dir / path

    def meshes(self) -> dict[str, TriMesh]:
        if self._meshes is None:
            out = {}
            for model in self.raw["models"]:
                if "stl" in model:
                    out[model["id"]] = load_stl(self._resolve(model["stl"]).read_bytes())
                else:
                    kwargs = {
                        k: v for k, v in model.items() if k not in ("id", "kind")
                    }
                    kwargs = {
                        k: (tuple(v) if isinstance(v, list) else v)
                        for k, v in kwargs.items()
                    }
                    out[model["id"]] = make_primitive(model["kind"], **kwargs)
            self._meshes = out
        return self._meshes

    def wire_edges(self) -> dict[str, list]:
        threshold = self.raw["template"]["dihedral_threshold"]
        return {k: extract_wire_edges(m, threshold) for k, m in self.meshes().items()}

    def bank_grid(self) -> tuple[list[Pose], dict]:
        bank = self.raw["bank"]
        if bank.get("rotations"):
            rotations = [np.asarray(r, dtype=float) for r in bank["rotations"]]
        else:
            from .experiments import upright_camera_rotations

            rotations = upright_camera_rotations(int(bank.get("upright_yaws", 24)))
        xs = np.linspace(*bank["x"][:2], int(bank["x"][2]))
        ys = np.linspace(*bank["y"][:2], int(bank["y"][2]))
        zs = np.linspace(*bank["z"][:2], int(bank["z"][2]))
        poses = [
            Pose(t=[x, y, z], omega=rot)
            for rot in rotations
            for z in zs
            for y in ys
            for x in xs
        ]
        meta = {"x": bank["x"], "y": bank["y"], "z": bank["z"],
                "rotations": [list(map(float, r)) for r in rotations]}
        return poses, meta

    def build_assets(self, cache_dir: Path | None = None, rebuild: bool = False):
        """Template banks per model, optionally cached under ``cache_dir``."""
        meshes = self.meshes()
        wires = self.wire_edges()
        grid, meta = self.bank_grid()
        tpl = self.raw["template"]
        assets: dict[str, ModelAssets] = {}
        for oid in sorted(meshes):
            bank: TemplateBank | None = None
            cache_path = None
            if cache_dir is not None:
                cache_path = Path(cache_dir) / f"bank_{oid}.npz"
                if cache_path.exists() and not rebuild:
                    bank = load_bank(cache_path)
            if bank is None:
                bank = build_template_bank(
                    meshes[oid],
                    wires[oid],
                    grid,
                    self.intrinsics,
                    step=tpl["step"],
                    dr=tpl["dr"],
                    object_id=oid,
                    grid_meta=meta,
                )
                if cache_path is not None:
                    cache_path.parent.mkdir(parents=True, exist_ok=True)
                    save_bank(bank, cache_path)
            assets[oid] = ModelAssets(
                object_id=oid, mesh=meshes[oid], edges=wires[oid], bank=bank
            )
        return assets

    def nbv_config(self, **overrides) -> NbvConfig:
        nbv = dict(self.raw["nbv"])
        nbv.update(overrides)
        nbv.setdefault("seed", self.seed)
        nbv["q"] = int(self.raw["tensor"]["q"])
        nbv["lambda_"] = float(self.raw["tensor"]["lambda"])
        nbv["sigma"] = float(self.raw["tensor"]["sigma"])
        nbv["refine"] = self.registration_options
        return NbvConfig(**nbv)


def load_config(
    path: str | os.PathLike | None, overrides: list[str] | None = None
) -> ExperimentConfig:
    """Load a config file (or the built-in defaults) plus CLI overrides.

    With no explicit path the EDGEPOSE_CONFIG environment variable is
    consulted; failing that, defaults apply.
    """
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        path = env if env else None
    raw = copy.deepcopy(DEFAULT_CONFIG)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file missing: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        raw = _deep_merge(raw, user)
        base_dir = path.parent.resolve()
    if overrides:
        raw = _apply_overrides(raw, overrides)
    return ExperimentConfig(raw, base_dir)
