"""Tests for the synthetic scene generator, renderer, and evaluation."""

import numpy as np
import pytest

from edgepose.errors import ConfigError, PlacementError
from edgepose.geometry import CameraIntrinsics, Pose, pose_error, project
from edgepose.mesh import extract_wire_edges, make_box, make_cylinder
from edgepose.nbv.sampling import aabbs_intersect
from edgepose.nbv.types import ViewAction
from edgepose.simulate import (
    NoiseParams,
    SimulatedObservationSource,
    SyntheticScene,
    evaluate,
    generate_scene,
    hemisphere_views,
    perturb_pose,
    render_observation,
    render_scene_edgels,
)
from edgepose.template import visible_template

INTR = CameraIntrinsics(fx=400.0, fy=400.0, cx=160.0, cy=120.0, width=320, height=240)
MODELS = {"box": make_box(size=(0.05, 0.04, 0.03)), "cyl": make_cylinder(0.015, 0.04)}
EDGES = {k: extract_wire_edges(m) for k, m in MODELS.items()}
BOUNDS = [[-0.1, -0.1, -0.02], [0.1, 0.1, 0.02]]


def overhead_view(action_id=0, height=0.5):
    return ViewAction(
        id=action_id,
        camera_pose=Pose(t=[0, 0, -height]),  # camera frame == world, z forward
        intrinsics=INTR,
    )


def shifted_scene(oid="box", t=(0, 0, 0), omega=(0, 0, 0)):
    return SyntheticScene(
        placements=((oid, Pose(t=t, omega=omega)),),
        bounds=np.asarray(BOUNDS),
        seed=0,
    )


class TestGenerateScene:
    def test_single_placement_inside_bounds(self):
        scene = generate_scene(MODELS, 1, BOUNDS, seed=3)
        assert len(scene.placements) == 1
        t = scene.placements[0][1].t
        assert np.all(t >= np.asarray(BOUNDS[0])) and np.all(t <= np.asarray(BOUNDS[1]))

    def test_deterministic(self):
        a = generate_scene(MODELS, 4, BOUNDS, seed=9)
        b = generate_scene(MODELS, 4, BOUNDS, seed=9)
        for (ida, pa), (idb, pb) in zip(a.placements, b.placements):
            assert ida == idb
            np.testing.assert_array_equal(pa.params(), pb.params())

    def test_pairwise_plausibility(self):
        big = [[-0.25, -0.25, -0.03], [0.25, 0.25, 0.03]]
        scene = generate_scene(MODELS, 10, big, seed=1)
        boxes = [MODELS[oid].aabb(p) for oid, p in scene.placements]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert not aabbs_intersect(boxes[i], boxes[j], 0.002)

    def test_impossible_packing_raises(self):
        tiny = [[-0.01, -0.01, 0.0], [0.01, 0.01, 0.0]]
        with pytest.raises(PlacementError):
            generate_scene(MODELS, 12, tiny, seed=0, max_rejections=200)

    def test_yaw_mode_keeps_objects_flat(self):
        scene = generate_scene(MODELS, 5, BOUNDS, seed=4, rotation_mode="yaw")
        for _, pose in scene.placements:
            assert pose.omega[0] == 0.0 and pose.omega[1] == 0.0

    def test_scene_json_roundtrip(self, tmp_path):
        scene = generate_scene(MODELS, 3, BOUNDS, seed=11)
        path = tmp_path / "scene.json"
        scene.save(path)
        back = SyntheticScene.load(path)
        assert back.seed == scene.seed
        for (ida, pa), (idb, pb) in zip(scene.placements, back.placements):
            assert ida == idb
            np.testing.assert_allclose(pa.params(), pb.params())


class TestHemisphereViews:
    def test_zenith_first(self):
        center = np.array([0.05, -0.02, 0.0])
        views = hemisphere_views(center, 0.5, 1, INTR)
        cam = views[0].camera_pose
        np.testing.assert_allclose(cam.t, center + [0, 0, 0.5], atol=1e-12)
        p_cam = cam.inverse().transform(center)
        assert p_cam[2] > 0

    def test_center_projects_to_principal_point(self):
        center = np.array([0.0, 0.1, 0.05])
        for view in hemisphere_views(center, 0.6, 16, INTR, seed=2):
            p_cam = view.camera_pose.inverse().transform(center)
            np.testing.assert_allclose(
                project(INTR, p_cam), [INTR.cx, INTR.cy], atol=0.5
            )

    def test_no_duplicate_directions(self):
        center = np.zeros(3)
        views = hemisphere_views(center, 0.5, 32, INTR)
        dirs = np.array([(v.camera_pose.t - center) / 0.5 for v in views])
        dots = dirs @ dirs.T
        np.fill_diagonal(dots, -1)
        assert dots.max() < 1 - 1e-6  # pairwise angular separation > 0

    def test_above_horizon(self):
        views = hemisphere_views([0, 0, 0], 0.4, 32, INTR)
        assert all(v.camera_pose.t[2] > 0 for v in views)


class TestRenderObservation:
    def test_zero_noise_matches_visible_template(self):
        scene = shifted_scene("box", t=(0.01, -0.01, 0), omega=(0.2, 0.1, 0.4))
        view = overhead_view()
        edgels, _ = render_observation(scene, view, MODELS, EDGES, NoiseParams(), 0)
        g = view.camera_pose.inverse() @ scene.placements[0][1]
        tpl = visible_template(MODELS["box"], EDGES["box"], g, INTR)
        xy_expected = []
        for p in g.transform(tpl.points):
            xy_expected.append(project(INTR, p))
        expected = {tuple(np.round(p, 9)) for p in xy_expected}
        got = {tuple(np.round(p, 9)) for p in edgels.positions}
        assert got == expected

    def test_full_occlusion_hides_back_object(self):
        scene = SyntheticScene(
            placements=(
                ("box", Pose(t=[0, 0, -0.1])),  # nearer the camera, larger cover
                ("cyl", Pose(t=[0, 0, 0.06])),
            ),
            bounds=np.asarray(BOUNDS),
            seed=0,
        )
        view = overhead_view(height=0.5)
        _, stats = render_scene_edgels(scene, view, MODELS, EDGES)
        by_id = {oid: (vis, tot) for oid, vis, tot in stats}
        assert by_id["box"][0] > 0
        assert by_id["cyl"][0] == 0

    def test_dropout_statistics(self):
        scene = shifted_scene("box")
        view = overhead_view()
        clean, _ = render_observation(scene, view, MODELS, EDGES, NoiseParams(), 0)
        n = len(clean)
        rates = []
        for seed in range(30):
            noisy, _ = render_observation(
                scene, view, MODELS, EDGES, NoiseParams(dropout_rate=0.5), seed
            )
            rates.append(len(noisy) / n)
        mean_rate = np.mean(rates)
        sigma = 0.5 / np.sqrt(n * 30)
        assert abs(mean_rate - 0.5) < 3 * sigma

    def test_clutter_adds_edgels(self):
        scene = shifted_scene("box")
        view = overhead_view()
        clean, _ = render_observation(scene, view, MODELS, EDGES, NoiseParams(), 0)
        noisy, _ = render_observation(
            scene, view, MODELS, EDGES, NoiseParams(clutter_count=10), 0
        )
        assert len(noisy) > len(clean)

    def test_direction_image_roundtrips_scoring_convention(self):
        scene = shifted_scene("box", omega=(0.3, 0.2, 0.1))
        view = overhead_view()
        edgels, grad = render_observation(scene, view, MODELS, EDGES, NoiseParams(), 0)
        theta = grad.sample_nearest(edgels.positions)
        diff = np.abs(np.mod(theta + np.pi / 2, np.pi) - edgels.orientations)
        diff = np.minimum(diff, np.pi - diff)
        # collisions where several edgels share one pixel leave a few mismatches
        assert np.quantile(diff, 0.9) < 1e-9

    def test_determinism(self):
        scene = shifted_scene("box")
        src = SimulatedObservationSource(
            scene, MODELS, EDGES, NoiseParams(dropout_rate=0.3, clutter_count=5), seed=7
        )
        view = overhead_view()
        a, _ = src.observe(view)
        b, _ = src.observe(view)
        np.testing.assert_array_equal(a.positions, b.positions)


class TestEvaluate:
    def test_exact_estimates(self):
        scene = generate_scene(MODELS, 3, BOUNDS, seed=2)
        estimates = [(oid, pose) for oid, pose in scene.placements]
        m = evaluate(estimates, scene)
        assert m.correct == 3 and m.false_positives == 0 and m.correct_rate == 1.0

    def test_six_mm_off_is_false_positive(self):
        scene = shifted_scene("box")
        oid, pose = scene.placements[0]
        off = Pose(t=pose.t + [0.006, 0, 0], omega=pose.omega)
        m = evaluate([(oid, off)], scene)
        assert m.correct == 0 and m.false_positives == 1

    def test_duplicate_estimates(self):
        scene = shifted_scene("box")
        oid, pose = scene.placements[0]
        m = evaluate([(oid, pose), (oid, pose)], scene)
        assert m.correct == 1 and m.false_positives == 1

    def test_wrong_type_never_matches(self):
        scene = shifted_scene("box")
        _, pose = scene.placements[0]
        m = evaluate([("cyl", pose)], scene)
        assert m.correct == 0 and m.false_positives == 1


class TestPerturbPose:
    def test_zero_magnitudes_identity(self):
        pose = Pose(t=[0.1, 0.2, 0.3], omega=[0.2, 0.1, 0.0])
        out = perturb_pose(pose, 0.0, 0.0, seed=5)
        np.testing.assert_allclose(out.params(), pose.params(), atol=1e-12)

    def test_exact_offsets(self):
        pose = Pose(t=[0.1, 0.2, 0.3], omega=[0.4, -0.2, 0.1])
        for seed in range(20):
            out = perturb_pose(pose, 0.01, 0.1, seed=seed)
            dt, dr = pose_error(pose, out)
            assert abs(dt - 0.01) < 1e-9
            assert abs(dr - 0.1) < 1e-9

    def test_isotropy(self):
        pose = Pose()
        offsets = np.array(
            [perturb_pose(pose, 1.0, 0.0, seed=s).t for s in range(1000)]
        )
        assert np.linalg.norm(offsets.mean(axis=0)) < 3.0 / np.sqrt(1000)

    def test_negative_magnitude_rejected(self):
        with pytest.raises(ConfigError):
            perturb_pose(Pose(), -1.0, 0.0, seed=0)
