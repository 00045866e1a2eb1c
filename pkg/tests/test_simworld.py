import math

import numpy as np
import pytest
from helpers import CAP_AXIS, explore_and_calibrate

from teleop.calibration import CalibrationDataset, calibrate
from teleop.errors import InfeasibleTrajectoryError, WorkspaceViolationError
from teleop.geometry import (
    Pose,
    Twist,
    geodesic_distance,
    project,
    random_rotation,
    rotx,
)
from teleop.simworld import (
    DEFAULT_INTRINSICS,
    Landmark,
    RobotState,
    Scene,
    VoConfig,
    Workspace,
    default_exploration_center,
    exploration_trajectory,
    make_button_scene,
    make_handle_scene,
    measure_final_error,
    pgm_to_pixels,
    render_image,
    simulate_vo,
    step_robot,
)

CENTER = np.array([0.66, 0.0, 0.45])


def small_scene():
    ws = Workspace([-1, -1, -1], [2, 1, 2])
    lms = [
        Landmark(1, CENTER),
        Landmark(2, CENTER + [0.0, 0.05, 0.0]),
        Landmark(3, CENTER + [0.0, 0.0, 0.05]),
        Landmark(4, CENTER + [0.0, -0.05, -0.03]),
    ]
    return Scene(landmarks=lms, targets={"goal": CENTER}, workspace=ws)


# --- exploration -------------------------------------------------------------


def test_exploration_positions_on_sphere():
    poses = exploration_trajectory(CENTER, 0.35, 20, math.radians(45), rng_seed=1, cap_axis=CAP_AXIS)
    assert len(poses) == 20
    for p in poses:  # identity mount: ee position == camera position
        assert np.linalg.norm(p.translation - CENTER) == pytest.approx(0.35, abs=1e-9)


def test_exploration_optical_axis_hits_center():
    mount = Pose(rotx(0.1), np.array([0.0, 0.03, 0.01]))
    poses = exploration_trajectory(
        CENTER, 0.3, 12, math.radians(40), rng_seed=2, ee_from_cam=mount, cap_axis=CAP_AXIS
    )
    for ee in poses:
        cam = ee.compose(mount)
        z_axis = cam.rotation[:, 2]
        to_center = CENTER - cam.translation
        # distance from the center to the optical-axis line
        off_axis = np.linalg.norm(np.cross(to_center, z_axis))
        assert off_axis < 1e-6
        assert np.dot(to_center, z_axis) > 0  # looking toward, not away


def test_exploration_deterministic():
    a = exploration_trajectory(CENTER, 0.35, 20, math.radians(45), rng_seed=3)
    b = exploration_trajectory(CENTER, 0.35, 20, math.radians(45), rng_seed=3)
    for p, q in zip(a, b):
        assert p.almost_equal(q, tol=0.0)


def test_exploration_workspace_violation():
    tight = Workspace([0.6, -0.1, 0.3], [0.7, 0.1, 0.6])
    with pytest.raises(InfeasibleTrajectoryError):
        exploration_trajectory(
            CENTER, 0.5, 10, math.radians(45), rng_seed=4, cap_axis=CAP_AXIS, workspace=tight
        )


def test_exploration_input_validation():
    with pytest.raises(ValueError):
        exploration_trajectory(CENTER, -0.1, 10, 0.5, 0)
    with pytest.raises(ValueError):
        exploration_trajectory(CENTER, 0.3, 2, 0.5, 0)


# --- simulated VO ------------------------------------------------------------


def _orbit(scene, n=10, seed=5):
    center = default_exploration_center(scene)
    ee = exploration_trajectory(
        center, 0.3, n, math.radians(40), rng_seed=seed, cap_axis=CAP_AXIS,
        workspace=scene.workspace,
    )
    return ee  # identity mount: these are also the camera poses


def test_simulate_vo_relative_pose_identity_scale():
    scene = small_scene()
    cams = _orbit(scene)
    cfg = VoConfig(scale_per_axis=np.ones(3), rng_seed=0)
    vo = simulate_vo(cams, scene, cfg)
    assert len(vo.cam_poses) == len(cams)
    inv0 = cams[0].inverse()
    for rel, cam in zip(vo.cam_poses, cams):
        assert rel.almost_equal(inv0.compose(cam), tol=1e-9)


def test_simulate_vo_scaling_of_map_points():
    scene = small_scene()
    cams = _orbit(scene)
    cfg = VoConfig(scale_per_axis=np.array([2.0, 2.0, 2.0]), rng_seed=0)
    vo = simulate_vo(cams, scene, cfg)
    assert vo.map_points, "expected visible landmarks"
    inv0 = cams[0].inverse()
    by_id = {mp.id: mp.xyz for mp in vo.map_points}
    for lm in scene.landmarks:
        if lm.id in by_id:
            np.testing.assert_allclose(by_id[lm.id], 2.0 * inv0.apply(lm.position), atol=1e-9)


def test_simulate_vo_behind_camera_excluded():
    scene_ws = Workspace([-2, -2, -2], [2, 2, 2])
    behind = Landmark(99, np.array([-1.5, 0.0, 0.45]))  # opposite side of every camera
    scene = Scene(
        landmarks=[Landmark(1, CENTER), behind],
        targets={"goal": CENTER},
        workspace=scene_ws,
    )
    cams = exploration_trajectory(CENTER, 0.3, 10, math.radians(30), rng_seed=6, cap_axis=CAP_AXIS)
    vo = simulate_vo(cams, scene, VoConfig(scale_per_axis=np.ones(3)))
    ids = {mp.id for mp in vo.map_points}
    assert 99 not in ids
    assert 1 in ids


def test_simulate_vo_deterministic():
    scene = small_scene()
    cams = _orbit(scene)
    cfg = VoConfig(pose_noise_sigma=(0.002, 0.002), point_noise_sigma=0.003, rng_seed=42)
    a = simulate_vo(cams, scene, cfg)
    b = simulate_vo(cams, scene, cfg)
    for p, q in zip(a.cam_poses, b.cam_poses):
        assert p.almost_equal(q, tol=0.0)
    assert a.map_points == b.map_points


def test_simulate_vo_keyframe_stride():
    scene = small_scene()
    cams = _orbit(scene, n=10)
    vo = simulate_vo(cams, scene, VoConfig(keyframe_stride=3))
    assert vo.keyframe_indices == [0, 3, 6, 9]


# --- rendering ---------------------------------------------------------------


def test_render_landmark_on_axis():
    k = DEFAULT_INTRINSICS
    scene = small_scene()
    # camera 1 m in front of landmark 1 looking straight at it (+x optical axis)
    cam = Pose(
        np.column_stack([[0, -1, 0], [0, 0, -1], [1, 0, 0]]),
        CENTER - np.array([1.0, 0.0, 0.0]),
    )
    img = render_image(scene, cam, k)
    ann = {lid: (u, v) for lid, u, v in img.feature_annotations}
    assert ann[1] == pytest.approx((k.cx, k.cy))
    assert img.pixels[int(k.cy), int(k.cx)] == 255


def test_render_empty_view():
    scene = small_scene()
    away = Pose(np.eye(3), np.array([0.0, 0.0, -0.5]))  # optical axis +z, scene at +x
    img = render_image(scene, away, DEFAULT_INTRINSICS)
    assert img.feature_annotations == []
    assert not img.pixels.any()


def test_render_annotations_match_projection():
    scene = make_button_scene()
    cams = _orbit(scene, n=4, seed=9)
    for cam in cams:
        img = render_image(scene, cam, DEFAULT_INTRINSICS)
        inv = cam.inverse()
        for lid, u, v in img.feature_annotations:
            p_cam = inv.apply(scene.landmark_by_id(lid).position)
            np.testing.assert_allclose(
                (u, v), project(DEFAULT_INTRINSICS, p_cam), atol=1e-12
            )
            assert 0 <= u < img.width and 0 <= v < img.height


def test_pgm_round_trip():
    scene = make_handle_scene()
    cams = _orbit(scene, n=4, seed=10)
    img = render_image(scene, cams[0], DEFAULT_INTRINSICS)
    np.testing.assert_array_equal(pgm_to_pixels(img.to_pgm()), img.pixels)


def test_render_deterministic():
    scene = make_handle_scene()
    cams = _orbit(scene, n=3, seed=11)
    a = render_image(scene, cams[1], DEFAULT_INTRINSICS)
    b = render_image(scene, cams[1], DEFAULT_INTRINSICS)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.feature_annotations == b.feature_annotations


# --- robot stepping ----------------------------------------------------------

LIMITS = (0.25, 1.0)


def test_step_zero_twist():
    rng = np.random.default_rng(11)
    state = RobotState(Pose(random_rotation(rng), np.array([0.3, 0.0, 0.5])), time=1.0)
    out = step_robot(state, Twist.zero(), Pose.identity(), 0.05, LIMITS)
    assert out.ee_pose.almost_equal(state.ee_pose)
    assert out.time == pytest.approx(1.05)


def test_step_pure_linear_camera_frame():
    state = RobotState(Pose(rotx(0.7), np.array([0.3, 0.0, 0.5])))
    cmd = Twist(np.array([0.1, 0.0, 0.0]), np.zeros(3))
    out = step_robot(state, cmd, Pose.identity(), 1.0, (1.0, 1.0))
    # identity mount: displacement is 0.1 m along the camera x axis in {b}
    expected = state.ee_pose.translation + state.ee_pose.rotation @ np.array([0.1, 0.0, 0.0])
    np.testing.assert_allclose(out.ee_pose.translation, expected, atol=1e-12)
    np.testing.assert_allclose(out.ee_pose.rotation, state.ee_pose.rotation, atol=1e-12)


def test_step_clamps_speed():
    state = RobotState(Pose(np.eye(3), np.zeros(3)))
    cmd = Twist(np.array([9.0, 0.0, 0.0]), np.zeros(3))
    out = step_robot(state, cmd, Pose.identity(), 1.0, (0.25, 1.0))
    assert np.linalg.norm(out.ee_pose.translation) == pytest.approx(0.25)


def test_step_reversible():
    rng = np.random.default_rng(12)
    mount = Pose(rotx(math.radians(5.0)), np.array([0.0, 0.04, 0.02]))
    for _ in range(20):
        state = RobotState(Pose(random_rotation(rng), rng.uniform(-0.3, 0.3, 3)))
        cmd = Twist(rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.8, 0.8, 3))
        dt = 1e-3
        fwd = step_robot(state, cmd, mount, dt, (1.0, 1.0))
        neg = Twist(-cmd.linear, -cmd.angular)
        back = step_robot(fwd, neg, mount, dt, (1.0, 1.0))
        np.testing.assert_allclose(
            back.ee_pose.translation, state.ee_pose.translation, atol=1e-9
        )
        assert geodesic_distance(back.ee_pose.rotation, state.ee_pose.rotation) < 1e-6


def test_step_workspace_violation():
    ws = Workspace([-0.1, -0.1, -0.1], [0.1, 0.1, 0.1])
    state = RobotState(Pose(np.eye(3), np.array([0.09, 0.0, 0.0])))
    cmd = Twist(np.array([0.0, 0.0, 1.0]), np.zeros(3))  # camera z == base z here
    with pytest.raises(WorkspaceViolationError):
        step_robot(state, cmd, Pose.identity(), 1.0, (1.0, 1.0), workspace=ws)
    with pytest.raises(ValueError):
        step_robot(state, cmd, Pose.identity(), 0.0, (1.0, 1.0))


# --- final error -------------------------------------------------------------


def test_measure_final_error_exact_hit():
    target = np.array([0.4, 0.1, 0.3])
    state = RobotState(Pose(np.eye(3), target))
    assert measure_final_error(state, target, np.zeros(3)) == (0.0, True)


def test_measure_final_error_threshold():
    target = np.array([0.4, 0.1, 0.3])
    near = RobotState(Pose(np.eye(3), target + [0.009, 0, 0]))
    far = RobotState(Pose(np.eye(3), target + [0.011, 0, 0]))
    err9, ok9 = measure_final_error(near, target, np.zeros(3))
    err11, ok11 = measure_final_error(far, target, np.zeros(3))
    assert err9 == pytest.approx(9.0) and ok9
    assert err11 == pytest.approx(11.0) and not ok11


def test_measure_final_error_with_tool_offset():
    target = np.array([0.4, 0.1, 0.3])
    offset = np.array([0.0, 0.0, 0.05])
    state = RobotState(Pose(np.eye(3), target - offset))
    err, ok = measure_final_error(state, target, offset)
    assert err == pytest.approx(0.0, abs=1e-12) and ok


# --- scenes ------------------------------------------------------------------


def test_scene_presets_structure():
    handle = make_handle_scene()
    button = make_button_scene()
    assert "handle_grasp" in handle.targets
    assert "button_center" in button.targets
    assert sum(lm.tag == "handle" for lm in handle.landmarks) == 8
    assert sum(lm.tag == "button" for lm in button.landmarks) == 5
    assert sum(lm.tag == "background" for lm in handle.landmarks) >= 40
    assert sum(lm.tag == "background" for lm in button.landmarks) >= 40
    # handle bar spans 6 cm
    ys = [lm.position[1] for lm in handle.landmarks if lm.tag == "handle"]
    assert max(ys) - min(ys) == pytest.approx(0.06)


def test_scene_json_round_trip():
    scene = make_button_scene()
    clone = Scene.from_json(scene.to_json())
    assert len(clone.landmarks) == len(scene.landmarks)
    for a, b in zip(scene.landmarks, clone.landmarks):
        assert a.id == b.id
        np.testing.assert_allclose(a.position, b.position)
    for name in scene.targets:
        np.testing.assert_allclose(scene.targets[name], clone.targets[name])


def test_scene_invariants():
    ws = Workspace([0, 0, 0], [1, 1, 1])
    inside = np.array([0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        Scene([Landmark(1, inside), Landmark(1, inside)], {}, ws)
    with pytest.raises(ValueError):
        Scene([Landmark(1, np.array([2.0, 0.5, 0.5]))], {}, ws)
    with pytest.raises(ValueError):
        Scene([Landmark(1, inside)], {"t": np.array([-1.0, 0, 0])}, ws)


# --- module-pair oracle ------------------------------------------------------


def test_exploration_vo_calibration_recovers_ground_truth():
    # zero noise, unit scale, rotation-only mount (t0 = 0 holds exactly)
    mount = Pose(rotx(math.radians(5.0)), np.zeros(3))
    world, calib, vo = explore_and_calibrate(
        scenario="press_button", mount=mount, scale=(1.0, 1.0, 1.0), seed=3
    )
    true_base_from_c0 = world.base_from_c0_true
    assert geodesic_distance(calib.base_from_c0.rotation, true_base_from_c0.rotation) < 1e-6
    np.testing.assert_allclose(
        calib.base_from_c0.translation, true_base_from_c0.translation, atol=1e-6
    )
    np.testing.assert_allclose(calib.scale.alpha, np.ones(3), atol=1e-6)
    assert geodesic_distance(calib.cam_from_ee_rotation, mount.rotation.T) < 1e-6


def test_vo_noise_propagates_to_residuals():
    _, calib, _ = explore_and_calibrate(
        scenario="press_button",
        mount=Pose(rotx(math.radians(5.0)), np.zeros(3)),
        vo_noise=(0.001, 0.001),
        n_poses=50,
        seed=4,
    )
    sigma_t = 0.001 * math.sqrt(3)
    assert sigma_t / 2 < calib.residual_stats.translation_rms_m < sigma_t * 2


def test_world_vo_pose_consistency():
    world, calib, _ = explore_and_calibrate(scenario="press_button", seed=5)
    rel = world.base_from_c0_true.inverse().compose(world.true_cam_pose())
    vo_pose = world.vo_cam_pose()
    np.testing.assert_allclose(
        vo_pose.translation, rel.translation * world.vo_cfg.scale_per_axis, atol=1e-12
    )
    np.testing.assert_allclose(vo_pose.rotation, rel.rotation, atol=1e-12)
    # oracle round trip
    p_vo = world.base_point_to_vo(np.array([0.5, 0.1, 0.4]))
    np.testing.assert_allclose(world.vo_point_to_base(p_vo), [0.5, 0.1, 0.4], atol=1e-12)
