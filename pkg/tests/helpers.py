"""Shared synthetic-data builders for the test suite."""
from __future__ import annotations

import math

import numpy as np

from teleop.calibration import (
    CalibrationDataset,
    HandEyeResult,
    ScaleMatrix,
    calibrate,
)
from teleop.geometry import Pose, random_rotation, rotvec_to_matrix
from teleop.simworld import (
    DEFAULT_EE_FROM_CAM,
    RobotState,
    TeleopWorld,
    VoConfig,
    default_exploration_center,
    exploration_trajectory,
    scenario_scene,
    simulate_vo,
)

CAP_AXIS = np.array([-1.0, 0.0, 0.0])  # scenes sit on a wall at +x


def random_pose(rng: np.random.Generator, t_scale: float = 1.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


def synth_ground_truth(rng: np.random.Generator) -> dict:
    """Random calibration ground truth with scales in [0.5, 3]."""
    return {
        "rot_bc0": random_rotation(rng),
        "scale": ScaleMatrix(rng.uniform(0.5, 3.0, 3)),
        "t_bc0": rng.uniform(-0.5, 0.5, 3),
        "x_ce": random_rotation(rng),  # cam_from_ee rotation
    }


def synth_dataset(
    rng: np.random.Generator,
    truth: dict,
    n: int = 30,
    spread: float = 0.3,
    trans_noise: float = 0.0,
    rot_noise: float = 0.0,
) -> CalibrationDataset:
    """Dataset satisfying the t0 = 0 translation model exactly, plus noise.

    Camera translations are drawn in a box of half-width `spread` (VO units);
    noise sigmas are per-axis (meters on the ee translations, radians on the
    ee rotation vector).
    """
    rot_bc0 = truth["rot_bc0"]
    alpha = truth["scale"].alpha
    t_bc0 = truth["t_bc0"]
    x_ce = truth["x_ce"]
    samples = []
    for _ in range(n):
        c0_r_ci = random_rotation(rng)
        c0_t_ci = rng.uniform(-spread, spread, 3)
        ee_t = rot_bc0 @ (alpha * c0_t_ci) + t_bc0
        ee_r = rot_bc0 @ c0_r_ci @ x_ce
        if trans_noise > 0:
            ee_t = ee_t + rng.normal(0.0, trans_noise, 3)
        if rot_noise > 0:
            ee_r = ee_r @ rotvec_to_matrix(rng.normal(0.0, rot_noise, 3))
        samples.append((Pose(c0_r_ci, c0_t_ci), Pose(ee_r, ee_t)))
    return CalibrationDataset(samples)


def explore_and_calibrate(
    scenario: str = "press_button",
    mount: Pose = DEFAULT_EE_FROM_CAM,
    scale=(2.0, 2.4, 2.8),
    vo_noise: tuple[float, float] = (0.0, 0.0),
    point_noise: float = 0.0,
    pixel_noise: float = 0.0,
    n_poses: int = 30,
    seed: int = 0,
):
    """Run the exploration/VO/calibration pipeline; return (world, calib, vo).

    The returned world starts at the last exploration pose with the VO
    anchored at the first keyframe, mirroring what the robot agent does.
    """
    scene = scenario_scene(scenario)
    center = default_exploration_center(scene)
    ee_poses = exploration_trajectory(
        center,
        radius=0.35,
        n_poses=n_poses,
        cone_half_angle=math.radians(45.0),
        rng_seed=seed,
        ee_from_cam=mount,
        cap_axis=CAP_AXIS,
        workspace=scene.workspace,
    )
    true_cam = [p.compose(mount) for p in ee_poses]
    cfg = VoConfig(
        scale_per_axis=np.array(scale),
        pose_noise_sigma=vo_noise,
        point_noise_sigma=point_noise,
        rng_seed=seed,
    )
    vo = simulate_vo(true_cam, scene, cfg)
    dataset = CalibrationDataset(
        [(vo.cam_poses[j], ee_poses[i]) for j, i in enumerate(vo.keyframe_indices)]
    )
    calib = calibrate(dataset)
    world = TeleopWorld(
        scene,
        RobotState(ee_poses[-1], 0.0),
        base_from_c0_true=true_cam[0],
        vo_cfg=cfg,
        ee_from_cam_true=mount,
        pixel_noise_sigma=pixel_noise,
        rng_seed=seed + 1,
    )
    return world, calib, vo


def perturb_calibration(
    calib: HandEyeResult, rot_deg: float = 2.0, scale_frac: float = 0.05, seed: int = 0
) -> HandEyeResult:
    from teleop.calibration import perturb_hand_eye

    return perturb_hand_eye(calib, rot_deg, scale_frac, seed)
