"""Coarse PBVS and fine IBVS servo loops.

The coarse controller drives the camera (as measured by VO) onto a desired
camera pose derived from the operator's target point and orientation
preset.  The fine controller minimizes pixel errors of tracked features
directly, which is what soaks up calibration error at the end of a task.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import HandEyeResult
from .errors import (
    CoarseTimeoutError,
    DegenerateFeatureError,
    FineTimeoutError,
    InvalidDepthError,
    TrackingLostError,
)
from .geometry import CameraIntrinsics, Pose, Twist, rotation_to_vec
from .simworld import TeleopWorld


@dataclass(frozen=True)
class CoarseTask:
    """Operator's coarse command: target point in {c0} plus ee orientation."""

    target_c0: np.ndarray  # VO units
    desired_ee_rotation: np.ndarray  # base frame
    standoff: float = 0.15  # meters, retraction along the desired optical axis

    def __post_init__(self):
        object.__setattr__(self, "target_c0", np.array(self.target_c0, dtype=float).reshape(3))
        object.__setattr__(
            self, "desired_ee_rotation", np.array(self.desired_ee_rotation, dtype=float)
        )
        if self.standoff < 0:
            raise ValueError("standoff must be non-negative")


@dataclass(frozen=True)
class PbvsError:
    """Pose error in the desired camera frame {c*}."""

    e_l: np.ndarray  # translation error
    e_w: np.ndarray  # rotation error matrix, maps {c} vectors into {c*}
    e_w_vec: np.ndarray  # angle*axis reduction of e_w

    @property
    def position_norm(self) -> float:
        return float(np.linalg.norm(self.e_l))

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.e_w_vec))


@dataclass(frozen=True)
class FineTask:
    """Feature/pixel pairs: (feature id, current (u, v), desired (u*, v*))."""

    pairs: list[tuple[int, tuple[float, float], tuple[float, float]]]
    depths: list[float]  # meters, camera frame, one per pair

    def __post_init__(self):
        if not 1 <= len(self.pairs) <= 8:
            raise ValueError(f"need 1..8 feature pairs, got {len(self.pairs)}")
        if len(self.depths) != len(self.pairs):
            raise ValueError("one depth per pair required")
        if any(d <= 0 for d in self.depths):
            raise InvalidDepthError(f"depths must be positive, got {self.depths}")

    @property
    def feature_ids(self) -> list[int]:
        return [fid for fid, _, _ in self.pairs]


@dataclass(frozen=True)
class GainConfig:
    kp: float = 0.8  # 1/s
    kd: float = 0.1
    ibvs_lambda: float = 0.5  # 1/s
    dt: float = 0.05  # control period, seconds
    coarse_pos_tol: float = 0.01  # m
    coarse_ang_tol: float = 0.03  # rad
    fine_pixel_tol: float = 0.5  # px RMS
    # convergence is tested on an exponentially smoothed pixel RMS so tracker
    # noise cannot keep the loop from ever crossing the threshold
    fine_filter_alpha: float = 0.25
    max_coarse_steps: int = 600
    max_fine_steps: int = 600

    def __post_init__(self):
        if min(self.kp, self.ibvs_lambda, self.dt) <= 0 or self.kd < 0:
            raise ValueError("gains must be positive (kd may be zero)")
        if min(self.coarse_pos_tol, self.coarse_ang_tol, self.fine_pixel_tol) <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 < self.fine_filter_alpha <= 1:
            raise ValueError("fine_filter_alpha must be in (0, 1]")
        if min(self.max_coarse_steps, self.max_fine_steps) < 1:
            raise ValueError("step budgets must be positive")


@dataclass
class CoarseReport:
    steps: int
    converged: bool
    final_error: PbvsError
    target_in_central_half: bool
    error_history: list[tuple[float, float]] = field(default_factory=list)
    sim_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "converged": self.converged,
            "final_position_error_m": self.final_error.position_norm,
            "final_angle_error_rad": self.final_error.angle,
            "target_in_central_half": self.target_in_central_half,
            "error_history": [[float(a), float(b)] for a, b in self.error_history],
            "sim_seconds": self.sim_seconds,
        }


@dataclass
class FineReport:
    steps: int
    converged: bool
    final_pixel_rms: float
    final_error_mm: float | None
    error_history: list[float] = field(default_factory=list)
    sim_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "converged": self.converged,
            "final_pixel_rms": self.final_pixel_rms,
            "final_error_mm": self.final_error_mm,
            "error_history": [float(e) for e in self.error_history],
            "sim_seconds": self.sim_seconds,
        }


def desired_camera_pose(task: CoarseTask, calib: HandEyeResult) -> Pose:
    """Desired camera pose in {c0} (VO units) for a coarse task.

    Rotation chains the calibrated frames; the translation is the target
    point retracted by the standoff along the desired optical axis, with
    the camera/ee offset t0 folded in (zero under the default assumption).
    """
    r_c0_cstar = (
        calib.base_from_c0.rotation.T
        @ task.desired_ee_rotation
        @ calib.cam_from_ee_rotation.T
    )
    optical_axis = r_c0_cstar @ np.array([0.0, 0.0, 1.0])
    t_estar = task.target_c0 - calib.scale.inverse_apply(task.standoff * optical_axis)
    t_cstar = t_estar - r_c0_cstar @ calib.t0
    return Pose(r_c0_cstar, t_cstar)


def pbvs_error(current_cam: Pose, desired_cam: Pose) -> PbvsError:
    """Pose error expressed in the desired camera frame."""
    e_w = desired_cam.rotation.T @ current_cam.rotation
    e_l = desired_cam.rotation.T @ (current_cam.translation - desired_cam.translation)
    return PbvsError(e_l=e_l, e_w=e_w, e_w_vec=rotation_to_vec(e_w))


def pbvs_step(
    err: PbvsError, prev_err: PbvsError | None, dt: float, gains: GainConfig
) -> Twist:
    """PD law on the pose error; prev_err None means a pure P step.

    The linear command is formed in {c*} and mapped into the current camera
    frame via e_w^T; the angular command acts on the angle*axis vector,
    which is the same in either frame.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lin_star = gains.kp * err.e_l
    ang = gains.kp * err.e_w_vec
    if prev_err is not None:
        lin_star = lin_star + gains.kd * (err.e_l - prev_err.e_l) / dt
        ang = ang + gains.kd * (err.e_w_vec - prev_err.e_w_vec) / dt
    return Twist(-(err.e_w.T @ lin_star), -ang, "camera")


def interaction_matrix(x: float, y: float, depth: float) -> np.ndarray:
    """2x6 point-feature interaction matrix at normalized coords (x, y)."""
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    z = depth
    return np.array(
        [
            [-1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y],
            [0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x],
        ]
    )


def ibvs_step(task: FineTask, k: CameraIntrinsics, gains: GainConfig) -> Twist:
    """Classic IBVS: twist = -lambda * pinv(L) * (s - s*) in normalized coords.

    A single feature constrains only 2 DOF, so that case is restricted to
    the translational columns and commands no rotation.
    """
    rows = []
    errs = []
    for (fid, (u, v), (us, vs)), depth in zip(task.pairs, task.depths):
        for uu, vv in ((u, v), (us, vs)):
            if not (0 <= uu < k.width and 0 <= vv < k.height):
                raise ValueError(f"feature {fid} pixel ({uu}, {vv}) outside image")
        x, y = (u - k.cx) / k.fx, (v - k.cy) / k.fy
        xs, ys = (us - k.cx) / k.fx, (vs - k.cy) / k.fy
        errs.extend([x - xs, y - ys])
        rows.append(interaction_matrix(x, y, depth))
    stacked = np.vstack(rows)
    err = np.array(errs)

    if len(task.pairs) == 1:
        stacked = stacked[:, :3]
    svals = np.linalg.svd(stacked, compute_uv=False)
    needed = min(stacked.shape)
    if svals[needed - 1] <= 1e-10 * max(svals[0], 1e-30):
        raise DegenerateFeatureError("interaction matrix is rank deficient")

    vel = -gains.ibvs_lambda * (np.linalg.pinv(stacked) @ err)
    if len(task.pairs) == 1:
        return Twist(vel, np.zeros(3), "camera")
    return Twist(vel[:3], vel[3:], "camera")


def _central_half(k: CameraIntrinsics, uv: tuple[float, float] | None) -> bool:
    if uv is None:
        return False
    u, v = uv
    return k.width / 4 <= u <= 3 * k.width / 4 and k.height / 4 <= v <= 3 * k.height / 4


def run_coarse_phase(
    world: TeleopWorld,
    task: CoarseTask,
    calib: HandEyeResult,
    gains: GainConfig,
) -> CoarseReport:
    """PBVS loop: read VO pose, form the pose error, command a twist.

    VO translations are converted to meters through the calibrated scale so
    gains and thresholds are metric.  Raises CoarseTimeoutError when the
    step budget runs out.
    """
    desired_vo = desired_camera_pose(task, calib)
    desired = Pose(desired_vo.rotation, calib.scale.apply(desired_vo.translation))
    mount_cmd = calib.ee_from_cam()
    prev: PbvsError | None = None
    history: list[tuple[float, float]] = []
    err = None
    for step in range(gains.max_coarse_steps + 1):
        cur_vo = world.vo_cam_pose()
        cur = Pose(cur_vo.rotation, calib.scale.apply(cur_vo.translation))
        err = pbvs_error(cur, desired)
        history.append((err.position_norm, err.angle))
        if err.position_norm < gains.coarse_pos_tol and err.angle < gains.coarse_ang_tol:
            target_b = world.vo_point_to_base(task.target_c0)
            return CoarseReport(
                steps=step,
                converged=True,
                final_error=err,
                target_in_central_half=_central_half(
                    world.intrinsics, world.target_pixel(target_b)
                ),
                error_history=history,
                sim_seconds=step * gains.dt,
            )
        if step == gains.max_coarse_steps:
            break
        twist = pbvs_step(err, prev, gains.dt, gains)
        world.apply_camera_twist(twist, mount_cmd, gains.dt)
        prev = err
    raise CoarseTimeoutError(
        f"no convergence in {gains.max_coarse_steps} steps "
        f"(|e_l|={err.position_norm:.4f} m, angle={err.angle:.4f} rad)"
    )


def run_fine_phase(
    world: TeleopWorld,
    task: FineTask,
    k: CameraIntrinsics,
    gains: GainConfig,
    ee_from_cam_cmd: Pose = Pose.identity(),
    constant_depth: bool = False,
    measure_target: str | None = None,
    tool_offset: np.ndarray | None = None,
) -> FineReport:
    """IBVS loop: re-read tracked pixels each step and servo them to s*.

    Depths come from the simulator's ground truth unless constant_depth
    keeps the initial estimates.  Raises TrackingLostError when a feature
    leaves the view and FineTimeoutError on step-budget exhaustion.
    """
    ids = task.feature_ids
    desired = {fid: d for fid, _, d in task.pairs}
    init_depth = dict(zip(ids, task.depths))
    history: list[float] = []
    rms = math.inf
    smoothed: dict[int, np.ndarray] = {}
    for step in range(gains.max_fine_steps + 1):
        tracked = world.tracked_pixels(ids)
        missing = [fid for fid in ids if fid not in tracked]
        if missing:
            raise TrackingLostError(f"features {missing} left the camera view")
        a = gains.fine_filter_alpha
        for fid in ids:
            delta = np.array(
                [tracked[fid][0] - desired[fid][0], tracked[fid][1] - desired[fid][1]]
            )
            # the filter averages the error vectors, so zero-mean tracker
            # noise cancels instead of inflating the norm
            smoothed[fid] = delta if fid not in smoothed else (1 - a) * smoothed[fid] + a * delta
        rms = math.sqrt(
            sum(
                (tracked[fid][0] - desired[fid][0]) ** 2
                + (tracked[fid][1] - desired[fid][1]) ** 2
                for fid in ids
            )
            / len(ids)
        )
        history.append(rms)
        smoothed_rms = math.sqrt(
            sum(float(v @ v) for v in smoothed.values()) / len(ids)
        )
        if smoothed_rms < gains.fine_pixel_tol:
            final_mm = None
            if measure_target is not None:
                offs = tool_offset if tool_offset is not None else np.zeros(3)
                final_mm = world.final_error(measure_target, offs)[0]
            return FineReport(
                steps=step,
                converged=True,
                final_pixel_rms=rms,
                final_error_mm=final_mm,
                error_history=history,
                sim_seconds=step * gains.dt,
            )
        if step == gains.max_fine_steps:
            break
        depths = [
            init_depth[fid] if constant_depth else world.feature_depth(fid) for fid in ids
        ]
        now = FineTask(
            pairs=[(fid, tracked[fid], desired[fid]) for fid in ids], depths=depths
        )
        twist = ibvs_step(now, k, gains)
        world.apply_camera_twist(twist, ee_from_cam_cmd, gains.dt)
    raise FineTimeoutError(
        f"no convergence in {gains.max_fine_steps} steps (pixel RMS {rms:.2f})"
    )
