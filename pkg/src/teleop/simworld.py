"""Simulated remote workcell.

A scene of point landmarks, a free-flying eye-in-hand camera (no joint
model), a sphere-cap exploration routine, a visual-odometry stand-in that
re-expresses camera poses in the first keyframe's frame with an unknown
per-axis scale and configurable noise, a synthetic feature-marker renderer,
and final-error measurement against task targets.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .calibration import ScaleMatrix
from .errors import InfeasibleTrajectoryError, WorkspaceViolationError
from .geometry import (
    CameraIntrinsics,
    Pose,
    Twist,
    pixel_in_image,
    project,
    rotvec_to_matrix,
    rotx,
)

MARKER_HALF = 2  # rendered landmark squares are 5x5 pixels

DEFAULT_INTRINSICS = CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=32.0, width=64, height=64)

# true camera mount: pose of the camera in the end-effector frame.  The
# translation deliberately breaks the t0 = 0 calibration assumption a little,
# so fine servoing has a real error to compensate.
DEFAULT_EE_FROM_CAM = Pose(rotx(math.radians(5.0)), np.array([0.0, 0.04, 0.02]))

DEFAULT_TOOL_OFFSET = np.array([0.0, 0.0, 0.10])  # fingertip along the ee z axis


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned box the end effector must stay inside (meters)."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.array(self.min, dtype=float).reshape(3))
        object.__setattr__(self, "max", np.array(self.max, dtype=float).reshape(3))
        if np.any(self.min >= self.max):
            raise ValueError("workspace min must be strictly below max")

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))


class Landmark(NamedTuple):
    id: int
    position: np.ndarray  # (3,) meters in {b}
    tag: str = ""


class MapPoint(NamedTuple):
    """Sparse VO map point in {c0}, VO units."""

    id: int
    x: float
    y: float
    z: float

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class Scene:
    landmarks: list[Landmark]
    targets: dict[str, np.ndarray]
    workspace: Workspace

    def __post_init__(self):
        ids = [lm.id for lm in self.landmarks]
        if len(ids) != len(set(ids)):
            raise ValueError("landmark ids must be unique")
        for lm in self.landmarks:
            if not self.workspace.contains(lm.position):
                raise ValueError(f"landmark {lm.id} outside workspace")
        for name, p in self.targets.items():
            if not self.workspace.contains(p):
                raise ValueError(f"target {name!r} outside workspace")

    def landmark_by_id(self, lid: int) -> Landmark:
        for lm in self.landmarks:
            if lm.id == lid:
                return lm
        raise KeyError(lid)

    def to_json(self) -> str:
        return json.dumps(
            {
                "landmarks": [
                    {"id": lm.id, "xyz": [float(v) for v in lm.position]}
                    for lm in self.landmarks
                ],
                "targets": {k: [float(v) for v in p] for k, p in self.targets.items()},
                "workspace": {
                    "min": [float(v) for v in self.workspace.min],
                    "max": [float(v) for v in self.workspace.max],
                },
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "Scene":
        raw = json.loads(text)
        return Scene(
            landmarks=[
                Landmark(int(lm["id"]), np.array(lm["xyz"], dtype=float))
                for lm in raw["landmarks"]
            ],
            targets={k: np.array(v, dtype=float) for k, v in raw["targets"].items()},
            workspace=Workspace(raw["workspace"]["min"], raw["workspace"]["max"]),
        )


@dataclass(frozen=True)
class RobotState:
    ee_pose: Pose  # base_from_ee, meters
    time: float = 0.0


@dataclass(frozen=True)
class VoConfig:
    """Parameters of the simulated visual-odometry source.

    scale_per_axis is VO units per meter; the ground truth for scale
    recovery is its per-axis reciprocal.  pose_noise_sigma is
    (meters-equivalent, radians) applied per keyframe; point noise is in
    VO units.
    """

    scale_per_axis: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.4, 2.8]))
    pose_noise_sigma: tuple[float, float] = (0.0, 0.0)
    point_noise_sigma: float = 0.0
    keyframe_stride: int = 1
    rng_seed: int = 0
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS

    def __post_init__(self):
        object.__setattr__(
            self, "scale_per_axis", np.array(self.scale_per_axis, dtype=float).reshape(3)
        )
        if np.any(self.scale_per_axis <= 0):
            raise ValueError("scale_per_axis must be positive")
        if self.pose_noise_sigma[0] < 0 or self.pose_noise_sigma[1] < 0 or self.point_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.keyframe_stride < 1:
            raise ValueError("keyframe_stride must be >= 1")

    def true_scale_matrix(self) -> ScaleMatrix:
        """Ground-truth meters-per-VO-unit diagonal."""
        return ScaleMatrix(1.0 / self.scale_per_axis)


@dataclass(frozen=True)
class SyntheticImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8
    feature_annotations: list[tuple[int, float, float]]  # (landmark id, u, v)

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.astype(np.uint8).tobytes()


def pgm_to_pixels(data: bytes) -> np.ndarray:
    """Parse a binary P5 PGM (as produced by SyntheticImage.to_pgm)."""
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise ValueError("truncated PGM header")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    raw = parts[3][: w * h]
    if len(raw) != w * h:
        raise ValueError("truncated PGM body")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)


class VoResult(NamedTuple):
    cam_poses: list[Pose]  # c0_from_ci per keyframe, VO units
    map_points: list[MapPoint]
    triangulated_at: dict[int, int]  # landmark id -> keyframe index of 2nd sighting
    keyframe_indices: list[int]  # indices into the input trajectory


def exploration_trajectory(
    center: np.ndarray,
    radius: float,
    n_poses: int,
    cone_half_angle: float,
    rng_seed: int,
    ee_from_cam: Pose = Pose.identity(),
    cap_axis: np.ndarray = np.array([0.0, 0.0, 1.0]),
    workspace: Workspace | None = None,
) -> list[Pose]:
    """End-effector poses whose camera orbits a sphere cap looking at center.

    Directions are a low-discrepancy golden-angle spiral over the cap
    (axis cap_axis, half-angle cone_half_angle) with seeded jitter; every
    camera sits exactly radius from center with its optical axis through
    center.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_poses < 3:
        raise ValueError("need at least 3 poses")
    center = np.asarray(center, dtype=float)
    w = np.asarray(cap_axis, dtype=float)
    w = w / np.linalg.norm(w)
    ref = np.array([0.0, 0.0, 1.0]) if abs(w[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, w)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)

    rng = np.random.default_rng(rng_seed)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    poses = []
    for i in range(n_poses):
        frac = (i + 0.5) / n_poses
        cos_t = 1.0 - frac * (1.0 - math.cos(cone_half_angle))
        theta = math.acos(min(1.0, max(-1.0, cos_t)))
        theta = min(max(theta + 0.03 * cone_half_angle * rng.standard_normal(), 0.0), cone_half_angle)
        phi = i * golden + 0.05 * rng.standard_normal()
        direction = (
            math.cos(theta) * w
            + math.sin(theta) * (math.cos(phi) * u + math.sin(phi) * v)
        )
        pos = center + radius * direction
        z_cam = -direction
        up = np.array([0.0, 0.0, 1.0])
        if abs(np.dot(z_cam, up)) > 0.99:
            up = np.array([1.0, 0.0, 0.0])
        x_cam = np.cross(up, z_cam)
        x_cam /= np.linalg.norm(x_cam)
        y_cam = np.cross(z_cam, x_cam)
        cam_pose = Pose(np.column_stack([x_cam, y_cam, z_cam]), pos)
        poses.append(cam_pose.compose(ee_from_cam.inverse()))

    if workspace is not None:
        bad = [i for i, p in enumerate(poses) if not workspace.contains(p.translation)]
        if bad:
            raise InfeasibleTrajectoryError(
                f"{len(bad)} of {n_poses} exploration poses leave the workspace"
            )
    return poses


def _visible(scene_point: np.ndarray, cam_pose: Pose, k: CameraIntrinsics) -> tuple[float, float] | None:
    p_cam = cam_pose.inverse().apply(scene_point)
    if p_cam[2] <= 1e-9:
        return None
    uv = project(k, p_cam)
    if not pixel_in_image(k, *uv):
        return None
    return uv


def simulate_vo(
    true_cam_poses: list[Pose], scene: Scene, cfg: VoConfig
) -> VoResult:
    """Visual-odometry stand-in.

    Keyframe camera poses are re-expressed relative to the first pose,
    translations scaled per-axis into VO units, then perturbed.  Map points
    are the landmarks seen by at least two keyframes, expressed in {c0}
    with the same scaling plus point noise.  Deterministic under a fixed
    seed.
    """
    if not true_cam_poses:
        raise ValueError("need at least one camera pose")
    rng = np.random.default_rng(cfg.rng_seed)
    kf_indices = list(range(0, len(true_cam_poses), cfg.keyframe_stride))
    if kf_indices[0] != 0:
        kf_indices.insert(0, 0)
    c0 = true_cam_poses[0]
    c0_inv = c0.inverse()
    s = cfg.scale_per_axis
    sig_t, sig_r = cfg.pose_noise_sigma

    cam_poses: list[Pose] = []
    for j, idx in enumerate(kf_indices):
        rel = c0_inv.compose(true_cam_poses[idx])
        t = rel.translation * s
        r = rel.rotation
        if j > 0:  # the anchor keyframe is the reference and stays exact
            if sig_t > 0:
                t = t + rng.normal(0.0, sig_t, 3) * s
            if sig_r > 0:
                r = r @ rotvec_to_matrix(rng.normal(0.0, sig_r, 3))
        cam_poses.append(Pose(r, t))

    map_points: list[MapPoint] = []
    triangulated_at: dict[int, int] = {}
    for lm in scene.landmarks:
        seen = 0
        for j, idx in enumerate(kf_indices):
            if _visible(lm.position, true_cam_poses[idx], cfg.intrinsics) is not None:
                seen += 1
                if seen == 2:
                    triangulated_at[lm.id] = j
                    break
        if seen < 2:
            continue
        p_c0 = c0_inv.apply(lm.position) * s
        if cfg.point_noise_sigma > 0:
            p_c0 = p_c0 + rng.normal(0.0, cfg.point_noise_sigma, 3)
        map_points.append(MapPoint(lm.id, float(p_c0[0]), float(p_c0[1]), float(p_c0[2])))

    return VoResult(cam_poses, map_points, triangulated_at, kf_indices)


def render_image(scene: Scene, cam_pose: Pose, k: CameraIntrinsics) -> SyntheticImage:
    """Grayscale raster with a 5x5 bright square per visible landmark.

    Annotations carry the exact sub-pixel projections; the raster rounds
    to the nearest pixel.
    """
    pixels = np.zeros((k.height, k.width), dtype=np.uint8)
    annotations: list[tuple[int, float, float]] = []
    for lm in scene.landmarks:
        uv = _visible(lm.position, cam_pose, k)
        if uv is None:
            continue
        u, v = uv
        annotations.append((lm.id, float(u), float(v)))
        cu, cv = int(round(u)), int(round(v))
        u0, u1 = max(0, cu - MARKER_HALF), min(k.width, cu + MARKER_HALF + 1)
        v0, v1 = max(0, cv - MARKER_HALF), min(k.height, cv + MARKER_HALF + 1)
        pixels[v0:v1, u0:u1] = 255
    return SyntheticImage(k.width, k.height, pixels, annotations)


def step_robot(
    state: RobotState,
    cmd: Twist,
    ee_from_cam: Pose,
    dt: float,
    limits: tuple[float, float],
    workspace: Workspace | None = None,
) -> RobotState:
    """Integrate a camera-frame twist for dt seconds.

    The twist is clamped to (v_max, w_max), mapped through the mount
    transform, and integrated with a midpoint rule (translation advances
    along the half-rotated direction), which makes a step exactly
    reversible by the negated twist.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd = cmd.clamped(*limits)
    cam = state.ee_pose.compose(ee_from_cam)
    w = cmd.angular * dt
    step_rot = rotvec_to_matrix(w)
    half_rot = rotvec_to_matrix(w / 2.0)
    new_cam = Pose(
        cam.rotation @ step_rot,
        cam.translation + cam.rotation @ (half_rot @ (cmd.linear * dt)),
    )
    new_ee = new_cam.compose(ee_from_cam.inverse())
    if workspace is not None and not workspace.contains(new_ee.translation):
        raise WorkspaceViolationError(
            f"end effector would leave workspace at {new_ee.translation}"
        )
    return RobotState(new_ee, state.time + dt)


def measure_final_error(
    state: RobotState, target: np.ndarray, tool_offset: np.ndarray
) -> tuple[float, bool]:
    """Distance (mm) from the fingertip to the target; success under 10 mm."""
    tip = state.ee_pose.apply(np.asarray(tool_offset, dtype=float))
    error_mm = 1000.0 * float(np.linalg.norm(tip - np.asarray(target, dtype=float)))
    return error_mm, error_mm <= 10.0


class TeleopWorld:
    """Mutable world handle driven by the servo loops.

    Owns the robot state and the ground truth (mount, VO anchor and scale);
    exposes the measurements a robot-side controller is allowed to see
    (noisy VO pose, rendered image, tracked pixels, true feature depths)
    plus oracle helpers for tests and the scripted operator.
    """

    def __init__(
        self,
        scene: Scene,
        state: RobotState,
        base_from_c0_true: Pose,
        vo_cfg: VoConfig,
        ee_from_cam_true: Pose = DEFAULT_EE_FROM_CAM,
        limits: tuple[float, float] = (0.25, 1.0),
        pixel_noise_sigma: float = 0.0,
        rng_seed: int = 0,
    ):
        self.scene = scene
        self.state = state
        self.base_from_c0_true = base_from_c0_true
        self.vo_cfg = vo_cfg
        self.ee_from_cam_true = ee_from_cam_true
        self.intrinsics = vo_cfg.intrinsics
        self.limits = limits
        self.pixel_noise_sigma = pixel_noise_sigma
        self._rng = np.random.default_rng(rng_seed)

    # --- measurements available to the robot-side controller ---

    def true_cam_pose(self) -> Pose:
        return self.state.ee_pose.compose(self.ee_from_cam_true)

    def vo_cam_pose(self) -> Pose:
        """Current camera pose as VO reports it: c0_from_cam, VO units, noisy."""
        rel = self.base_from_c0_true.inverse().compose(self.true_cam_pose())
        s = self.vo_cfg.scale_per_axis
        t = rel.translation * s
        r = rel.rotation
        sig_t, sig_r = self.vo_cfg.pose_noise_sigma
        if sig_t > 0:
            t = t + self._rng.normal(0.0, sig_t, 3) * s
        if sig_r > 0:
            r = r @ rotvec_to_matrix(self._rng.normal(0.0, sig_r, 3))
        return Pose(r, t)

    def render(self) -> SyntheticImage:
        return render_image(self.scene, self.true_cam_pose(), self.intrinsics)

    def tracked_pixels(self, ids: list[int]) -> dict[int, tuple[float, float]]:
        """Current pixel of each requested feature, with tracker noise; absent if out of view."""
        image = self.render()
        sigma = self.pixel_noise_sigma
        out: dict[int, tuple[float, float]] = {}
        for lid, u, v in image.feature_annotations:
            if lid in ids:
                if sigma > 0:
                    u += float(self._rng.normal(0.0, sigma))
                    v += float(self._rng.normal(0.0, sigma))
                out[lid] = (u, v)
        return out

    def feature_depth(self, lid: int) -> float:
        p_cam = self.true_cam_pose().inverse().apply(self.scene.landmark_by_id(lid).position)
        return float(p_cam[2])

    def apply_camera_twist(self, twist: Twist, ee_from_cam_cmd: Pose, dt: float) -> None:
        """Advance the robot, converting the camera twist via the commanded
        (usually estimated) mount while the true mount stays implicit."""
        self.state = step_robot(
            self.state, twist, ee_from_cam_cmd, dt, self.limits, self.scene.workspace
        )

    # --- oracle helpers (ground truth; tests and operator harness only) ---

    def vo_point_to_base(self, p_vo: np.ndarray) -> np.ndarray:
        return self.base_from_c0_true.apply(np.asarray(p_vo) / self.vo_cfg.scale_per_axis)

    def base_point_to_vo(self, p_b: np.ndarray) -> np.ndarray:
        return self.base_from_c0_true.inverse().apply(np.asarray(p_b)) * self.vo_cfg.scale_per_axis

    def target_pixel(self, p_b: np.ndarray) -> tuple[float, float] | None:
        return _visible(np.asarray(p_b, dtype=float), self.true_cam_pose(), self.intrinsics)

    def final_error(self, target_name: str, tool_offset: np.ndarray) -> tuple[float, bool]:
        return measure_final_error(self.state, self.scene.targets[target_name], tool_offset)

    def plan_goal_view_pairs(
        self,
        target_name: str,
        desired_ee_rotation: np.ndarray,
        tool_offset: np.ndarray,
        max_pairs: int = 4,
    ) -> list[tuple[int, tuple[float, float], tuple[float, float]]]:
        """Teach-by-showing pairs: (id, current pixel, pixel in the goal view).

        The goal view is the camera pose at which the fingertip touches the
        target with the desired orientation.  Candidate features must be
        visible in both the current and the goal view; the closest ones to
        the target win.  This plays the role of the operator's eyes, so it
        reads ground truth.
        """
        target = self.scene.targets[target_name]
        tool = np.asarray(tool_offset, dtype=float)
        goal_ee = Pose(desired_ee_rotation, target - desired_ee_rotation @ tool)
        goal_cam = goal_ee.compose(self.ee_from_cam_true)
        current = {lid: (u, v) for lid, u, v in self.render().feature_annotations}
        candidates = []
        for lm in self.scene.landmarks:
            if lm.id not in current:
                continue
            uv_goal = _visible(lm.position, goal_cam, self.intrinsics)
            if uv_goal is None:
                continue
            dist = float(np.linalg.norm(lm.position - target))
            candidates.append((dist, lm.id, current[lm.id], uv_goal))
        candidates.sort(key=lambda c: (c[0], c[1]))
        return [(lid, cur, goal) for _, lid, cur, goal in candidates[:max_pairs]]


# --- scenario presets --------------------------------------------------------

_WORKSPACE = Workspace(np.array([-1.0, -1.0, -0.2]), np.array([1.2, 1.0, 1.5]))


def _background(rng: np.random.Generator, start_id: int, n: int) -> list[Landmark]:
    lms = []
    for i in range(n):
        p = np.array(
            [
                rng.uniform(0.70, 0.74),
                rng.uniform(-0.35, 0.35),
                rng.uniform(0.15, 0.80),
            ]
        )
        lms.append(Landmark(start_id + i, p, "background"))
    return lms


def make_handle_scene(seed: int = 7) -> Scene:
    """A 6 cm handle bar on a wall plus scattered background texture."""
    rng = np.random.default_rng(seed)
    grasp = np.array([0.66, 0.0, 0.45])
    bar = [
        Landmark(i + 1, grasp + np.array([0.0, y, 0.004 * ((-1) ** i)]), "handle")
        for i, y in enumerate(np.linspace(-0.03, 0.03, 8))
    ]
    return Scene(
        landmarks=bar + _background(rng, 100, 44),
        targets={"handle_grasp": grasp},
        workspace=_WORKSPACE,
    )


def make_button_scene(seed: int = 8) -> Scene:
    """A 2 cm button disc on a wall plus scattered background texture."""
    rng = np.random.default_rng(seed)
    center = np.array([0.66, 0.05, 0.42])
    disc = [Landmark(1, center, "button")]
    for i, ang in enumerate(np.linspace(0.0, 2 * math.pi, 4, endpoint=False)):
        offset = np.array([0.0, 0.01 * math.cos(ang), 0.01 * math.sin(ang)])
        disc.append(Landmark(i + 2, center + offset, "button"))
    return Scene(
        landmarks=disc + _background(rng, 100, 44),
        targets={"button_center": center},
        workspace=_WORKSPACE,
    )


SCENE_BUILDERS = {
    "hold_handler": make_handle_scene,
    "press_button": make_button_scene,
}

SCENE_TARGETS = {
    "hold_handler": "handle_grasp",
    "press_button": "button_center",
}


def scenario_scene(name: str, seed: int = 0) -> Scene:
    try:
        builder = SCENE_BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choices: {sorted(SCENE_BUILDERS)}")
    return builder(seed) if seed else builder()


def default_exploration_center(scene: Scene) -> np.ndarray:
    """Centroid of the scene's task targets; what the self-exploration orbits."""
    return np.mean(list(scene.targets.values()), axis=0)
