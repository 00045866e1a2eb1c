"""Hand-eye and scale calibration from the self-exploration dataset.

Recovers, from paired (camera pose in {c0}, end-effector pose in {b})
samples:

* the rigid transform base_from_c0 together with the diagonal per-axis
  scale converting VO units to meters (a relaxed orthogonal Procrustes
  problem solved by tandem alternation), and
* the fixed camera/end-effector rotation (a regular orthogonal Procrustes
  problem, closed form via SVD).

The camera/end-effector translation offset t0 is assumed zero by default;
an optional linear refinement is available behind a flag.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatasetParseError,
    DegenerateAxisError,
    DegenerateDataError,
    InsufficientDataError,
    SignDegenerateScaleError,
)
from .geometry import Pose, geodesic_distance, matrix_to_quat, quat_to_matrix

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100


@dataclass(frozen=True)
class ScaleMatrix:
    """Diagonal per-axis scale (meters per VO unit)."""

    alpha: np.ndarray  # (3,) positive

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.array(self.alpha, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha <= 0):
            raise ValueError(f"scale entries must be positive and finite, got {self.alpha}")

    @staticmethod
    def identity() -> "ScaleMatrix":
        return ScaleMatrix(np.ones(3))

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.alpha)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Elementwise scaling of one vector (3,) or many (N, 3)."""
        return np.asarray(v, dtype=float) * self.alpha

    def inverse_apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) / self.alpha


@dataclass(frozen=True)
class CalibrationDataset:
    """Paired samples (camera pose in {c0}, end-effector pose in {b})."""

    samples: list[tuple[Pose, Pose]]

    @property
    def n(self) -> int:
        return len(self.samples)

    def cam_translations(self) -> np.ndarray:
        return np.array([c.translation for c, _ in self.samples])

    def ee_translations(self) -> np.ndarray:
        return np.array([e.translation for _, e in self.samples])

    def cam_rotations(self) -> list[np.ndarray]:
        return [c.rotation for c, _ in self.samples]

    def ee_rotations(self) -> list[np.ndarray]:
        return [e.rotation for _, e in self.samples]


@dataclass(frozen=True)
class ResidualStats:
    """RMS residuals of the two calibration objectives."""

    translation_rms_m: float  # position model residual, meters
    rotation_rms_rad: float  # geodesic angle between measured and modeled ee rotation


@dataclass(frozen=True)
class HandEyeResult:
    """Calibration outputs: base_from_c0, camera/ee rotation, t0, scale."""

    base_from_c0: Pose
    cam_from_ee_rotation: np.ndarray  # maps ee-frame vectors into the camera frame
    t0: np.ndarray  # camera-frame offset of the ee origin, VO units (0 by assumption)
    scale: ScaleMatrix
    residual_stats: ResidualStats

    def ee_from_cam(self) -> Pose:
        """Pose of the camera in the end-effector frame.

        Exact under the t0 = 0 assumption; with a refined t0 the translation
        keeps VO units (callers converting to meters must apply the scale).
        """
        r_ec = self.cam_from_ee_rotation.T
        return Pose(r_ec, -r_ec @ self.t0)

    def cam_from_ee(self) -> Pose:
        return Pose(self.cam_from_ee_rotation, self.t0)


@dataclass(frozen=True)
class RelaxedProcrustesResult:
    rotation: np.ndarray
    scale: ScaleMatrix
    iterations: int
    cost_history: list[float] = field(default_factory=list)


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation maximizing tr(R^T M), determinant forced to +1."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def solve_orthogonal_procrustes(pairs: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Rotation minimizing sum ||target_i - R source_i||^2.

    Inputs are taken as-is (center them first for a free translation).
    Raises DegenerateDataError when the points are collinear, which leaves
    the rotation about that line unconstrained.
    """
    src = np.array([p[0] for p in pairs], dtype=float)
    dst = np.array([p[1] for p in pairs], dtype=float)
    if len(pairs) < 3:
        raise InsufficientDataError(f"need at least 3 pairs, got {len(pairs)}")
    # cross-covariance: maximize tr(R^T C) with C = sum target source^T
    c = dst.T @ src
    s = np.linalg.svd(c, compute_uv=False)
    if s[0] <= 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateDataError("point pairs are collinear or degenerate")
    return project_to_so3(c)


def solve_relaxed_procrustes(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> RelaxedProcrustesResult:
    """Jointly fit R in SO(3) and diagonal D minimizing sum ||t_i - R D s_i||^2.

    Tandem alternation: with D fixed the problem is an orthogonal Procrustes
    solve on the pre-scaled sources; with R fixed each diagonal entry has the
    closed form d_k = sum_i (R^T t_i)_k s_ik / sum_i s_ik^2.  Both half-steps
    are exact minimizers, so the cost never increases.
    """
    src = np.array([p[0] for p in pairs], dtype=float)
    dst = np.array([p[1] for p in pairs], dtype=float)
    if len(pairs) < 3:
        raise InsufficientDataError(f"need at least 3 pairs, got {len(pairs)}")

    axis_energy = np.sum(src**2, axis=0)
    if np.any(axis_energy <= 0.0):
        dead = [k for k in range(3) if axis_energy[k] <= 0.0]
        raise DegenerateAxisError(f"source axis {dead} carries no energy; scale unobservable")

    # ratio-of-norms isotropic seed
    d = np.full(3, np.sum(np.linalg.norm(dst, axis=1)) / np.sum(np.linalg.norm(src, axis=1)))

    cost_history: list[float] = []
    prev_cost = None
    iterations = 0
    rot = np.eye(3)
    for iterations in range(1, max_iters + 1):
        rot = solve_orthogonal_procrustes(list(zip(src * d, dst)))
        back = dst @ rot  # row i = rot.T @ dst_i
        d = np.sum(back * src, axis=0) / axis_energy
        cost = float(np.sum((dst - (src * d) @ rot.T) ** 2))
        cost_history.append(cost)
        if prev_cost is not None and abs(prev_cost - cost) <= tol * max(prev_cost, 1e-300):
            break
        prev_cost = cost

    if np.any(d <= 0.0):
        raise SignDegenerateScaleError(
            f"converged to non-positive scale {d}; VO frame appears mirrored"
        )
    return RelaxedProcrustesResult(rot, ScaleMatrix(d), iterations, cost_history)


def estimate_base_from_c0(
    dataset: CalibrationDataset,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[np.ndarray, ScaleMatrix, np.ndarray]:
    """Recover (rotation base<-c0, scale D, translation base<-c0).

    Centering both point sets removes the translation from the relaxed
    Procrustes fit; the translation is then the average of the per-sample
    closures.
    """
    if dataset.n < 3:
        raise InsufficientDataError(f"need at least 3 samples, got {dataset.n}")
    src = dataset.cam_translations()
    dst = dataset.ee_translations()
    src_c = src - src.mean(axis=0)
    dst_c = dst - dst.mean(axis=0)
    result = solve_relaxed_procrustes(list(zip(src_c, dst_c)), tol=tol, max_iters=max_iters)
    rot, scale = result.rotation, result.scale
    t = np.mean(dst - scale.apply(src) @ rot.T, axis=0)
    return rot, scale, t


def estimate_hand_eye_rotation(
    dataset: CalibrationDataset, base_from_c0_rot: np.ndarray
) -> np.ndarray:
    """Closed-form rotation camera<-ee from the orientation correspondences.

    Minimizes sum ||R_ee_i - (base_from_c0 R_cam_i) X||_F^2 over X in SO(3);
    the optimum projects sum (base_from_c0 R_cam_i)^T R_ee_i onto SO(3).
    """
    if dataset.n < 1:
        raise InsufficientDataError("empty dataset")
    m = np.zeros((3, 3))
    for cam, ee in dataset.samples:
        m += (base_from_c0_rot @ cam.rotation).T @ ee.rotation
    return project_to_so3(m)


def _refine_t0(
    dataset: CalibrationDataset, rot: np.ndarray, scale: ScaleMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """Linear least squares for (t0, base translation) with R and D fixed."""
    n = dataset.n
    a = np.zeros((3 * n, 6))
    b = np.zeros(3 * n)
    rd = rot @ scale.as_matrix()
    for i, (cam, ee) in enumerate(dataset.samples):
        a[3 * i : 3 * i + 3, :3] = rd @ cam.rotation
        a[3 * i : 3 * i + 3, 3:] = np.eye(3)
        b[3 * i : 3 * i + 3] = ee.translation - rd @ cam.translation
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x[:3], x[3:]


def calibrate(
    dataset: CalibrationDataset,
    refine_t0: bool = False,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> HandEyeResult:
    """Full pipeline: base_from_c0 + scale, then the camera/ee rotation.

    t0 is fixed to zero unless refine_t0 is set, in which case a linear
    least-squares pass re-estimates t0 and the base translation with the
    rotation and scale held fixed.
    """
    rot_bc0, scale, t_bc0 = estimate_base_from_c0(dataset, tol=tol, max_iters=max_iters)
    x_ce = estimate_hand_eye_rotation(dataset, rot_bc0)
    t0 = np.zeros(3)
    if refine_t0:
        t0, t_bc0 = _refine_t0(dataset, rot_bc0, scale)

    sq_t = 0.0
    sq_r = 0.0
    for cam, ee in dataset.samples:
        model_t = rot_bc0 @ scale.apply(cam.translation + cam.rotation @ t0) + t_bc0
        sq_t += float(np.sum((ee.translation - model_t) ** 2))
        sq_r += geodesic_distance(ee.rotation, rot_bc0 @ cam.rotation @ x_ce) ** 2
    stats = ResidualStats(
        translation_rms_m=float(np.sqrt(sq_t / dataset.n)),
        rotation_rms_rad=float(np.sqrt(sq_r / dataset.n)),
    )
    return HandEyeResult(
        base_from_c0=Pose(rot_bc0, t_bc0),
        cam_from_ee_rotation=x_ce,
        t0=t0,
        scale=scale,
        residual_stats=stats,
    )


def perturb_hand_eye(
    calib: HandEyeResult, rot_deg: float, scale_frac: float, seed: int = 0
) -> HandEyeResult:
    """Deliberately degrade a calibration for robustness experiments.

    Both recovered rotations are rotated by rot_deg about random axes and
    each scale entry is skewed by +/- scale_frac.
    """
    import math

    rng = np.random.default_rng(seed)

    def tweak(r: np.ndarray) -> np.ndarray:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(rot_deg)
        from .geometry import rotvec_to_matrix

        return r @ rotvec_to_matrix(axis * angle)

    signs = rng.choice([-1.0, 1.0], size=3)
    return HandEyeResult(
        base_from_c0=Pose(tweak(calib.base_from_c0.rotation), calib.base_from_c0.translation),
        cam_from_ee_rotation=tweak(calib.cam_from_ee_rotation),
        t0=calib.t0,
        scale=ScaleMatrix(calib.scale.alpha * (1.0 + scale_frac * signs)),
        residual_stats=calib.residual_stats,
    )


# dataset text format ---------------------------------------------------------
#
# One sample per line:
#   i tx ty tz qx qy qz qw TX TY TZ QX QY QZ QW
# lowercase: camera pose in {c0} (VO units), uppercase: ee pose in {b} (m);
# quaternions scalar-last; '#' starts a comment.


def save_dataset(dataset: CalibrationDataset, path) -> None:
    lines = ["# i tx ty tz qx qy qz qw TX TY TZ QX QY QZ QW"]
    for i, (cam, ee) in enumerate(dataset.samples):
        fields = (
            [str(i)]
            + [f"{v:.17g}" for v in cam.translation]
            + [f"{v:.17g}" for v in matrix_to_quat(cam.rotation)]
            + [f"{v:.17g}" for v in ee.translation]
            + [f"{v:.17g}" for v in matrix_to_quat(ee.rotation)]
        )
        lines.append(" ".join(fields))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path) -> CalibrationDataset:
    samples: list[tuple[Pose, Pose]] = []
    with open(path, "r", encoding="ascii") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 15:
                raise DatasetParseError(line_no, f"expected 15 fields, got {len(fields)}")
            try:
                vals = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise DatasetParseError(line_no, str(exc)) from None
            cam_q = np.array(vals[3:7])
            ee_q = np.array(vals[10:14])
            for q in (cam_q, ee_q):
                if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                    raise DatasetParseError(line_no, f"quaternion not normalized: {q}")
            cam = Pose(quat_to_matrix(cam_q), np.array(vals[0:3]))
            ee = Pose(quat_to_matrix(ee_q), np.array(vals[7:10]))
            samples.append((cam, ee))
    return CalibrationDataset(samples)
