"""SE(3) poses, rotations, and pinhole projection.

Conventions used throughout the package:

* A pose named ``a_from_b`` maps coordinates expressed in frame {b} into
  frame {a}: ``p_a = R @ p_b + t``.
* Frames {b} (robot base) and {e} (end effector) are metric; the visual
  odometry frames {c0}, {ci} are in VO units.  Nothing here tags units;
  mixing frames is a programming error caught by tests, not at runtime.
* Rotations are 3x3 numpy arrays.  Quaternions appear only at the text
  serialization boundary and are scalar-last (qx, qy, qz, qw).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError

_ORTHO_TOL = 1e-9


def is_rotation(r: np.ndarray, tol: float = 1e-7) -> bool:
    """True if r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    return (
        np.allclose(r.T @ r, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def rotx(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula; axis need not be normalized unless angle-only is meant."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    a = axis / n
    k = hat(a)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Exponential of a rotation vector (axis * angle)."""
    w = np.asarray(w, dtype=float)
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        k = hat(w)
        return np.eye(3) + k + 0.5 * (k @ k)
    return axis_angle_to_matrix(w / angle, angle)


def angle_axis(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Extract (unit axis, angle in [0, pi]) from a rotation matrix.

    Near angle 0 the axis is arbitrary; by convention (0, 0, 1) is returned.
    Near angle pi the axis comes from the largest diagonal element of
    R + I, which stays well conditioned where the skew part vanishes.
    """
    r = np.asarray(r, dtype=float)
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_angle = np.linalg.norm(skew) / 2.0
    cos_angle = (np.trace(r) - 1.0) / 2.0
    # atan2 keeps full precision near 0 where acos of ~1 loses half the digits
    angle = math.atan2(sin_angle, cos_angle)

    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), angle

    if angle > math.pi - 1e-5:
        # R ~ 2 a a^T - I; symmetrizing kills the O(pi - angle) skew term and
        # the largest diagonal picks the best-conditioned axis component.
        m = ((r + r.T) / 2.0 + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(m)))
        axis = m[:, k] / math.sqrt(max(m[k, k], 1e-30))
        axis = axis / np.linalg.norm(axis)
        # Fix the sign from the skew term when one survives (at exactly pi
        # both signs represent the same rotation).
        if np.dot(skew, axis) < 0.0:
            axis = -axis
        return axis, angle

    axis = skew / (2.0 * sin_angle)
    return axis / np.linalg.norm(axis), angle


def rotation_to_vec(r: np.ndarray) -> np.ndarray:
    """angle * axis as a single 3-vector (the log map)."""
    axis, angle = angle_axis(r)
    return axis * angle


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of r1^T r2, in [0, pi]."""
    _, angle = angle_axis(np.asarray(r1).T @ np.asarray(r2))
    return angle


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (Shoemake quaternion method)."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            math.sqrt(1 - u1) * math.sin(2 * math.pi * u2),
            math.sqrt(1 - u1) * math.cos(2 * math.pi * u2),
            math.sqrt(u1) * math.sin(2 * math.pi * u3),
            math.sqrt(u1) * math.cos(2 * math.pi * u3),
        ]
    )
    return quat_to_matrix(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Scalar-last quaternion (qx, qy, qz, qw) to rotation matrix."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to scalar-last quaternion, w >= 0 (Shepperd's branches)."""
    r = np.asarray(r, dtype=float)
    t = np.trace(r)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        """Apply other, then self (matrix product of homogeneous transforms)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many (N, 3)."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(m[:3, :3], m[:3, 3])

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=tol)
            and np.allclose(self.translation, other.translation, atol=tol)
        )


def compose(a: Pose, b: Pose) -> Pose:
    """Apply b, then a."""
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera parameters, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project(k: CameraIntrinsics, p_cam: np.ndarray) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point with z > 0."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z <= 0.0:
        raise BehindCameraError(f"point depth {z} is not positive")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def back_project(k: CameraIntrinsics, pixel: tuple[float, float], depth: float) -> np.ndarray:
    """Inverse of project at a known depth (camera frame)."""
    u, v = pixel
    return np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])


def pixel_in_image(k: CameraIntrinsics, u: float, v: float) -> bool:
    return 0.0 <= u < k.width and 0.0 <= v < k.height


@dataclass(frozen=True)
class Twist:
    """Velocity command: linear (units/s) + angular (rad/s) in a named frame."""

    linear: np.ndarray
    angular: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        object.__setattr__(self, "linear", np.array(self.linear, dtype=float).reshape(3))
        object.__setattr__(self, "angular", np.array(self.angular, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("twist components must be finite")
        if self.frame not in ("camera", "base"):
            raise ValueError(f"unknown twist frame {self.frame!r}")

    @staticmethod
    def zero(frame: str = "camera") -> "Twist":
        return Twist(np.zeros(3), np.zeros(3), frame)

    def clamped(self, v_max: float, w_max: float) -> "Twist":
        """Scale linear/angular parts down to the given norm limits."""
        lin, ang = self.linear, self.angular
        ln, an = np.linalg.norm(lin), np.linalg.norm(ang)
        if ln > v_max:
            lin = lin * (v_max / ln)
        if an > w_max:
            ang = ang * (w_max / an)
        return Twist(lin, ang, self.frame)

    def is_zero(self) -> bool:
        return not (self.linear.any() or self.angular.any())
