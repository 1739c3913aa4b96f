"""Pinhole cameras, rigid transforms, and quaternion algebra.

Conventions used throughout the package:

- Quaternions are Hamilton, stored ``(w, x, y, z)``, canonicalized to
  ``w >= 0`` (removes the double-cover ambiguity from serialized data).
- Poses are world-from-camera: ``X_world = R @ X_cam + t``.
- Angles are degrees, lengths are meters.
- Continuous image coordinates put pixel centers at integer positions,
  so the in-bounds test is ``0 <= u < width`` and ``0 <= v < height``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BEHIND_CAMERA_EPS = 1e-9


class DegenerateQuaternionError(ValueError):
    """Raised when a quaternion with near-zero norm cannot be normalized."""


class InvalidDepthError(ValueError):
    """Raised when unprojecting a non-positive depth."""


def quat_normalize(v) -> np.ndarray:
    """Scale a 4-vector to unit norm and canonicalize the sign so w >= 0.

    Raises DegenerateQuaternionError if the input norm is <= 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= 1e-12:
        raise DegenerateQuaternionError(f"quaternion norm {n} too small to normalize")
    q = v / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b (both (w, x, y, z))."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix. Shepperd's branching."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Unit quaternion rotating by angle_deg around axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = math.radians(angle_deg) / 2.0
    return quat_normalize(np.array([math.cos(half), *(math.sin(half) * axis)]))


def quat_geodesic_deg(a, b) -> float:
    """Geodesic rotation distance in degrees: 2*acos(min(1, |<a, b>|)).

    Symmetric, sign-invariant (q and -q are the same rotation), in [0, 180].
    """
    d = abs(float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))))
    return math.degrees(2.0 * math.acos(min(1.0, d)))


@dataclass(frozen=True)
class RigidPose:
    """World-from-camera rigid transform: X_world = R @ X_cam + t."""

    rotation: np.ndarray  # unit quaternion (w, x, y, z), w >= 0
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {t.shape}")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, pts) -> np.ndarray:
        """Transform points, shape (..., 3)."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ quat_to_matrix(self.rotation).T + self.translation


def pose_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """(a o b)(X) = a(b(X))."""
    rot = quat_multiply(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return RigidPose(rot, t)


def pose_invert(p: RigidPose) -> RigidPose:
    rot = quat_conjugate(p.rotation)
    t = -(quat_to_matrix(p.rotation).T @ p.translation)
    return RigidPose(rot, t)


def relative_pose(frame1: RigidPose, frame2: RigidPose) -> RigidPose:
    """Transform mapping camera-1 coordinates into camera-2 coordinates.

    Both inputs are world-from-camera, so this is frame2^-1 o frame1.
    """
    return pose_compose(pose_invert(frame2), frame1)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )


def project(K: CameraIntrinsics, pts):
    """Project camera-frame points to pixels.

    Args:
        K: intrinsics.
        pts: (..., 3) points in camera coordinates (meters).

    Returns:
        (uv, depth, in_front): uv has shape (..., 2); depth is the z
        coordinate; in_front is False where z <= BEHIND_CAMERA_EPS (a
        signaled outcome, not an error). For points behind the camera
        uv is undefined and filled with NaN.
    """
    pts = np.asarray(pts, dtype=np.float64)
    z = pts[..., 2]
    in_front = z > BEHIND_CAMERA_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * pts[..., 0] / z + K.cx
        v = K.fy * pts[..., 1] / z + K.cy
    uv = np.stack([u, v], axis=-1)
    uv[~in_front] = np.nan
    return uv, z, in_front


def unproject(K: CameraIntrinsics, u, v, d):
    """Back-project pixels with depth d to camera-frame points (..., 3).

    Scalar d <= 0 raises InvalidDepthError; array inputs are the caller's
    responsibility (used with validity masks).
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 0 and d <= 0:
        raise InvalidDepthError(f"depth must be positive, got {float(d)}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - K.cx) / K.fx * d
    y = (v - K.cy) / K.fy * d
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


@dataclass
class DepthMap:
    """Per-pixel depth in meters along the optical axis, (H, W) row-major.

    Invalid pixels are marked by non-finite values or values <= 0.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)


@dataclass
class CameraFrame:
    """One image's geometry: intrinsics, world-from-camera pose, depth."""

    intrinsics: CameraIntrinsics
    pose: RigidPose
    depth: DepthMap

    def __post_init__(self):
        if (self.depth.width, self.depth.height) != (
            self.intrinsics.width,
            self.intrinsics.height,
        ):
            raise ValueError(
                f"depth {self.depth.width}x{self.depth.height} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.pose.translation
