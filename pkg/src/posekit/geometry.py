"""Quaternion, Euler-angle and pinhole-camera helpers.

Conventions used throughout the package:

* quaternions are scalar-first ``(w, x, y, z)`` numpy arrays, shape ``(..., 4)``;
* Euler angles are intrinsic Z-Y-X: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``;
* a pose ``(q, t)`` maps body-frame points into the camera frame as
  ``p_cam = R(q) @ p_body + t`` with the camera looking down +z.

All functions are pure and broadcast over leading dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidConfig, NonPositiveDepth

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# sin(pitch) beyond this is treated as gimbal lock
_GIMBAL_EPS = 1e-12


class EulerAngles(NamedTuple):
    yaw: float
    pitch: float
    roll: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 96.0
    cy: float = 60.0
    width: int = 192
    height: int = 120

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidConfig("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidConfig("principal point must lie inside the image")

    @classmethod
    def for_size(cls, width: int, height: int, fov_scale: float = 1.25) -> "CameraIntrinsics":
        """Centered intrinsics with ``fx = fy = fov_scale * width``."""
        f = fov_scale * width
        return cls(f, f, width / 2.0, height / 2.0, int(width), int(height))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Target orientation (unit quaternion) and position (meters, camera frame)."""

    orientation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "orientation", normalize(np.asarray(self.orientation, dtype=float)))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.position))


def normalize(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, eps)


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b``, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return normalize(out)


def quat_angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Geodesic rotation angle between two orientations, in radians, in [0, pi].

    Equal to ``2 * arccos(|<a, b>|)`` but evaluated as a half-angle atan2,
    which stays accurate (and exactly 0) for nearly identical rotations.
    """
    a = normalize(np.asarray(a, dtype=float))
    b = normalize(np.asarray(b, dtype=float))
    sign = np.where(np.sum(a * b, axis=-1) < 0, -1.0, 1.0)[..., None]
    b = sign * b
    d = 4.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


def axis_angle_to_quat(axis, angle) -> np.ndarray:
    axis = normalize(np.asarray(axis, dtype=float))
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def rot_x(angle) -> np.ndarray:
    return axis_angle_to_quat([1.0, 0.0, 0.0], angle)


def rot_y(angle) -> np.ndarray:
    return axis_angle_to_quat([0.0, 1.0, 0.0], angle)


def rot_z(angle) -> np.ndarray:
    return axis_angle_to_quat([0.0, 0.0, 1.0], angle)


def euler_to_quat(e) -> np.ndarray:
    """Quaternion of the intrinsic Z-Y-X rotation ``Rz(yaw) Ry(pitch) Rx(roll)``.

    Accepts an :class:`EulerAngles` or an array whose last axis is
    ``(yaw, pitch, roll)``.
    """
    yaw, pitch, roll = np.moveaxis(np.asarray(e, dtype=float), -1, 0)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    q = np.stack(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ],
        axis=-1,
    )
    return normalize(q)


def _wrap(angle):
    """Wrap to [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


def quat_to_euler(q) -> EulerAngles | np.ndarray:
    """Inverse of :func:`euler_to_quat` with angles in canonical ranges.

    At gimbal lock (``|pitch| = pi/2``) roll is set to 0 and the coupled
    rotation is folded into yaw. Returns :class:`EulerAngles` for a single
    quaternion and an ``(..., 3)`` array otherwise.
    """
    q = normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    sinp = np.clip(2.0 * (w * y - z * x), -1.0, 1.0)
    locked = np.abs(sinp) >= 1.0 - _GIMBAL_EPS
    pitch = np.where(locked, np.sign(sinp) * np.pi / 2, np.arcsin(sinp))
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    # with roll = 0: R01 = -sin(yaw), R11 = cos(yaw)
    yaw_locked = np.arctan2(-2.0 * (x * y - w * z), 1.0 - 2.0 * (x * x + z * z))
    yaw = _wrap(np.where(locked, yaw_locked, yaw))
    roll = _wrap(np.where(locked, 0.0, roll))
    if q.ndim == 1:
        return EulerAngles(float(yaw), float(pitch), float(roll))
    return np.stack([yaw, pitch, roll], axis=-1)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.moveaxis(normalize(q), -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(m.shape[:-1] + (3, 3))


def rotate_vector(q, v) -> np.ndarray:
    """Rotate ``v`` (shape ``(..., 3)``) by ``q``."""
    q = normalize(q)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def canonicalize(q) -> np.ndarray:
    """Pick the sign with ``w >= 0``; ties broken by the first nonzero component."""
    q = np.array(q, dtype=float)
    flat = q.reshape(-1, 4)
    for row in flat:
        nz = np.flatnonzero(np.abs(row) > 0)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return flat.reshape(q.shape)


def random_quaternions(rng: np.random.Generator, size=None) -> np.ndarray:
    """Quaternions uniformly distributed on SO(3) (normalized 4D Gaussians)."""
    shape = (4,) if size is None else tuple(np.atleast_1d(size)) + (4,)
    return normalize(rng.standard_normal(shape))


def project_point(p, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) to pixel coordinates ``(u, v)``."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point behind or on the camera plane")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)
