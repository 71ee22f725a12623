"""Camera model: rotation vectors, poses, intrinsics and look-at construction.

Poses are stored as 6-vectors ``[rx, ry, rz, x, y, z]``: a rotation vector and a
translation describing the world -> camera rigid transform, so a world point
``p`` maps to ``R @ p + t`` in the camera frame. The camera looks along +z of
its own frame; image x grows to the right and image y grows downwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * np.pi

# below this angle the closed forms lose precision; use Taylor series instead
_SERIES_ANGLE = 1e-2


def skew(v):
    """Cross-product matrix ``[v]x`` such that ``skew(v) @ u == cross(v, u)``."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _rodrigues_coefficients(theta):
    """Return a, b, a'/theta, b'/theta for R = I + a K + b K^2."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0))
        da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0 + t2 ** 3 / 45360.0
        db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0 + t2 ** 3 / 453600.0
        return a, b, da, db
    s, c = np.sin(theta), np.cos(theta)
    a = s / theta
    b = (1.0 - c) / theta ** 2
    da = (theta * c - s) / theta ** 3
    db = (theta * s - 2.0 * (1.0 - c)) / theta ** 4
    return a, b, da, db


def rotvec_to_matrix(rotvec):
    """Rodrigues exponential map from a rotation vector to a 3x3 rotation matrix."""
    r = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(r))
    a, b, _, _ = _rodrigues_coefficients(theta)
    K = skew(r)
    return np.eye(3) + a * K + b * (K @ K)


def rotvec_jacobian(rotvec):
    """Derivatives of the rotation matrix with respect to each rotvec entry.

    Returns an array ``D`` of shape (3, 3, 3) with ``D[k] = dR / dr_k``.
    """
    r = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(r))
    a, b, da, db = _rodrigues_coefficients(theta)
    K = skew(r)
    K2 = K @ K
    out = np.empty((3, 3, 3))
    for k in range(3):
        E = skew(np.eye(3)[k])
        out[k] = a * E + b * (E @ K + K @ E) + da * r[k] * K + db * r[k] * K2
    return out


def matrix_to_rotvec(R):
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def wrap_rotvec(rotvec):
    """Wrap the rotation angle into [0, 2*pi) keeping the axis direction."""
    r = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta < TWO_PI:
        return r.copy()
    return r / theta * np.fmod(theta, TWO_PI)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels. Pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)``."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"image must be at least 8x8, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @classmethod
    def default(cls, width=64, height=64, fov_scale=1.0):
        """Square pixels with focal length ``fov_scale * width`` and a centered principal point."""
        f = fov_scale * width
        return cls(width, height, f, f, width / 2.0, height / 2.0)

    def resized(self, width, height):
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    def as_tuple(self):
        return (self.width, self.height, self.fx, self.fy, self.cx, self.cy)


@dataclass(frozen=True)
class CameraPose:
    rotvec: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotvec", wrap_rotvec(self.rotvec))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).copy())

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:6])

    def as_vector(self):
        return np.concatenate([self.rotvec, self.translation])

    @property
    def rotation(self):
        """World -> camera rotation matrix."""
        return rotvec_to_matrix(self.rotvec)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return camera_center(self.as_vector())

    @property
    def forward(self):
        """Viewing direction (camera +z) in world coordinates."""
        return self.rotation[2].copy()


def camera_center(pose_vec):
    R = rotvec_to_matrix(pose_vec[:3])
    return -R.T @ np.asarray(pose_vec[3:6], dtype=float)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Pose vector for a camera at ``eye`` looking at ``target``.

    The camera x axis is aligned as closely as possible with ``up``, which is
    the axis the uprightness cost rewards.
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("eye and target coincide")
    forward /= norm
    up = np.asarray(up, dtype=float)
    x_axis = up - forward * (up @ forward)
    if np.linalg.norm(x_axis) < 1e-9:
        fallback = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x_axis = fallback - forward * (fallback @ forward)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)
    R = np.stack([x_axis, y_axis, forward])
    return np.concatenate([matrix_to_rotvec(R), -R @ eye])
