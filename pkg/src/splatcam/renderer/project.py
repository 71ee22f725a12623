"""EWA projection of 3D Gaussians into the image plane, with its reverse-mode pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatcam.renderer.camera import rotvec_to_matrix

NEAR_PLANE = 0.01
COV_DILATION = 0.3
# centers projecting further than this fraction of the image size outside it are culled
GUARD_BAND = 0.3


@dataclass(frozen=True)
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    alpha_scale: float


class _Culled:
    def __repr__(self):
        return "CULLED"


CULLED = _Culled()


@dataclass
class Projection:
    """Projected quantities for a whole cloud plus intermediates kept for the backward pass."""

    R: np.ndarray          # (3, 3) world -> camera
    means: np.ndarray      # (N, 3) world means
    cov3d: np.ndarray      # (N, 3, 3)
    mu_c: np.ndarray       # (N, 3) camera-frame means
    J: np.ndarray          # (N, 2, 3) perspective Jacobians
    M: np.ndarray          # (N, 2, 3) J @ R
    mean2d: np.ndarray     # (N, 2)
    cov2d: np.ndarray      # (N, 2, 2) dilated
    conic: np.ndarray      # (N, 3) entries a, b, c of inv(cov2d)
    visible: np.ndarray    # (N,) bool, depth beyond the near plane

    @property
    def depth(self):
        return self.mu_c[:, 2]


def project_cloud(means, cov3d, pose_vec, intrinsics):
    pose_vec = np.asarray(pose_vec, dtype=float)
    R = rotvec_to_matrix(pose_vec[:3])
    mu_c = means @ R.T + pose_vec[3:6]
    x, y, z = mu_c[:, 0], mu_c[:, 1], mu_c[:, 2]
    visible = z > NEAR_PLANE
    # culled entries get a harmless depth so nothing below divides by ~0
    zs = np.where(visible, z, 1.0)
    fx, fy = intrinsics.fx, intrinsics.fy
    # near-plane splats beside the camera would otherwise blow up to cover the frame
    u, v = fx * x / zs + intrinsics.cx, fy * y / zs + intrinsics.cy
    gw, gh = GUARD_BAND * intrinsics.width, GUARD_BAND * intrinsics.height
    visible &= (u > -gw) & (u < intrinsics.width + gw) & (v > -gh) & (v < intrinsics.height + gh)
    zs = np.where(visible, z, 1.0)
    n = len(means)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / zs ** 2
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / zs ** 2
    M = J @ R
    cov2d = M @ cov3d @ np.swapaxes(M, 1, 2) + COV_DILATION * np.eye(2)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    conic = np.column_stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det])
    mean2d = np.column_stack([fx * x / zs + intrinsics.cx, fy * y / zs + intrinsics.cy])
    return Projection(R, means, cov3d, mu_c, J, M, mean2d, cov2d, conic, visible)


def project_backward(proj, d_mean2d, d_conic, intrinsics):
    """Chain image-space gradients back to the world -> camera rotation and translation.

    Args:
        d_mean2d: (N, 2) dL/d(u, v).
        d_conic: (N, 3) dL/d(a, b, c) where the inverse 2D covariance is [[a, b], [b, c]].

    Returns:
        (dL/dR as 3x3, dL/dt as 3-vector).
    """
    vis = proj.visible & (np.abs(d_mean2d).sum(axis=1) + np.abs(d_conic).sum(axis=1) > 0)
    if not vis.any():
        return np.zeros((3, 3)), np.zeros(3)
    fx, fy = intrinsics.fx, intrinsics.fy
    mu_c, J, M = proj.mu_c[vis], proj.J[vis], proj.M[vis]
    cov3d, means = proj.cov3d[vis], proj.means[vis]
    dm, dc = d_mean2d[vis], d_conic[vis]
    a, b, c = proj.conic[vis].T
    conic = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    # b multiplies both off-diagonal entries, so each receives half its gradient
    G = np.stack([np.stack([dc[:, 0], 0.5 * dc[:, 1]], -1), np.stack([0.5 * dc[:, 1], dc[:, 2]], -1)], -2)
    d_cov2d = -conic @ G @ conic
    d_M = 2.0 * d_cov2d @ M @ cov3d
    dR = np.einsum("gij,gik->jk", J, d_M)
    d_J = d_M @ proj.R.T
    x, y, z = mu_c.T
    z2, z3 = z * z, z * z * z
    d_mu = np.zeros_like(mu_c)
    d_mu[:, 0] = dm[:, 0] * fx / z
    d_mu[:, 1] = dm[:, 1] * fy / z
    d_mu[:, 2] = -dm[:, 0] * fx * x / z2 - dm[:, 1] * fy * y / z2
    # J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    d_mu[:, 0] += -d_J[:, 0, 2] * fx / z2
    d_mu[:, 1] += -d_J[:, 1, 2] * fy / z2
    d_mu[:, 2] += (-d_J[:, 0, 0] * fx / z2 + 2.0 * d_J[:, 0, 2] * fx * x / z3
                   - d_J[:, 1, 1] * fy / z2 + 2.0 * d_J[:, 1, 2] * fy * y / z3)
    dR += d_mu.T @ means
    return dR, d_mu.sum(axis=0)


def project_gaussian(gaussian, pose, intrinsics):
    """Project a single Gaussian; returns Projected2D or CULLED."""
    pose_vec = pose.as_vector() if hasattr(pose, "as_vector") else np.asarray(pose, dtype=float)
    proj = project_cloud(np.asarray(gaussian.mean, dtype=float)[None], gaussian.covariance[None], pose_vec, intrinsics)
    if not proj.visible[0]:
        return CULLED
    return Projected2D(proj.mean2d[0], proj.cov2d[0], float(proj.mu_c[0, 2]), float(gaussian.opacity))
