"""Differentiable splat renderer.

``render_channel`` produces images with the usual splatting shortcuts (alphas
under 1/255 skipped, early termination once transmittance drops below 1e-4).
``render_mask`` is the path used by the costs: it composites every Gaussian
whose alpha exceeds 1e-7 without early termination, so the rendered mask is a
continuous function of the pose and its gradient is exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatcam.renderer.camera import (CameraIntrinsics, CameraPose, camera_center, look_at,
                                      rotvec_jacobian, rotvec_to_matrix)
from splatcam.renderer.project import CULLED, Projected2D, project_backward, project_cloud, project_gaussian
from splatcam.renderer.raster import composite_backward, composite_forward, footprint_bounds

IMAGE_ALPHA_MIN = 1.0 / 255.0
IMAGE_T_MIN = 1e-4
DIFF_ALPHA_MIN = 1e-7
DIFF_T_MIN = 0.0

__all__ = [
    "CULLED", "CameraIntrinsics", "CameraPose", "Channel", "MaskRender", "Projected2D", "RenderedImage",
    "camera_center", "chain_rotation", "look_at", "project_gaussian", "render_channel", "render_mask",
    "render_mask_with_pose_gradient", "rotvec_to_matrix",
]


@dataclass(frozen=True)
class Channel:
    kind: str
    index: int | None = None

    @classmethod
    def mask(cls, index):
        return cls("mask", int(index))

    def __str__(self):
        return f"mask{self.index}" if self.kind == "mask" else self.kind


Channel.COLOR = Channel("color")
Channel.FEATURE = Channel("feature")


@dataclass(frozen=True)
class RenderedImage:
    """H x W (mask) or H x W x K (color/feature) pixels plus the channel they came from."""

    pixels: np.ndarray
    channel: Channel

    @property
    def shape(self):
        return self.pixels.shape


def _as_pose_vec(pose):
    if isinstance(pose, CameraPose):
        return pose.as_vector()
    return np.asarray(pose, dtype=float).reshape(6)


def _channel_values(cloud, channel):
    if channel.kind == "color":
        return cloud.colors
    if channel.kind == "feature":
        return cloud.embeddings
    if channel.kind == "mask":
        if not cloud.channel_populated(channel.index):
            raise ValueError(f"channel {channel.index} is not populated")
        return cloud.channels[:, channel.index:channel.index + 1].astype(float)
    raise ValueError(f"unknown channel {channel!r}")


def _prepare(cloud, pose_vec, intrinsics, alpha_min):
    proj = project_cloud(cloud.means, cloud.covariances, pose_vec, intrinsics)
    idx = np.flatnonzero(proj.visible)
    # stable sort: equal depths keep their original index order
    order = idx[np.argsort(proj.depth[idx], kind="stable")]
    bounds = footprint_bounds(proj.mean2d, proj.cov2d, cloud.opacities, alpha_min,
                              intrinsics.width, intrinsics.height)
    return proj, order, bounds


def render_channel(cloud, pose, intrinsics, channel=Channel.COLOR, alpha_min=IMAGE_ALPHA_MIN, t_min=IMAGE_T_MIN):
    """Alpha-composite a per-Gaussian quantity front to back."""
    values = np.ascontiguousarray(_channel_values(cloud, channel), dtype=float)
    pose_vec = _as_pose_vec(pose)
    w, h = intrinsics.width, intrinsics.height
    if len(cloud) == 0:
        img = np.zeros((h, w, values.shape[1]))
    else:
        proj, order, bounds = _prepare(cloud, pose_vec, intrinsics, alpha_min)
        img, _ = composite_forward(order, proj.mean2d, proj.conic, cloud.opacities, values, bounds,
                                   w, h, alpha_min, t_min)
    if channel.kind == "mask":
        img = img[:, :, 0]
    return RenderedImage(img, channel)


def chain_rotation(rotvec, dR):
    """dL/d(rotvec) from dL/dR."""
    D = rotvec_jacobian(rotvec)
    return np.einsum("kij,ij->k", D, dR)


class MaskRender:
    """A rendered binary-channel mask that can pull pixel gradients back to the pose."""

    def __init__(self, cloud, pose, intrinsics, channel_index):
        self.cloud = cloud
        self.pose_vec = _as_pose_vec(pose)
        self.intrinsics = intrinsics
        self.values = np.ascontiguousarray(_channel_values(cloud, Channel.mask(channel_index)))
        self.proj, order, self.bounds = _prepare(cloud, self.pose_vec, intrinsics, DIFF_ALPHA_MIN)
        # nothing sorted behind the last flagged Gaussian can change the mask
        hits = np.flatnonzero(self.values[order, 0] != 0.0)
        self.order = order[:hits[-1] + 1] if hits.size else order[:0]
        img, _ = composite_forward(self.order, self.proj.mean2d, self.proj.conic, cloud.opacities, self.values,
                                   self.bounds, intrinsics.width, intrinsics.height, DIFF_ALPHA_MIN, DIFF_T_MIN)
        self.mask = img[:, :, 0]

    def backward_rt(self, grad_mask):
        """dL/dR and dL/dt for a given dL/d(mask)."""
        g = np.ascontiguousarray(np.asarray(grad_mask, dtype=float).reshape(self.mask.shape + (1,)))
        d_mean, d_conic = composite_backward(self.order, self.proj.mean2d, self.proj.conic, self.cloud.opacities,
                                             self.values, self.bounds, self.intrinsics.width,
                                             self.intrinsics.height, DIFF_ALPHA_MIN, DIFF_T_MIN, g)
        return project_backward(self.proj, d_mean, d_conic, self.intrinsics)

    def pose_gradient(self, grad_mask):
        dR, dt = self.backward_rt(grad_mask)
        return np.concatenate([chain_rotation(self.pose_vec[:3], dR), dt])


def render_mask(cloud, pose, intrinsics, channel_index):
    return MaskRender(cloud, pose, intrinsics, channel_index)


def render_mask_with_pose_gradient(cloud, pose, intrinsics, channel_index, functional):
    """Value and 6-vector pose gradient of ``functional(mask)``.

    ``functional`` maps an H x W mask to ``(value, dvalue/dmask)``.
    """
    mr = MaskRender(cloud, pose, intrinsics, channel_index)
    value, grad_mask = functional(mr.mask)
    return float(value), mr.pose_gradient(grad_mask)
