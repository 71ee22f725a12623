"""Photogenic cost terms for a rendered object mask and a camera pose.

Per pose and prompt the cost is ``tce + tre + upright + alpha * prior``:

* ``tce`` distance of the mask's soft centroid from the image center, in
  units of the image size;
* ``tre`` deviation of the mask's soft area fraction from a target ratio;
* ``upright`` minus the world-up component of the camera x axis;
* ``prior`` a distance-and-facing term pulling the camera near the object.

A trajectory cost integrates the pose cost of prompt i over its time interval
``[(i-1)/n, i/n]`` with the midpoint rule.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from splatcam.renderer import MaskRender, chain_rotation, rotvec_to_matrix
from splatcam.scene import object_centroid
from splatcam.trajectory import basis_matrix

TERMS = ("tce", "tre", "upright", "prior")


@dataclass(frozen=True)
class CostConfig:
    """Cost settings. ``prior_radius=None`` means 3x the object's bounding radius;
    ``mask_epsilon=None`` means ``1e-6 * H * W``."""

    target_ratio: float = 0.25
    prior_radius: float | None = None
    prior_weight: float = 1.0
    prior_decay: float = 0.99
    samples_per_interval: int = 8
    mask_epsilon: float | None = None
    terms: tuple = TERMS
    decay_prior: bool = True

    def __post_init__(self):
        if not 0.0 < self.target_ratio < 1.0:
            raise ValueError("target_ratio must lie in (0, 1)")
        if self.prior_radius is not None and self.prior_radius <= 0:
            raise ValueError("prior_radius must be positive")
        if self.prior_weight <= 0 or not 0.0 < self.prior_decay < 1.0:
            raise ValueError("prior_weight must be > 0 and prior_decay in (0, 1)")
        if self.samples_per_interval < 1:
            raise ValueError("samples_per_interval must be >= 1")
        if self.mask_epsilon is not None and self.mask_epsilon <= 0:
            raise ValueError("mask_epsilon must be positive")
        unknown = set(self.terms) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown cost terms {sorted(unknown)}")

    def epsilon(self, intrinsics):
        return self.mask_epsilon if self.mask_epsilon is not None else 1e-6 * intrinsics.width * intrinsics.height

    def alpha(self, iteration):
        """Prior weight at a given optimizer iteration."""
        if not self.decay_prior:
            return self.prior_weight
        return self.prior_weight * self.prior_decay ** iteration


@dataclass(frozen=True)
class CostBreakdown:
    tce: float
    tre: float
    upright: float
    prior: float
    total: float
    mask_area: float
    alpha: float = 1.0

    @classmethod
    def mean(cls, items):
        items = list(items)
        return cls(*(float(np.mean([getattr(b, k) for b in items])) for k in
                     ("tce", "tre", "upright", "prior", "total", "mask_area", "alpha")))


@dataclass(frozen=True)
class Target:
    """Where a prompt's object is: opacity-weighted centroid and prior radius."""

    centroid: np.ndarray
    radius: float
    prior_radius: float

    @classmethod
    def from_channel(cls, cloud, channel_index, config=CostConfig()):
        c, r = object_centroid(cloud, channel_index)
        pr = config.prior_radius if config.prior_radius is not None else 3.0 * max(r, 1e-3)
        return cls(c, r, pr)


# ---------------------------------------------------------------------------
# mask reductions

def _pixel_centers(shape):
    h, w = shape
    return np.arange(w) + 0.5, np.arange(h) + 0.5


def mask_centroid(mask, eps):
    """Soft centroid sum(v * I(v)) / (sum(I) + eps) in pixel coordinates (x, y)."""
    mask = np.asarray(mask, dtype=float)
    xs, ys = _pixel_centers(mask.shape)
    s = mask.sum() + eps
    return float(mask.sum(axis=0) @ xs / s), float(mask.sum(axis=1) @ ys / s)


def tce_with_grad(mask, intrinsics, eps):
    """TCE value and dTCE/dmask. Each centroid coordinate is normalized by its own image extent."""
    mask = np.asarray(mask, dtype=float)
    h, w = mask.shape
    xs, ys = _pixel_centers(mask.shape)
    s = mask.sum() + eps
    cx = mask.sum(axis=0) @ xs / s
    cy = mask.sum(axis=1) @ ys / s
    ex, ey = cx / w - 0.5, cy / h - 0.5
    val = float(np.hypot(ex, ey))
    if val == 0.0:
        return 0.0, np.zeros_like(mask)
    gx, gy = ex / (w * val), ey / (h * val)
    grad = (gx * (xs[None, :] - cx) + gy * (ys[:, None] - cy)) / s
    return val, grad


def cost_tce(mask, intrinsics, eps):
    return tce_with_grad(mask, intrinsics, eps)[0]


def tre_with_grad(mask, target_ratio):
    mask = np.asarray(mask, dtype=float)
    diff = float(mask.mean()) - target_ratio
    return abs(diff), np.full(mask.shape, np.sign(diff) / mask.size)


def cost_tre(mask, target_ratio):
    return tre_with_grad(mask, target_ratio)[0]


def tce_functional(intrinsics, eps):
    return lambda mask: tce_with_grad(mask, intrinsics, eps)


def tre_functional(target_ratio):
    return lambda mask: tre_with_grad(mask, target_ratio)


# ---------------------------------------------------------------------------
# pose-only terms; gradients are returned with respect to (R, t)

def _split(pose):
    vec = pose.as_vector() if hasattr(pose, "as_vector") else np.asarray(pose, dtype=float)
    return vec, rotvec_to_matrix(vec[:3]), vec[3:6]


def upright_with_grad(pose):
    _, R, _ = _split(pose)
    # camera->world is R.T, so R.T @ e_x is row 0 of R and its world-z entry is R[0, 2]
    dR = np.zeros((3, 3))
    dR[0, 2] = -1.0
    return -float(R[0, 2]), dR, np.zeros(3)


def cost_upright(pose):
    return upright_with_grad(pose)[0]


def facing_alignment(pose, target):
    """Cosine between the camera's viewing direction and the direction to ``target``."""
    _, R, t = _split(pose)
    d = np.asarray(target, dtype=float) + R.T @ t
    return float(R[2] @ d / np.linalg.norm(d))


def prior_with_grad(pose, centroid, radius):
    """max(r, |c - o|) - <forward, (o - c) / |o - c|> and its (R, t) gradient."""
    _, R, t = _split(pose)
    c = -R.T @ t
    d = np.asarray(centroid, dtype=float) - c
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ValueError("camera center coincides with the object centroid")
    dhat = d / dist
    fwd = R[2]
    align = float(fwd @ dhat)
    val = max(radius, dist) - align
    d_c = (fwd - dhat * align) / dist
    if dist > radius:
        d_c = d_c - dhat
    dR = -np.outer(t, d_c)
    dR[2] -= dhat
    dt = -R @ d_c
    return val, dR, dt


def cost_prior(pose, centroid, radius):
    return prior_with_grad(pose, centroid, radius)[0]


# ---------------------------------------------------------------------------
# assembled costs

def pose_cost(cloud, pose, intrinsics, channel_index, config=CostConfig(), alpha=None, target=None,
              gradient=False):
    """Cost breakdown for one pose and prompt; with ``gradient=True`` also the 6-vector pose gradient."""
    vec, R, t = _split(pose)
    alpha = config.prior_weight if alpha is None else alpha
    target = Target.from_channel(cloud, channel_index, config) if target is None else target
    eps = config.epsilon(intrinsics)
    mr = MaskRender(cloud, vec, intrinsics, channel_index)
    tce, g_tce = tce_with_grad(mr.mask, intrinsics, eps)
    tre, g_tre = tre_with_grad(mr.mask, config.target_ratio)
    up, up_dR, up_dt = upright_with_grad(vec)
    pr, pr_dR, pr_dt = prior_with_grad(vec, target.centroid, target.prior_radius)
    on = set(config.terms)
    total = (tce if "tce" in on else 0.0) + (tre if "tre" in on else 0.0) \
        + (up if "upright" in on else 0.0) + (alpha * pr if "prior" in on else 0.0)
    out = CostBreakdown(tce, tre, up, pr, total, float(mr.mask.mean()), alpha)
    if not gradient:
        return out
    g_mask = np.zeros_like(mr.mask)
    if "tce" in on:
        g_mask += g_tce
    if "tre" in on:
        g_mask += g_tre
    dR, dt = mr.backward_rt(g_mask) if g_mask.any() else (np.zeros((3, 3)), np.zeros(3))
    if "upright" in on:
        dR, dt = dR + up_dR, dt + up_dt
    if "prior" in on:
        dR, dt = dR + alpha * pr_dR, dt + alpha * pr_dt
    return out, np.concatenate([chain_rotation(vec[:3], dR), dt])


def sample_times(n, samples_per_interval):
    """Midpoint-rule nodes and their prompt index: S per interval, n intervals."""
    s = samples_per_interval
    ts = (np.arange(n * s) + 0.5) / (n * s)
    return ts, np.arange(n * s) // s


@dataclass
class TrajectoryCost:
    value: float
    breakdowns: list = field(default_factory=list)
    gradient: np.ndarray | None = None

    @property
    def mean_breakdown(self):
        return CostBreakdown.mean(self.breakdowns)


def trajectory_cost(cloud, model, intrinsics, n, config=CostConfig(), alpha=None, targets=None, gradient=False):
    """Midpoint-rule approximation of sum_i of the integral of prompt i's pose cost over its interval.

    With ``gradient=True`` the result carries dJ/dW with the same (6, N) shape
    as the weights: each sample's pose gradient times Psi(t_s), times 1/(nS).
    """
    if targets is None:
        targets = [Target.from_channel(cloud, i, config) for i in range(n)]
    ts, prompt = sample_times(n, config.samples_per_interval)
    B = basis_matrix(model.basis, ts)
    poses = B @ model.weights.T
    quad = 1.0 / len(ts)
    total = 0.0
    breakdowns = []
    grad = np.zeros_like(model.weights) if gradient else None
    for k in range(len(ts)):
        i = int(prompt[k])
        res = pose_cost(cloud, poses[k], intrinsics, i, config, alpha, targets[i], gradient)
        if gradient:
            res, g = res
            grad += quad * np.outer(g, B[k])
        breakdowns.append(res)
        total += quad * res.total
    return TrajectoryCost(total, breakdowns, grad)


TRACE_FIELDS = ("iteration", "tce", "tre", "upright", "prior", "alpha", "total")


def trace_csv(rows):
    """CSV text for a list of (iteration, CostBreakdown) rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for it, b in rows:
        writer.writerow([it] + [repr(float(getattr(b, k))) for k in TRACE_FIELDS[1:]])
    return buf.getvalue()
