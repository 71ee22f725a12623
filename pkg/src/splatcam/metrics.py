"""Evaluation metrics for poses and trajectories: TCE, TRE, occlusion IoU and log dimensionless jerk."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from splatcam.costs import CostConfig, cost_tce, cost_tre
from splatcam.renderer import Channel, render_channel
from splatcam.trajectory import eval_derivatives_many, eval_pose_vectors, keyframe_times

POSITIONAL, ANGULAR = "positional", "angular"


def iou(mask_a, mask_b, threshold=0.5):
    """Intersection over union of two masks binarized at ``threshold``; 1 when both are empty."""
    a = np.asarray(getattr(mask_a, "pixels", mask_a))
    b = np.asarray(getattr(mask_b, "pixels", mask_b))
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a, b = a >= threshold, b >= threshold
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def occlusion_iou(cloud, pose, intrinsics, channel_index, threshold=0.5):
    """IoU between the object's mask in the full scene and its mask rendered without anything else."""
    full = render_channel(cloud, pose, intrinsics, Channel.mask(channel_index))
    alone = cloud.subset(cloud.channels[:, channel_index])
    ref = render_channel(alone, pose, intrinsics, Channel.mask(channel_index))
    return iou(full, ref, threshold)


def ldj(model, component=POSITIONAL, grid_size=512):
    """Log dimensionless jerk of the translation or rotation-vector path over t in [0, 1].

    ``ln(T**5 / v_peak**2 * integral |jerk|**2 dt)`` with T = 1; lower is smoother.
    A path that never moves returns ``-inf``.
    """
    if grid_size < 32:
        raise ValueError("grid_size must be >= 32")
    cols = slice(3, 6) if component == POSITIONAL else slice(0, 3)
    if component not in (POSITIONAL, ANGULAR):
        raise ValueError(f"unknown component {component!r}")
    ts = np.linspace(0.0, 1.0, grid_size)
    speed = np.linalg.norm(eval_derivatives_many(model, ts, 1)[:, cols], axis=1)
    jerk = eval_derivatives_many(model, ts, 3)[:, cols]
    v_peak = float(speed.max())
    integral = float(trapezoid(np.sum(jerk * jerk, axis=1), ts))
    if v_peak == 0.0 or integral == 0.0:
        return -math.inf
    return math.log(integral / v_peak ** 2)


@dataclass
class KeyframeMetrics:
    t: float
    prompt: int
    tce: float
    tre: float
    iou: float


@dataclass
class TrajectoryReport:
    keyframes: list
    prompt_tce: list
    prompt_tre: list
    prompt_iou: list
    angular_ldj: float
    positional_ldj: float

    @property
    def sample_count(self):
        return len(self.keyframes)

    @property
    def mean_tce(self):
        return float(np.mean([k.tce for k in self.keyframes]))

    @property
    def mean_tre(self):
        return float(np.mean([k.tre for k in self.keyframes]))

    @property
    def mean_iou(self):
        return float(np.mean([k.iou for k in self.keyframes]))

    def summary(self):
        return {"tce": self.mean_tce, "tre": self.mean_tre, "iou": self.mean_iou,
                "angular_ldj": self.angular_ldj, "positional_ldj": self.positional_ldj}


def evaluate_pose(cloud, pose, intrinsics, channel_index, config=CostConfig(), threshold=0.5):
    mask = render_channel(cloud, pose, intrinsics, Channel.mask(channel_index)).pixels
    return (cost_tce(mask, intrinsics, config.epsilon(intrinsics)), cost_tre(mask, config.target_ratio),
            occlusion_iou(cloud, pose, intrinsics, channel_index, threshold))


def evaluate_trajectory(cloud, model, intrinsics, n, config=CostConfig(), keyframes=9, ldj_grid=512):
    """Metrics at ``keyframes`` evenly spaced times plus both LDJ values.

    A keyframe at time t is scored against the prompt whose interval contains t.
    """
    ts = keyframe_times(keyframes)
    poses = eval_pose_vectors(model, ts)
    rows = []
    for t, p in zip(ts, poses):
        i = min(int(t * n), n - 1)
        tce, tre, ov = evaluate_pose(cloud, p, intrinsics, i, config)
        rows.append(KeyframeMetrics(float(t), i, tce, tre, ov))
    per = lambda attr: [float(np.mean([getattr(r, attr) for r in rows if r.prompt == i])) if
                        any(r.prompt == i for r in rows) else float("nan") for i in range(n)]
    return TrajectoryReport(rows, per("tce"), per("tre"), per("iou"),
                            ldj(model, ANGULAR, ldj_grid), ldj(model, POSITIONAL, ldj_grid))


REPORT_METRICS = ("tce", "tre", "iou", "angular_ldj", "positional_ldj")
LOWER_IS_BETTER = {"tce": True, "tre": True, "iou": False, "angular_ldj": True, "positional_ldj": True}


def report_csv(reports):
    """CSV with one row per (name, metric); ``reports`` maps a name to a TrajectoryReport."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory", "metric", "value"])
    for name, rep in reports.items():
        for k, v in rep.summary().items():
            w.writerow([name, k, repr(float(v))])
        for kf in rep.keyframes:
            w.writerow([name, f"keyframe_{kf.t:.4f}_prompt{kf.prompt}",
                        f"tce={kf.tce!r};tre={kf.tre!r};iou={kf.iou!r}"])
    return buf.getvalue()


def report_table(reports):
    """Aligned text table, metrics as rows and trajectories as columns; best value per row starred."""
    names = list(reports)
    header = ["metric"] + names
    lines = []
    for m in REPORT_METRICS:
        vals = [reports[n].summary()[m] for n in names]
        finite = [v for v in vals if np.isfinite(v)]
        best = (min(finite) if LOWER_IS_BETTER[m] else max(finite)) if finite else None
        lines.append([m] + [f"{v:.3f}{'*' if len(names) > 1 and v == best else ''}" for v in vals])
    widths = [max(len(r[c]) for r in [header] + lines) for c in range(len(header))]
    fmt = lambda row: "  ".join(cell.ljust(wd) for cell, wd in zip(row, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * wd for wd in widths])] + [fmt(r) for r in lines]) + "\n"
