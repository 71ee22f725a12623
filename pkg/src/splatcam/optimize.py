"""Adam and SGLD solvers, a central-difference gradient oracle, and the pose/trajectory drivers."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from splatcam.costs import CostConfig, Target, pose_cost, trajectory_cost
from splatcam.renderer.camera import look_at


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    """Adam settings. The step for parameter k is ``learning_rate * lr_scale[k]``."""

    learning_rate: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 400
    rotation_lr: float = 0.01
    translation_lr: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("need learning_rate > 0 and betas in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True)
class SgldConfig:
    step_size: float = 1e-3
    temperature: float | None = None
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def _check(k, value, grad):
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite objective or gradient at iteration {k}")


def adam_run(objective, init, config=AdamConfig(), lr_scale=None, callback=None):
    """Minimize ``objective(x) -> (value, grad)`` with bias-corrected Adam.

    ``callback(k, x, value, grad)`` runs after evaluating iteration k and
    before the step, which is where per-iteration schedules hook in.

    Returns:
        (final parameters, per-iteration values)
    """
    x = np.array(init, dtype=float)
    scale = np.ones_like(x) if lr_scale is None else np.broadcast_to(np.asarray(lr_scale, dtype=float), x.shape)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = config.beta1, config.beta2
    trace = []
    for k in range(config.iterations):
        value, grad = objective(x)
        grad = np.asarray(grad, dtype=float).reshape(x.shape)
        _check(k, value, grad)
        trace.append(float(value))
        if callback is not None:
            callback(k, x, value, grad)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** (k + 1))
        v_hat = v / (1 - b2 ** (k + 1))
        x = x - config.learning_rate * scale * m_hat / (np.sqrt(v_hat) + config.eps)
    return x, np.array(trace)


def sgld_run(objective, init_batch, config=SgldConfig(), step_scale=None, callback=None):
    """Stochastic gradient Langevin dynamics for each row of ``init_batch`` independently.

    Update: ``x <- x - h * grad + sqrt(2 * h * temperature) * xi`` with
    ``h = step_size * step_scale`` per coordinate. Member b draws its noise from
    a generator seeded by ``(seed, b)``. A ``None`` temperature means
    ``1e-4 * |initial cost|`` of each member.

    Returns:
        (final batch (B, P), values (B, iterations))
    """
    batch = np.atleast_2d(np.array(init_batch, dtype=float))
    scale = np.ones(batch.shape[1]) if step_scale is None else np.asarray(step_scale, dtype=float)
    h = config.step_size * scale
    finals = np.empty_like(batch)
    traces = np.empty((len(batch), config.iterations))
    for b, x in enumerate(batch):
        rng = np.random.default_rng([config.seed, b])
        temp = config.temperature
        for k in range(config.iterations):
            value, grad = objective(x)
            grad = np.asarray(grad, dtype=float)
            _check(k, value, grad)
            if temp is None:
                temp = 1e-4 * abs(value)
            traces[b, k] = value
            if callback is not None:
                callback(b, k, x, value, grad)
            x = x - h * grad
            if temp > 0:
                x = x + np.sqrt(2.0 * h * temp) * rng.standard_normal(x.shape)
        finals[b] = x
    return finals, traces


def finite_difference_gradient(f, x, h=1e-4):
    """Central differences ``(f(x + h e_k) - f(x - h e_k)) / 2h`` for every coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    flat = x.ravel()
    for k in range(x.size):
        e = np.zeros_like(flat)
        e[k] = h
        hi = f((flat + e).reshape(x.shape))
        lo = f((flat - e).reshape(x.shape))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"non-finite objective while differencing coordinate {k}")
        g[k] = (hi - lo) / (2.0 * h)
    return g.reshape(x.shape)


# ---------------------------------------------------------------------------
# drivers

def scene_extent(cloud):
    """Robust size of the scene: largest 2nd-98th percentile spread of the means."""
    if len(cloud) == 0:
        return 1.0
    lo, hi = np.percentile(cloud.means, [2, 98], axis=0)
    return float(max((hi - lo).max(), 1e-6))


def pose_lr_scale(config, translation_unit=1.0):
    return np.array([config.rotation_lr] * 3 + [config.translation_lr * translation_unit] * 3)


@dataclass
class RunResult:
    params: np.ndarray
    values: np.ndarray
    trace: list            # (iteration, CostBreakdown)


def optimize_pose(cloud, intrinsics, channel_index, init_pose, cost_config=CostConfig(),
                  adam_config=AdamConfig(), translation_unit=None, target=None):
    """Adam on a single 6-vector pose with the prior weight decaying per iteration."""
    target = Target.from_channel(cloud, channel_index, cost_config) if target is None else target
    unit = scene_extent(cloud) if translation_unit is None else translation_unit
    state = {"k": 0, "rows": []}

    def objective(x):
        alpha = cost_config.alpha(state["k"])
        b, g = pose_cost(cloud, x, intrinsics, channel_index, cost_config, alpha, target, gradient=True)
        state["rows"].append((state["k"], b))
        state["k"] += 1
        return b.total, g

    x, values = adam_run(objective, np.asarray(init_pose, dtype=float), adam_config,
                         pose_lr_scale(adam_config, unit))
    return RunResult(x, values, state["rows"])


def optimize_trajectory(cloud, intrinsics, model, n, cost_config=CostConfig(), adam_config=AdamConfig(iterations=200),
                        translation_unit=None, targets=None):
    """Adam on the (6, N) trajectory weights; rows 0-2 use the rotation rate, rows 3-5 the translation rate."""
    targets = [Target.from_channel(cloud, i, cost_config) for i in range(n)] if targets is None else targets
    unit = scene_extent(cloud) if translation_unit is None else translation_unit
    shape = model.weights.shape
    scale = np.repeat(pose_lr_scale(adam_config, unit)[:, None], shape[1], axis=1)
    state = {"k": 0, "rows": []}

    def objective(w):
        alpha = cost_config.alpha(state["k"])
        res = trajectory_cost(cloud, model.with_weights(w), intrinsics, n, cost_config, alpha, targets, gradient=True)
        state["rows"].append((state["k"], _with_total(res.mean_breakdown, res.value)))
        state["k"] += 1
        return res.value, res.gradient

    w, values = adam_run(objective, model.weights, adam_config, scale)
    return model.with_weights(w), RunResult(w, values, state["rows"])


def _with_total(b, total):
    return replace(b, total=total)


def sgld_poses(cloud, intrinsics, channel_index, init_poses, cost_config=CostConfig(), sgld_config=SgldConfig(),
               step_scale=None, target=None):
    """SGLD over a batch of single poses; the prior weight decays with the iteration count.

    Returns:
        (final poses (B, 6), values (B, iterations), rows of (member, iteration, CostBreakdown))
    """
    target = Target.from_channel(cloud, channel_index, cost_config) if target is None else target
    state = {"b": 0, "k": 0, "rows": []}

    def objective(x):
        alpha = cost_config.alpha(state["k"])
        b, g = pose_cost(cloud, x, intrinsics, channel_index, cost_config, alpha, target, gradient=True)
        state["rows"].append((state["b"], state["k"], b))
        return b.total, g

    def advance(member, k, x, value, grad):
        # the prior schedule restarts for every member
        state["k"] = (k + 1) % sgld_config.iterations
        state["b"] = member + (k + 1) // sgld_config.iterations

    finals, traces = sgld_run(objective, init_poses, sgld_config, step_scale, advance)
    return finals, traces, state["rows"]


def random_poses_around(center, radius_range, count, seed=0, elevation_range=(0.1, 0.9), aim_jitter=0.0,
                        bearing_range=(0.0, 2 * np.pi)):
    """Cameras at random bearings/elevations around ``center``, looking roughly at it."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    poses = []
    for _ in range(count):
        bearing = rng.uniform(*bearing_range)
        elev = rng.uniform(*elevation_range)
        dist = rng.uniform(*radius_range)
        d = np.array([np.cos(bearing) * np.cos(elev), np.sin(bearing) * np.cos(elev), np.sin(elev)])
        aim = center + rng.normal(scale=aim_jitter, size=3)
        poses.append(look_at(center + dist * d, aim))
    return np.array(poses)
