import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import object_scene, pose_facing
from splatcam.costs import (CostBreakdown, CostConfig, Target, cost_prior, cost_tce, cost_tre, cost_upright,
                            facing_alignment, mask_centroid, pose_cost, prior_with_grad, sample_times, trace_csv,
                            trajectory_cost, upright_with_grad)
from splatcam.optimize import finite_difference_gradient
from splatcam.renderer import CameraIntrinsics, chain_rotation, look_at, rotvec_to_matrix
from splatcam.trajectory import BasisSpec, TrajectoryModel, init_weights

INTR = CameraIntrinsics.default(32, 32)


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), 1e-12)


# ---------------------------------------------------------------------------
# mask reductions

def test_centroid_single_pixel():
    m = np.zeros((30, 40))
    m[20, 10] = 1.0
    assert mask_centroid(m, 1e-300) == pytest.approx((10.5, 20.5))


def test_centroid_uniform_mask():
    assert mask_centroid(np.full((30, 40), 0.3), 1e-300) == pytest.approx((20.0, 15.0))


def test_centroid_matches_summation_oracle(rng):
    m = rng.uniform(size=(17, 23))
    eps = 1e-3
    num_x = sum(m[r, c] * (c + 0.5) for r in range(17) for c in range(23))
    num_y = sum(m[r, c] * (r + 0.5) for r in range(17) for c in range(23))
    den = sum(m[r, c] for r in range(17) for c in range(23)) + eps
    cx, cy = mask_centroid(m, eps)
    assert abs(cx - num_x / den) < 1e-9 and abs(cy - num_y / den) < 1e-9


def test_tce_examples():
    m = np.zeros((32, 32))
    m[15:17, 15:17] = 1
    assert cost_tce(m, INTR, 1e-300) == 0.0
    corner = np.zeros((32, 32))
    corner[0, 0] = 1.0
    # the lit pixel's center is half a pixel from the corner
    assert cost_tce(corner, INTR, 1e-300) == pytest.approx(math.hypot(0.5 - 0.5 / 32, 0.5 - 0.5 / 32))
    assert cost_tce(corner, INTR, 1e-300) == pytest.approx(math.sqrt(2) / 2, abs=0.025)


def test_tce_uses_own_extent_per_axis():
    intr = CameraIntrinsics.default(40, 20)
    m = np.zeros((20, 40))
    m[:, 39] = 1.0
    assert cost_tce(m, intr, 1e-300) == pytest.approx(39.5 / 40 - 0.5)


def test_tre_examples():
    m = np.zeros((8, 8))
    m[:4, :4] = 1
    assert cost_tre(m, 0.25) == 0.0
    assert cost_tre(np.zeros((8, 8)), 0.25) == 0.25
    assert cost_tre(np.full((8, 8), 0.5), 0.25) == 0.25


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_reduction_ranges(seed, rt):
    m = np.random.default_rng(seed).uniform(size=(12, 12)) ** 4
    assert 0 <= cost_tce(m, CameraIntrinsics.default(12, 12), 1e-6) <= math.sqrt(2) / 2
    assert 0 <= cost_tre(m, rt) <= max(rt, 1 - rt)


# ---------------------------------------------------------------------------
# pose terms

def test_upright_examples():
    # camera x axis along world +z
    R = np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 0]])  # rows: camera axes in world coordinates
    pose = np.concatenate([Rotation.from_matrix(R).as_rotvec(), np.zeros(3)])
    assert cost_upright(pose) == pytest.approx(-1.0)
    assert cost_upright(np.zeros(6)) == pytest.approx(0.0)  # camera x = world x, horizontal


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_upright_reads_column_of_camera_to_world(p):
    R_cw = rotvec_to_matrix(p[:3]).T
    assert cost_upright(p) == pytest.approx(-(R_cw @ [1, 0, 0])[2], abs=1e-12)
    assert -1 - 1e-12 <= cost_upright(p) <= 1 + 1e-12


def test_prior_examples():
    o, r = np.array([0.3, -0.2, 0.1]), 0.5
    pose = look_at(o + r * np.array([0.6, 0.0, 0.8]), o)
    assert cost_prior(pose, o, r) == pytest.approx(r - 1)
    away = look_at(o + 2 * r * np.array([0, 1.0, 0]), o + 3 * r * np.array([0, 1.0, 0]))
    assert cost_prior(away, o, r) == pytest.approx(2 * r + 1)
    with pytest.raises(ValueError):
        cost_prior(np.concatenate([np.zeros(3), -o]), o, r)  # camera center exactly at o


def test_prior_flat_inside_ball():
    o, r = np.zeros(3), 1.0
    for d in (0.2, 0.5, 0.9):
        pose = look_at([d, 0, 0], o)
        # inside the ball only the facing term is left, and its translation gradient vanishes when aligned
        _, _, dt = prior_with_grad(pose, o, r)
        assert cost_prior(pose, o, r) == pytest.approx(r - 1.0)
        assert np.abs(dt).max() < 1e-12
        assert abs(facing_alignment(pose, o) - 1.0) < 1e-12
    _, _, dt = prior_with_grad(look_at([2.0, 0, 0], o), o, r)
    assert np.abs(dt).max() > 0.5


@pytest.mark.parametrize("seed", range(6))
def test_pose_term_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    pose = rng.normal(size=6)
    o, r = rng.normal(size=3), 0.3

    def via_chain(fn):
        _, dR, dt = fn(pose)
        return np.concatenate([chain_rotation(pose[:3], dR), dt])
    up = via_chain(upright_with_grad)
    pr = via_chain(lambda p: prior_with_grad(p, o, r))
    assert rel_err(up, finite_difference_gradient(cost_upright, pose)) < 1e-6
    assert rel_err(pr, finite_difference_gradient(lambda p: cost_prior(p, o, r), pose)) < 1e-6


# ---------------------------------------------------------------------------
# assembled pose cost

def test_total_assembles_terms():
    cloud = object_scene(seed=1)
    cfg = CostConfig()
    for alpha in (1.0, 0.37):
        b = pose_cost(cloud, pose_facing(), INTR, 0, cfg, alpha=alpha)
        assert b.total == pytest.approx(b.tce + b.tre + b.upright + alpha * b.prior, abs=1e-15)
        assert b.alpha == alpha


def test_ideal_pose_total():
    # hand-built so every image term vanishes: check the term-by-term assembly r - 1 and -1
    cloud = object_scene(seed=1)
    tgt = Target.from_channel(cloud, 0)
    pose = look_at(tgt.centroid + [0.0, -0.5 * tgt.prior_radius, 0.0], tgt.centroid, up=(0.0, 0.0, 1.0))
    b = pose_cost(cloud, pose, INTR, 0, CostConfig(), alpha=1.0, target=tgt)
    assert b.upright == pytest.approx(-1.0, abs=1e-12)
    assert b.prior == pytest.approx(tgt.prior_radius - 1.0, abs=1e-12)
    assert b.total == pytest.approx(b.tce + b.tre - 1.0 + tgt.prior_radius - 1.0)


def test_prior_off_ignores_centroid():
    cloud = object_scene(seed=1)
    cfg = CostConfig(terms=("tce", "tre", "upright"))
    a = pose_cost(cloud, pose_facing(), INTR, 0, cfg, target=Target(np.zeros(3), 0.1, 0.3))
    b = pose_cost(cloud, pose_facing(), INTR, 0, cfg, target=Target(np.array([5.0, 1, 1]), 0.1, 0.3))
    assert a.total == b.total


def test_alpha_schedule():
    cfg = CostConfig(prior_weight=2.0, prior_decay=0.9)
    assert cfg.alpha(0) == 2.0 and cfg.alpha(3) == pytest.approx(2 * 0.9 ** 3)
    assert CostConfig(decay_prior=False).alpha(50) == 1.0


def test_config_validation():
    for bad in (dict(target_ratio=1.2), dict(prior_radius=-1), dict(prior_decay=1.0), dict(samples_per_interval=0),
                dict(mask_epsilon=0.0), dict(terms=("tce", "iou"))):
        with pytest.raises(ValueError):
            CostConfig(**bad)


@pytest.mark.parametrize("seed", range(3))
def test_pose_cost_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    cloud = object_scene(seed=seed, clutter=60)
    pose = pose_facing(bearing=rng.uniform(0, 6.28), distance=rng.uniform(1.0, 1.8)) + rng.normal(scale=0.04, size=6)
    cfg = CostConfig()
    tgt = Target.from_channel(cloud, 0, cfg)
    _, g = pose_cost(cloud, pose, INTR, 0, cfg, 0.7, tgt, gradient=True)
    fd = finite_difference_gradient(lambda p: pose_cost(cloud, p, INTR, 0, cfg, 0.7, tgt).total, pose)
    assert rel_err(g, fd) < 1e-3


# ---------------------------------------------------------------------------
# trajectory cost

def test_sample_times():
    ts, prompt = sample_times(3, 2)
    assert np.allclose(ts, (np.arange(6) + 0.5) / 6) and list(prompt) == [0, 0, 1, 1, 2, 2]


def test_constant_trajectory_equals_pose_cost():
    cloud = object_scene(seed=0)
    pose = pose_facing()
    model = TrajectoryModel(BasisSpec.waypoint(1), pose[:, None])
    cfg = CostConfig(samples_per_interval=5)
    tc = trajectory_cost(cloud, model, INTR, 1, cfg)
    assert tc.value == pytest.approx(pose_cost(cloud, pose, INTR, 0, cfg).total, abs=1e-12)
    cfg1 = CostConfig(samples_per_interval=1)
    rbf = init_weights(BasisSpec.rbf(3), [Target.from_channel(cloud, 0).centroid], [0.3])
    mid = rbf.weights @ np.exp(-0.5 * (0.5 - np.array(rbf.basis.centers)) ** 2 / rbf.basis.sigma ** 2)
    assert trajectory_cost(cloud, rbf, INTR, 1, cfg1).value == pytest.approx(pose_cost(cloud, mid, INTR, 0, cfg1).total)


def test_trajectory_weight_gradient_matches_fd():
    cloud = object_scene(seed=3, clutter=40)
    cfg = CostConfig(samples_per_interval=3)
    model = init_weights(BasisSpec.rbf(3, 0.4), [Target.from_channel(cloud, 0).centroid], [0.3], seed=1,
                         jitter=(0.03, 0.05))
    tc = trajectory_cost(cloud, model, INTR, 1, cfg, alpha=0.5, gradient=True)
    fd = finite_difference_gradient(
        lambda w: trajectory_cost(cloud, model.with_weights(w), INTR, 1, cfg, alpha=0.5).value, model.weights)
    assert tc.gradient.shape == (6, 3)
    assert rel_err(tc.gradient, fd) < 1e-3


def test_midpoint_rule_converges():
    cloud = object_scene(seed=2)
    model = init_weights(BasisSpec.rbf(2, 0.5), [Target.from_channel(cloud, 0).centroid], [0.3], seed=0,
                         jitter=(0.05, 0.1))
    J = [trajectory_cost(cloud, model, INTR, 1, CostConfig(samples_per_interval=s)).value for s in (4, 8, 16, 64)]
    assert abs(J[2] - J[3]) < abs(J[1] - J[3]) < abs(J[0] - J[3])


def test_trace_csv():
    b = CostBreakdown(0.1, 0.2, -0.9, 0.4, -0.2, 0.3, 0.5)
    lines = trace_csv([(0, b), (1, b)]).splitlines()
    assert lines[0] == "iteration,tce,tre,upright,prior,alpha,total"
    assert lines[1] == "0,0.1,0.2,-0.9,0.4,0.5,-0.2" and len(lines) == 3
