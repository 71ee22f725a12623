import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatcam.renderer import CameraIntrinsics
from splatcam.renderer.project import project_cloud
from splatcam.trajectory import (BasisSpec, TrajectoryModel, basis_eval, basis_matrix, dumps_document, eval_derivatives,
                                 eval_derivatives_many, eval_pose, eval_pose_vectors, init_weights, interval_centers,
                                 keyframe_times, load_trajectory, target_poses, trajectory_document)

SPECS = [BasisSpec.rbf(5), BasisSpec.rbf(12, 0.07), BasisSpec.waypoint(100), BasisSpec.waypoint(7),
         BasisSpec.polynomial(6), BasisSpec.polynomial(3)]
times = st.floats(0.0, 1.0)


def random_model(spec, seed):
    return TrajectoryModel(spec, np.random.default_rng(seed).normal(size=(6, spec.size)))


def stencil(f, t, h, order):
    """5-point central stencils for the first three derivatives."""
    fm2, fm1, f0, fp1, fp2 = (f(t + k * h) for k in (-2, -1, 0, 1, 2))
    if order == 1:
        return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)
    if order == 2:
        return (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * h * h)
    return (-fm2 + 2 * fm1 - 2 * fp1 + fp2) / (2 * h ** 3)


# ---------------------------------------------------------------------------
# bases

def test_rbf_peak_at_centers():
    spec = BasisSpec.rbf(8)
    for i, c in enumerate(spec.centers):
        psi = basis_eval(spec, c)
        assert psi[i] == 1.0 and psi.argmax() == i
    assert np.allclose(spec.centers, (np.arange(8) + 0.5) / 8)
    assert spec.sigma == pytest.approx(1 / 16)


def test_waypoint_examples():
    spec = BasisSpec.waypoint(100)
    assert np.array_equal(basis_eval(spec, 0.005), np.eye(100)[0])
    assert np.array_equal(basis_eval(spec, 1.0), np.eye(100)[99])  # right-closed at 1
    assert np.array_equal(basis_eval(spec, 0.01), np.eye(100)[1])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 120), times)
def test_waypoint_one_hot_partition(n, t):
    psi = basis_eval(BasisSpec.waypoint(n), t)
    assert psi.sum() == 1.0 and set(np.unique(psi)) <= {0.0, 1.0}
    j = int(psi.argmax())
    assert j / n <= t and (t < (j + 1) / n or (j == n - 1 and t == 1.0))


def test_polynomial_examples():
    assert np.array_equal(basis_eval(BasisSpec.polynomial(6), 0.0), [1, 0, 0, 0, 0, 0])
    assert np.allclose(basis_eval(BasisSpec.polynomial(4), 0.5), [1, 0.5, 0.25, 0.125])


def test_basis_errors():
    with pytest.raises(ValueError):
        basis_eval(BasisSpec.rbf(3), 1.2)
    with pytest.raises(ValueError):
        basis_eval(BasisSpec.rbf(3), -1e-9)
    with pytest.raises(ValueError):
        BasisSpec("spline", 3)
    with pytest.raises(ValueError):
        BasisSpec.rbf(3, sigma=-1.0)
    with pytest.raises(ValueError):
        BasisSpec("rbf", 3, None, (0.5, 0.2, 0.9))
    with pytest.raises(ValueError):
        eval_derivatives(random_model(BasisSpec.rbf(3), 0), 0.5, 4)


# ---------------------------------------------------------------------------
# evaluation

def test_zero_weights_identity_pose():
    p = eval_pose(TrajectoryModel(BasisSpec.rbf(4), np.zeros((6, 4))), 0.3)
    assert np.array_equal(p.rotvec, np.zeros(3)) and np.array_equal(p.translation, np.zeros(3))


def test_single_rbf_scales_constant():
    m = TrajectoryModel(BasisSpec.rbf(1), np.full((6, 1), 0.2))
    for t in (0.0, 0.3, 1.0):
        psi = np.exp(-0.5 * (t - 0.5) ** 2 / 0.5 ** 2)
        assert np.allclose(eval_pose_vectors(m, [t])[0], 0.2 * psi)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.size}")
def test_eval_matches_dot_product_oracle(spec):
    m = random_model(spec, 1)
    ts = np.random.default_rng(2).uniform(size=1000)
    got = eval_pose_vectors(m, ts)
    for k in range(0, 1000, 37):
        psi = basis_eval(spec, ts[k])
        assert np.allclose(got[k], [m.weights[j] @ psi for j in range(6)], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(SPECS), st.integers(0, 999), st.floats(-3, 3), st.floats(-3, 3), times)
def test_eval_linear_in_weights(spec, seed, a, b, t):
    m1, m2 = random_model(spec, seed), random_model(spec, seed + 1)
    mix = TrajectoryModel(spec, a * m1.weights + b * m2.weights)
    lhs = eval_pose_vectors(mix, [t])[0]
    rhs = a * eval_pose_vectors(m1, [t])[0] + b * eval_pose_vectors(m2, [t])[0]
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 999), st.floats(0, 0.999))
def test_waypoint_piecewise_constant(n, seed, u):
    m = random_model(BasisSpec.waypoint(n), seed)
    j = int(u * n)
    lo, hi = j / n, (j + 1) / n
    ts = lo + (hi - lo) * np.array([0.001, 0.25, 0.5, 0.75, 0.999])  # j / n itself can round into interval j - 1
    vals = eval_pose_vectors(m, ts)
    assert np.all(vals == vals[0])


# ---------------------------------------------------------------------------
# derivatives

def test_polynomial_first_derivative_example():
    m = TrajectoryModel(BasisSpec.polynomial(3), np.tile([1.0, 1.0, 1.0], (6, 1)))
    for t in (0.0, 0.25, 0.8):
        assert np.allclose(eval_derivatives(m, t, 1), 1 + 2 * t)


def test_rbf_derivative_zero_at_center():
    spec = BasisSpec.rbf(6)
    for i, c in enumerate(spec.centers):
        assert basis_matrix(spec, [c], 1)[0, i] == 0.0


@pytest.mark.parametrize("kind", ["rbf", "polynomial"])
@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("seed", range(4))
def test_derivatives_match_five_point_stencil(kind, order, seed):
    spec = BasisSpec.rbf(6) if kind == "rbf" else BasisSpec.polynomial(6)
    m = random_model(spec, seed)
    f = lambda t: eval_pose_vectors(m, [t])[0]
    h = {1: 1e-4, 2: 1e-3, 3: 5e-4}[order]
    for t in (0.2, 0.47, 0.8):
        exact = eval_derivatives(m, t, order)
        fd = stencil(f, t, h, order)
        assert np.linalg.norm(fd - exact) < 1e-4 * np.linalg.norm(exact)


@pytest.mark.parametrize("spec", [BasisSpec.rbf(8), BasisSpec.polynomial(6)], ids=["rbf", "poly"])
def test_second_differences_converge_quadratically(spec):
    m = random_model(spec, 5)
    f = lambda t: eval_pose_vectors(m, [t])[0]
    exact = eval_derivatives(m, 0.4, 2)
    errs = [np.linalg.norm((f(0.4 + h) - 2 * f(0.4) + f(0.4 - h)) / h ** 2 - exact) for h in (1e-2, 5e-3)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_waypoint_derivatives_on_fixed_grid():
    m = TrajectoryModel(BasisSpec.waypoint(2), np.tile([0.0, 1.0], (6, 1)))
    d = eval_derivatives_many(m, [0.1, 0.5, 0.9], 1)
    assert abs(d[0, 0]) < 1e-9 and abs(d[2, 0]) < 1e-9 and d[1, 0] > 100


# ---------------------------------------------------------------------------
# initialization

def test_single_prompt_init_centers_object():
    intr = CameraIntrinsics.default(32, 32)
    m = init_weights(BasisSpec.rbf(1), [[0.2, 0.1, 0.0]], [0.25], intr)
    p = eval_pose_vectors(m, [0.5])[0]
    proj = project_cloud(np.array([[0.2, 0.1, 0.0]]), np.eye(3)[None] * 1e-4, p, intr)
    assert np.allclose(proj.mean2d[0], [intr.cx, intr.cy], atol=1e-6)
    assert np.isclose(np.linalg.norm(eval_pose(m, 0.5).center - [0.2, 0.1, 0.0]), 4 * 0.25)


def test_init_deterministic_with_jitter():
    args = (BasisSpec.rbf(12), np.eye(3), [0.2, 0.3, 0.25])
    a = init_weights(*args, seed=4, jitter=(0.02, 0.05))
    b = init_weights(*args, seed=4, jitter=(0.02, 0.05))
    c = init_weights(*args, seed=5, jitter=(0.02, 0.05))
    assert np.array_equal(a.weights, b.weights) and not np.array_equal(a.weights, c.weights)


@pytest.mark.parametrize("spec", [BasisSpec.rbf(3), BasisSpec.rbf(12), BasisSpec.waypoint(100),
                                  BasisSpec.polynomial(6)], ids=["rbf3", "rbf12", "wp100", "poly6"])
def test_three_prompts_face_their_objects(spec):
    intr = CameraIntrinsics.default(64, 64)
    cents = np.array([[-1.2, 0, 0], [0, 0, 0], [1.2, 0, 0]])
    m = init_weights(spec, cents, [0.25] * 3, intr)
    for i, t in enumerate(interval_centers(3)):
        p = eval_pose_vectors(m, [t])[0]
        proj = project_cloud(cents[i:i + 1], np.eye(3)[None] * 1e-4, p, intr)
        angle = np.arctan(np.linalg.norm(proj.mean2d[0] - [intr.cx, intr.cy]) / intr.fx)
        assert angle < 1e-6


def test_singular_basis_rejected():
    with pytest.raises(np.linalg.LinAlgError):
        init_weights(BasisSpec.rbf(2), np.eye(3), [0.2] * 3)


def test_target_poses_unwrap_rotations():
    poses = target_poses(np.eye(3), [0.2] * 3)
    assert np.all(np.linalg.norm(np.diff(poses[:, :3], axis=0), axis=1) < np.pi)


# ---------------------------------------------------------------------------
# documents

def test_document_round_trip(tmp_path):
    m = random_model(BasisSpec.rbf(5, 0.1), 3)
    doc = trajectory_document(m, keyframes=4, extra={"seed": 3})
    path = tmp_path / "traj.json"
    path.write_bytes(dumps_document(doc))
    back, raw = load_trajectory(path)
    assert np.array_equal(back.weights, m.weights) and back.basis == m.basis
    assert raw["format"] == "splatcam-trajectory/1" and raw["seed"] == 3
    assert [k["t"] for k in raw["keyframes"]] == list(keyframe_times(4))
    assert json.loads(dumps_document(doc)) == raw
