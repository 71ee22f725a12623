"""Continuous-time camera trajectories as linear combinations of basis functions.

Each of the six pose entries ``[rx, ry, rz, x, y, z]`` is ``w_j . Psi(t)`` for
normalized time ``t`` in [0, 1]. Three bases are available:

* ``rbf`` - squared-exponential bumps centered at ``(i - 1/2) / N``;
* ``waypoint`` - indicators of the N equal sub-intervals (piecewise constant);
* ``polynomial`` - monomials ``t**0 .. t**(N-1)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from splatcam.renderer.camera import CameraPose, look_at, wrap_rotvec

RBF, WAYPOINT, POLYNOMIAL = "rbf", "waypoint", "polynomial"
KINDS = (RBF, WAYPOINT, POLYNOMIAL)
WAYPOINT_GRID = 512


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    size: int
    sigma: float | None = None
    centers: tuple = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("basis size must be >= 1")
        if self.kind == RBF:
            sigma = self.sigma if self.sigma is not None else 1.0 / (2 * self.size)
            if sigma <= 0:
                raise ValueError("sigma must be positive")
            object.__setattr__(self, "sigma", float(sigma))
        if self.kind in (RBF, WAYPOINT):
            centers = self.centers
            if centers is None:
                centers = (np.arange(self.size) + 0.5) / self.size
            centers = tuple(float(c) for c in centers)
            if len(centers) != self.size:
                raise ValueError("need one center per basis function")
            if any(b <= a for a, b in zip(centers, centers[1:])) or centers[0] < 0 or centers[-1] > 1:
                raise ValueError("centers must be strictly increasing in [0, 1]")
            object.__setattr__(self, "centers", centers)

    @classmethod
    def rbf(cls, size, sigma=None):
        return cls(RBF, size, sigma)

    @classmethod
    def waypoint(cls, size=100):
        return cls(WAYPOINT, size)

    @classmethod
    def polynomial(cls, size=6):
        return cls(POLYNOMIAL, size)

    def to_dict(self):
        return {"kind": self.kind, "size": self.size, "sigma": self.sigma,
                "centers": list(self.centers) if self.centers is not None else None}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["size"]), d.get("sigma"), d.get("centers"))


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)) or not np.all(np.isfinite(t)):
        raise ValueError("t must lie in [0, 1]")
    return t


def basis_matrix(spec, ts, order=0):
    """Basis values (or their ``order``-th time derivatives) at times ``ts``: shape (M, N).

    Waypoint derivatives are not available here (see ``eval_derivatives``).
    """
    ts = _check_times(np.atleast_1d(ts))
    n = spec.size
    if spec.kind == RBF:
        d = ts[:, None] - np.asarray(spec.centers)[None, :]
        s2 = spec.sigma ** 2
        psi = np.exp(-0.5 * d * d / s2)
        if order == 0:
            return psi
        if order == 1:
            return -d / s2 * psi
        if order == 2:
            return (d * d / s2 ** 2 - 1.0 / s2) * psi
        if order == 3:
            return (-d ** 3 / s2 ** 3 + 3.0 * d / s2 ** 2) * psi
        raise ValueError("derivative order must be <= 3")
    if spec.kind == POLYNOMIAL:
        if order > 3:
            raise ValueError("derivative order must be <= 3")
        powers = np.arange(n)
        coef = np.ones(n)
        for k in range(order):
            coef = coef * (powers - k)
        exps = np.maximum(powers - order, 0)
        return coef[None, :] * ts[:, None] ** exps[None, :]
    if order != 0:
        raise ValueError("waypoint basis has no analytic derivatives")
    idx = np.minimum(np.floor(ts * n).astype(int), n - 1)
    out = np.zeros((len(ts), n))
    out[np.arange(len(ts)), idx] = 1.0
    return out


def basis_eval(spec, t):
    """Psi(t) as an N-vector."""
    return basis_matrix(spec, [t])[0]


@dataclass(frozen=True, eq=False)
class TrajectoryModel:
    basis: BasisSpec
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(6, self.basis.size)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def with_weights(self, weights):
        return replace(self, weights=weights)

    def flat(self):
        return self.weights.ravel().copy()

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(BasisSpec.from_dict(d["basis"]), np.array(d["weights"], dtype=float))


def eval_pose_vectors(model, ts):
    """Pose 6-vectors at times ``ts``, shape (M, 6)."""
    return basis_matrix(model.basis, ts) @ model.weights.T


def eval_pose(model, t):
    return CameraPose.from_vector(eval_pose_vectors(model, [t])[0])


def _waypoint_derivatives(model, order):
    grid = np.linspace(0.0, 1.0, WAYPOINT_GRID)
    path = eval_pose_vectors(model, grid)
    for _ in range(order):
        path = np.gradient(path, 1.0 / (WAYPOINT_GRID - 1), axis=0)  # scalar spacing: constant paths give exact zeros
    return grid, path


def eval_derivatives_many(model, ts, order):
    """``order``-th time derivatives of the 6 pose entries at times ``ts``, shape (M, 6).

    Waypoint trajectories are differentiated by repeated central differences
    on a fixed 512-sample grid and linearly interpolated between samples.
    """
    if not 0 <= order <= 3:
        raise ValueError("derivative order must be in 0..3")
    ts = _check_times(np.atleast_1d(ts))
    if model.basis.kind != WAYPOINT or order == 0:
        return basis_matrix(model.basis, ts, order) @ model.weights.T
    grid, path = _waypoint_derivatives(model, order)
    return np.column_stack([np.interp(ts, grid, path[:, j]) for j in range(6)])


def eval_derivatives(model, t, order):
    return eval_derivatives_many(model, [t], order)[0]


def interval_centers(n):
    return (np.arange(n) + 0.5) / n


def _unwrap_rotvecs(rotvecs):
    """Pick, for each rotation, the equivalent rotation vector closest to its predecessor."""
    out = [np.asarray(rotvecs[0], dtype=float)]
    for r in rotvecs[1:]:
        r = np.asarray(r, dtype=float)
        theta = np.linalg.norm(r)
        if theta < 1e-12:
            out.append(r)
            continue
        axis = r / theta
        cands = [axis * (theta + 2 * np.pi * k) for k in (-1, 0, 1)]
        out.append(min(cands, key=lambda c: np.linalg.norm(c - out[-1])))
    return np.array(out)


def default_view_direction():
    d = np.array([1.0, -1.0, 0.6])
    return d / np.linalg.norm(d)


def target_poses(centroids, radii, offset_scale=4.0, direction=None):
    """Look-at poses, one per prompt, from ``offset_scale * radius`` along ``direction``."""
    direction = default_view_direction() if direction is None else np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    poses = []
    for c, r in zip(np.atleast_2d(centroids), np.atleast_1d(radii)):
        eye = np.asarray(c, dtype=float) + offset_scale * max(float(r), 1e-3) * direction
        poses.append(look_at(eye, c))
    poses = np.array(poses)
    poses[:, :3] = _unwrap_rotvecs(poses[:, :3])
    return poses


def fit_weights(spec, poses):
    """Weights interpolating ``poses[i]`` at the center of interval i and staying near it across the interval.

    Solves a least-squares fit to the piecewise-constant pose target on a dense
    grid subject to exact interpolation at the interval centers.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    n = len(poses)
    grid = (np.arange(256) + 0.5) / 256
    A = basis_matrix(spec, grid)
    y = poses[np.minimum((grid * n).astype(int), n - 1)]
    C = basis_matrix(spec, interval_centers(n))
    if np.linalg.matrix_rank(C) < n:
        raise np.linalg.LinAlgError("singular basis matrix: cannot interpolate every interval center")
    N = spec.size
    kkt = np.zeros((N + n, N + n))
    kkt[:N, :N] = 2.0 * A.T @ A
    kkt[:N, N:] = C.T
    kkt[N:, :N] = C
    rhs = np.vstack([2.0 * A.T @ y, poses])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:N].T


def init_weights(spec, centroids, radii, intrinsics=None, seed=0, jitter=(0.0, 0.0),
                 offset_scale=4.0, direction=None):
    """Warm-start model that looks at each prompt's object during its interval.

    ``jitter`` is (rotation sigma in radians, translation sigma in scene units)
    of Gaussian noise added to the fitted weights. ``intrinsics`` is accepted
    for API symmetry; the look-at construction puts the object on the optical
    axis, which maps to the principal point for any intrinsics.
    """
    poses = target_poses(centroids, radii, offset_scale, direction)
    w = fit_weights(spec, poses)
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=w.shape)
    w = w + noise * np.array([jitter[0]] * 3 + [jitter[1]] * 3)[:, None]
    return TrajectoryModel(spec, w)


# ---------------------------------------------------------------------------
# trajectory document

def keyframe_times(k):
    """``k`` evenly spaced keyframes at interval midpoints."""
    return (np.arange(k) + 0.5) / k


def trajectory_document(model, keyframes=9, extra=None):
    ts = keyframe_times(keyframes)
    poses = eval_pose_vectors(model, ts)
    doc = {
        "format": "splatcam-trajectory/1",
        "basis": model.basis.to_dict(),
        "weights": model.weights.tolist(),
        "keyframes": [{"t": float(t), "rotvec": wrap_rotvec(p[:3]).tolist(), "translation": p[3:].tolist()}
                      for t, p in zip(ts, poses)],
    }
    if extra:
        doc.update(extra)
    return doc


def dumps_document(doc):
    return json.dumps(doc, indent=1, sort_keys=True).encode() + b"\n"


def load_trajectory(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "basis" not in doc or "weights" not in doc:
        raise ValueError(f"{path}: not a trajectory document")
    return TrajectoryModel.from_dict(doc), doc
