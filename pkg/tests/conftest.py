import numpy as np
import pytest

from splatcam.renderer.camera import CameraIntrinsics, look_at
from splatcam.scene import GaussianCloud, ObjectSpec, build_synthetic_scene


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_cloud(rng, n, dim=4, prompts=0, spread=1.0):
    """Unstructured cloud with valid fields; channel k flags a random third of the Gaussians."""
    emb = rng.normal(size=(n, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    channels = rng.uniform(size=(n, prompts)) < 0.33
    if prompts:
        channels[0, :] = True
    return GaussianCloud(rng.normal(scale=spread, size=(n, 3)), rng.uniform(0.03, 0.2, size=(n, 3)),
                         random_quats(rng, n), rng.uniform(0.1, 0.95, n), rng.uniform(size=(n, 3)), emb, channels)


def object_scene(seed=0, count=60, clutter=0, dim=4):
    """One object at the origin, flagged in channel 0."""
    e = np.eye(dim)
    cloud = build_synthetic_scene([ObjectSpec((0.0, 0.0, 0.0), 0.3, count, e[0])], clutter, seed=seed)
    flags = np.zeros(len(cloud), dtype=bool)
    flags[:count] = True
    return cloud.with_channel(0, flags)


def pose_facing(target=(0.0, 0.0, 0.0), distance=1.5, bearing=-0.7, elevation=0.4):
    d = np.array([np.cos(bearing) * np.cos(elevation), np.sin(bearing) * np.cos(elevation), np.sin(elevation)])
    target = np.asarray(target, dtype=float)
    return look_at(target + distance * d, target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intr32():
    return CameraIntrinsics.default(32, 32)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
