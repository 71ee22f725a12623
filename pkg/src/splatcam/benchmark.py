"""Synthetic tabletop benchmark: three queryable objects, occluding posts and floor clutter.

Embeddings live in an 8-dimensional space. Objects use the first three basis
vectors, occluders and clutter share the fourth (the background) and the
canonical phrases take the last four, so the relevancy score is
``e / (e + 1)`` on the queried object and 1/2 everywhere else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatcam.renderer.camera import CameraIntrinsics
from splatcam.scene import ObjectSpec, build_synthetic_scene
from splatcam.semantics import FilterConfig, QuerySet, ground_all
from splatcam.trajectory import default_view_direction

DIM = 8
OBJECT_GAUSSIANS = 80
OCCLUDER_GAUSSIANS = 30
CLUTTER = 300
LABELS = ("teapot", "mug", "vase")
CENTERS = ((-1.2, 0.0, 0.0), (0.0, 0.0, 0.0), (1.2, 0.0, 0.0))
COLORS = ((0.85, 0.25, 0.2), (0.2, 0.6, 0.85), (0.3, 0.75, 0.3))
EXTENT = 0.25


def basis_vector(i, dim=DIM):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


POST_OFFSET = 2.0
POST_EXTENT = (0.09, 0.09, 0.18)
STAKE_EXTENT = (0.05, 0.05, 0.22)
OCCLUDER_COLOR = (0.4, 0.35, 0.3)


def _occluder(center, extent):
    return ObjectSpec(tuple(center), extent, OCCLUDER_GAUSSIANS, basis_vector(3), OCCLUDER_COLOR, 0.95)


def benchmark_objects(occluders=True, post_offset=POST_OFFSET, stakes=0, seed=0):
    """Object specs plus occluders.

    With ``occluders`` a post sits on each object's default viewing ray,
    ``post_offset`` object radii from its center, and ``stakes`` thin
    uprights per object stand at random bearings 2.2-4 radii away.
    """
    specs = [ObjectSpec(c, EXTENT, OBJECT_GAUSSIANS, basis_vector(i), col, 0.9)
             for i, (c, col) in enumerate(zip(CENTERS, COLORS))]
    if occluders:
        d = default_view_direction()
        rng = np.random.default_rng([seed, 1])
        for c in CENTERS:
            specs.append(_occluder(np.asarray(c) + post_offset * EXTENT * d, POST_EXTENT))
            for _ in range(stakes):
                bearing = rng.uniform(0.0, 2.0 * np.pi)
                rad = rng.uniform(2.2, 4.0) * EXTENT
                base = np.asarray(c) + rad * np.array([np.cos(bearing), np.sin(bearing), 0.0])
                base[2] = STAKE_EXTENT[2] - EXTENT - 0.05
                specs.append(_occluder(base, STAKE_EXTENT))
    return specs


def benchmark_queries():
    return QuerySet(np.stack([basis_vector(i) for i in range(3)]),
                    np.stack([basis_vector(i) for i in range(4, 8)]), LABELS)


def filter_config(cloud_size, object_size=OBJECT_GAUSSIANS):
    """Percentile that keeps exactly one object's worth of Gaussians."""
    return FilterConfig(percentile=object_size / cloud_size, dbscan_min_pts=4)


@dataclass
class Benchmark:
    cloud: object             # grounded GaussianCloud
    intrinsics: CameraIntrinsics
    queries: QuerySet
    membership: list          # ground-truth index arrays per prompt

    @property
    def prompt_count(self):
        return len(self.queries)


def benchmark_scene(seed=0, occluders=True, clutter=CLUTTER, resolution=64, post_offset=POST_OFFSET, stakes=0):
    specs = benchmark_objects(occluders, post_offset, stakes, seed)
    raw = build_synthetic_scene(specs, clutter, seed=seed, background=basis_vector(3))
    queries = benchmark_queries()
    cloud = ground_all(raw, queries, filter_config(len(raw)))
    membership = [np.arange(i * OBJECT_GAUSSIANS, (i + 1) * OBJECT_GAUSSIANS) for i in range(3)]
    return Benchmark(cloud, CameraIntrinsics.default(resolution, resolution), queries, membership)
