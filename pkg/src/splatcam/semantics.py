"""Grounding text-query embeddings to per-Gaussian binary channels.

The pipeline for one query is: relevancy score for every Gaussian, keep the
top-percentile Gaussians, cluster their means with DBSCAN and flag the members
of the largest cluster.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splatcam.scene import write_atomic

NOISE = -1


class GroundingError(ValueError):
    pass


@dataclass(frozen=True)
class QuerySet:
    """Query embeddings (n, D) with labels, and canonical-phrase embeddings (k, D)."""

    queries: np.ndarray
    canonical: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.queries, dtype=float))
        c = np.atleast_2d(np.asarray(self.canonical, dtype=float))
        if len(q) < 1 or len(c) < 1:
            raise ValueError("need at least one query and one canonical embedding")
        if q.shape[1] != c.shape[1]:
            raise ValueError("query and canonical dimensions differ")
        for name, arr in (("query", q), ("canonical", c)):
            bad = np.abs(np.linalg.norm(arr, axis=1) - 1.0) > 1e-6
            if bad.any():
                raise ValueError(f"{name} embedding {int(np.argmax(bad))} is not unit norm")
        labels = tuple(self.labels) or tuple(f"query{i}" for i in range(len(q)))
        if len(labels) != len(q):
            raise ValueError("one label per query required")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "canonical", c)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.queries.shape[1]

    def __len__(self):
        return len(self.queries)


@dataclass(frozen=True)
class FilterConfig:
    """Percentile and DBSCAN settings. ``dbscan_eps=None`` picks twice the median nearest-neighbour distance."""

    percentile: float = 0.05
    dbscan_eps: float | None = None
    dbscan_min_pts: int = 4

    def __post_init__(self):
        if not 0.0 < self.percentile < 1.0:
            raise ValueError("percentile must lie in (0, 1)")
        if self.dbscan_eps is not None and self.dbscan_eps <= 0:
            raise ValueError("dbscan_eps must be positive")
        if self.dbscan_min_pts < 1:
            raise ValueError("dbscan_min_pts must be >= 1")


def relevancy_scores(embeddings, query, canonical):
    """Vectorized relevancy: min over canonical phrases of the pairwise softmax.

    ``exp(a) / (exp(a) + exp(b))`` is evaluated as ``1 / (1 + exp(b - a))``.
    """
    canonical = np.atleast_2d(np.asarray(canonical, dtype=float))
    if canonical.shape[0] == 0:
        raise ValueError("canonical embedding list is empty")
    emb = np.atleast_2d(np.asarray(embeddings, dtype=float))
    q_dot = emb @ np.asarray(query, dtype=float)
    c_dot = emb @ canonical.T
    return (1.0 / (1.0 + np.exp(c_dot - q_dot[:, None]))).min(axis=1)


def relevancy_score(gaussian_embedding, query, canonical):
    return float(relevancy_scores(np.asarray(gaussian_embedding)[None], query, canonical)[0])


def percentile_filter(scores, tau):
    """Indices of the ceil(tau * N) highest scores, ties going to the lower index."""
    scores = np.asarray(scores, dtype=float)
    # guard ceil against products like 0.1 * 30 = 3.0000000000000004
    k = max(1, math.ceil(round(tau * len(scores), 9)))
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def dbscan(points, eps, min_pts):
    """Label each point with a cluster id (0, 1, ...) or NOISE.

    A point is core when at least ``min_pts`` points, itself included, lie
    within distance ``eps``. Seeds are visited in index order, so a border
    point reachable from several clusters joins the first one that expands
    to it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neighbours = cKDTree(pts).query_ball_point(pts, r=eps)
    neighbours = [sorted(nb) for nb in neighbours]
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = deque(neighbours[i])
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster
            if visited[j]:
                continue
            visited[j] = True
            if core[j]:
                queue.extend(neighbours[j])
        cluster += 1
    return labels


def default_eps(points):
    """Twice the median nearest-neighbour distance."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        return 1.0
    d, _ = cKDTree(pts).query(pts, k=2)
    med = float(np.median(d[:, 1]))
    return 2.0 * med if med > 0 else 1e-6


@dataclass(frozen=True)
class GroundingResult:
    scores: np.ndarray
    selected: np.ndarray     # indices surviving the percentile filter
    labels: np.ndarray       # DBSCAN labels over ``selected``
    flagged: np.ndarray      # indices of the kept cluster
    eps: float


def ground_query(cloud, query, canonical, config=FilterConfig()):
    scores = relevancy_scores(cloud.embeddings, query, canonical)
    selected = percentile_filter(scores, config.percentile)
    pts = cloud.means[selected]
    eps = config.dbscan_eps if config.dbscan_eps is not None else default_eps(pts)
    labels = dbscan(pts, eps, config.dbscan_min_pts)
    clustered = labels[labels != NOISE]
    if clustered.size == 0:
        raise GroundingError("query grounded to nothing")
    # bincount + argmax: largest cluster, lowest id on ties
    keep = int(np.argmax(np.bincount(clustered)))
    return GroundingResult(scores, selected, labels, selected[labels == keep], eps)


def build_binary_channel(cloud, query_index, query_set, config=FilterConfig()):
    """New cloud whose channel ``query_index`` flags the Gaussians grounded to that query."""
    if cloud.embedding_dim != query_set.dim:
        raise ValueError(f"scene embeddings have dim {cloud.embedding_dim}, queries {query_set.dim}")
    res = ground_query(cloud, query_set.queries[query_index], query_set.canonical, config)
    flags = np.zeros(len(cloud), dtype=bool)
    flags[res.flagged] = True
    return cloud.with_channel(query_index, flags)


def ground_all(cloud, query_set, config=FilterConfig()):
    """Populate one channel per query, replacing any existing channels."""
    out = cloud.with_channels(np.zeros((len(cloud), len(query_set)), dtype=bool))
    for i in range(len(query_set)):
        out = build_binary_channel(out, i, query_set, config)
    return out


# ---------------------------------------------------------------------------
# query file

QUERY_MAGIC = "SPLATQUERY"


def dump_queries(query_set):
    lines = [f"{QUERY_MAGIC} v1 dim={query_set.dim} queries={len(query_set)} canon={len(query_set.canonical)}"]
    for label, vec in zip(query_set.labels, query_set.queries):
        lines.append(" ".join([label.replace(" ", "_")] + [repr(float(v)) for v in vec]))
    for vec in query_set.canonical:
        lines.append(" ".join(repr(float(v)) for v in vec))
    return ("\n".join(lines) + "\n").encode()


def parse_queries(data: bytes):
    lines = [ln for ln in data.decode("ascii").splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty query file")
    head = lines[0].split()
    if head[:2] != [QUERY_MAGIC, "v1"]:
        raise ValueError(f"line 1: expected '{QUERY_MAGIC} v1' header")
    try:
        fields = dict(tok.split("=", 1) for tok in head[2:])
        dim, n, k = int(fields["dim"]), int(fields["queries"]), int(fields["canon"])
    except (KeyError, ValueError):
        raise ValueError("line 1: header needs dim=, queries=, canon=") from None
    if len(lines) != 1 + n + k:
        raise ValueError(f"expected {n + k} vector lines, found {len(lines) - 1}")
    labels, queries, canon = [], [], []
    for i, ln in enumerate(lines[1:1 + n]):
        toks = ln.split()
        if len(toks) != dim + 1:
            raise ValueError(f"line {i + 2}: expected a label and {dim} values")
        labels.append(toks[0])
        queries.append([float(t) for t in toks[1:]])
    for i, ln in enumerate(lines[1 + n:]):
        toks = ln.split()
        if len(toks) != dim:
            raise ValueError(f"line {i + 2 + n}: expected {dim} values")
        canon.append([float(t) for t in toks])
    q = _unit_rows(np.array(queries).reshape(n, dim))
    c = _unit_rows(np.array(canon).reshape(k, dim))
    return QuerySet(q, c, tuple(labels))


def _unit_rows(a):
    norms = np.linalg.norm(a, axis=1)
    fix = np.abs(norms - 1.0) > 1e-12
    a[fix] /= norms[fix, None]
    return a


def load_queries(path):
    with open(path, "rb") as fh:
        return parse_queries(fh.read())


def save_queries(query_set, path):
    write_atomic(path, dump_queries(query_set))
