"""Gaussian scene data model, scene file I/O and synthetic scene construction."""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from splatcam.renderer.camera import CameraIntrinsics

QUAT_TOL = 1e-6
UNIT_TOL = 1e-6
RENORM_TOL = 1e-3


class SceneFormatError(ValueError):
    """Malformed scene file. Carries the 1-based line (text) or byte offset (binary)."""

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.offset = offset


class SceneValidationError(ValueError):
    def __init__(self, message, index=None):
        super().__init__(f"Gaussian {index}: {message}" if index is not None else message)
        self.index = index


def quat_to_matrix(q):
    """Rotation matrices for unit quaternions ``(w, x, y, z)``; accepts shape (4,) or (N, 4)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def covariance_from_factors(scales, quats):
    """Sigma = R S S^T R^T for each Gaussian, shape (N, 3, 3)."""
    R = quat_to_matrix(quats)
    M = R * np.asarray(scales, dtype=float)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov_scale: np.ndarray
    cov_rotation: np.ndarray
    opacity: float
    color: np.ndarray
    embedding: np.ndarray
    channels: np.ndarray

    @property
    def covariance(self):
        return covariance_from_factors(self.cov_scale, self.cov_rotation)


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Structure-of-arrays collection of anisotropic 3D Gaussians.

    Attributes:
        means: (N, 3) world positions.
        scales: (N, 3) positive per-axis standard deviations.
        quats: (N, 4) unit quaternions (w, x, y, z).
        opacities: (N,) values in [0, 1].
        colors: (N, 3) RGB in [0, 1].
        embeddings: (N, D) unit-norm semantic features.
        channels: (N, n) boolean per-prompt membership flags.
    """

    means: np.ndarray
    scales: np.ndarray
    quats: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    embeddings: np.ndarray
    channels: np.ndarray = field(default=None)

    def __post_init__(self):
        n_g = len(np.asarray(self.means).reshape(-1, 3))
        as_f = lambda a, shape: np.ascontiguousarray(np.asarray(a, dtype=float).reshape(shape))
        object.__setattr__(self, "means", as_f(self.means, (n_g, 3)))
        object.__setattr__(self, "scales", as_f(self.scales, (n_g, 3)))
        object.__setattr__(self, "quats", as_f(self.quats, (n_g, 4)))
        object.__setattr__(self, "opacities", as_f(self.opacities, (n_g,)))
        object.__setattr__(self, "colors", as_f(self.colors, (n_g, 3)))
        emb = np.asarray(self.embeddings, dtype=float)
        emb = emb.reshape(n_g, emb.shape[-1]) if emb.ndim == 2 else emb.reshape(n_g, -1)
        object.__setattr__(self, "embeddings", np.ascontiguousarray(emb))
        ch = self.channels
        if ch is None:
            ch = np.zeros((n_g, 0), dtype=bool)
        else:
            ch = np.asarray(ch).astype(bool)
            ch = ch.reshape(n_g, ch.shape[-1]) if ch.ndim == 2 else ch.reshape(n_g, -1)
        object.__setattr__(self, "channels", np.ascontiguousarray(ch))
        for arr in (self.means, self.scales, self.quats, self.opacities, self.colors, self.embeddings, self.channels):
            arr.setflags(write=False)

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i):
        return Gaussian(self.means[i], self.scales[i], self.quats[i], float(self.opacities[i]),
                        self.colors[i], self.embeddings[i], self.channels[i])

    @property
    def gaussians(self):
        return [self[i] for i in range(len(self))]

    @property
    def embedding_dim(self):
        return self.embeddings.shape[1]

    @property
    def prompt_count(self):
        return self.channels.shape[1]

    @property
    def covariances(self):
        return covariance_from_factors(self.scales, self.quats)

    def channel_populated(self, i):
        return 0 <= i < self.prompt_count and bool(self.channels[:, i].any())

    def with_channels(self, channels):
        return replace(self, channels=np.asarray(channels, dtype=bool))

    def with_channel(self, index, flags):
        """New cloud with channel ``index`` set to ``flags``; grows the channel block if needed."""
        n = max(self.prompt_count, index + 1)
        ch = np.zeros((len(self), n), dtype=bool)
        ch[:, :self.prompt_count] = self.channels
        ch[:, index] = np.asarray(flags, dtype=bool)
        return self.with_channels(ch)

    def subset(self, mask):
        mask = np.asarray(mask)
        return GaussianCloud(self.means[mask], self.scales[mask], self.quats[mask], self.opacities[mask],
                             self.colors[mask], self.embeddings[mask], self.channels[mask])

    def validate(self):
        """Check every invariant; raises SceneValidationError naming the first offending Gaussian."""
        for name in ("means", "scales", "quats", "opacities", "colors", "embeddings"):
            a = getattr(self, name)
            bad = ~np.isfinite(a).reshape(len(self), int(np.prod(a.shape[1:]))).all(axis=1)
            if bad.any():
                raise SceneValidationError(f"non-finite {name}", int(np.argmax(bad)))
        checks = [
            ((self.scales <= 0).any(axis=1), "cov_scale components must be positive"),
            (np.abs(np.linalg.norm(self.quats, axis=1) - 1.0) > QUAT_TOL, "quaternion is not unit norm"),
            ((self.opacities < 0) | (self.opacities > 1), "opacity outside [0, 1]"),
            (((self.colors < 0) | (self.colors > 1)).any(axis=1), "color outside [0, 1]"),
        ]
        if self.embedding_dim:
            checks.append((np.abs(np.linalg.norm(self.embeddings, axis=1) - 1.0) > UNIT_TOL,
                           "embedding is not unit norm"))
        for bad, msg in checks:
            if bad.any():
                raise SceneValidationError(msg, int(np.argmax(bad)))
        return self

    def equals(self, other):
        """Exact equality of every numeric field."""
        return all(np.array_equal(getattr(self, k), getattr(other, k)) and
                   getattr(self, k).shape == getattr(other, k).shape
                   for k in ("means", "scales", "quats", "opacities", "colors", "embeddings", "channels"))


def empty_cloud(embedding_dim, prompt_count=0):
    return GaussianCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                         np.zeros((0, 3)), np.zeros((0, embedding_dim)), np.zeros((0, prompt_count), dtype=bool))


# ---------------------------------------------------------------------------
# scene file format

MAGIC = "SPLATSCENE"


def _record_width(dim, prompts):
    return 3 + 3 + 4 + 1 + 3 + dim + prompts


def _pack_records(cloud):
    return np.hstack([cloud.means, cloud.scales, cloud.quats, cloud.opacities[:, None], cloud.colors,
                      cloud.embeddings, cloud.channels.astype(float)])


def _unpack_records(rec, dim, prompts):
    cols = np.cumsum([0, 3, 3, 4, 1, 3, dim, prompts])
    parts = [rec[:, a:b] for a, b in zip(cols[:-1], cols[1:])]
    return GaussianCloud(parts[0], parts[1], parts[2], parts[3][:, 0], parts[4], parts[5], parts[6] > 0.5)


def _header(cloud, intrinsics, fmt):
    cam = ",".join(repr(float(v)) if i > 1 else str(int(v)) for i, v in enumerate(intrinsics.as_tuple()))
    return (f"{MAGIC} v1 count={len(cloud)} dim={cloud.embedding_dim} prompts={cloud.prompt_count} "
            f"format={fmt} camera={cam}\n")


def write_atomic(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_scene(cloud, intrinsics, fmt="text"):
    """Serialize to bytes. Text output uses shortest round-trip float formatting."""
    if fmt not in ("text", "binary"):
        raise ValueError(f"unknown scene format {fmt!r}")
    head = _header(cloud, intrinsics, fmt).encode()
    rec = _pack_records(cloud)
    if fmt == "binary":
        return head + rec.astype("<f4").tobytes()
    buf = io.StringIO()
    n_float = rec.shape[1] - cloud.prompt_count
    for row in rec:
        vals = [repr(float(v)) for v in row[:n_float]] + [str(int(v)) for v in row[n_float:]]
        buf.write(" ".join(vals) + "\n")
    return head + buf.getvalue().encode()


def save_scene(cloud, intrinsics, path, fmt="text"):
    cloud.validate()
    write_atomic(path, dump_scene(cloud, intrinsics, fmt))


def _parse_header(line):
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != MAGIC or tokens[1] != "v1":
        raise SceneFormatError(f"expected '{MAGIC} v1' header", line=1)
    fields = {}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise SceneFormatError(f"bad header field {tok!r}", line=1)
        k, v = tok.split("=", 1)
        fields[k] = v
    try:
        count, dim, prompts = int(fields["count"]), int(fields["dim"]), int(fields["prompts"])
    except (KeyError, ValueError) as exc:
        raise SceneFormatError(f"missing or invalid count/dim/prompts: {exc}", line=1) from None
    fmt = fields.get("format", "text")
    if fmt not in ("text", "binary"):
        raise SceneFormatError(f"unknown format {fmt!r}", line=1)
    if "camera" in fields:
        try:
            vals = fields["camera"].split(",")
            w, h = int(vals[0]), int(vals[1])
            fx, fy, cx, cy = (float(v) for v in vals[2:6])
            intr = CameraIntrinsics(w, h, fx, fy, cx, cy)
        except (ValueError, IndexError) as exc:
            raise SceneFormatError(f"invalid camera field: {exc}", line=1) from None
    else:
        intr = CameraIntrinsics.default()
    return count, dim, prompts, fmt, intr


def parse_scene(data: bytes):
    """Parse scene bytes into (cloud, intrinsics); validates and renormalizes embeddings."""
    nl = data.find(b"\n")
    if nl < 0:
        raise SceneFormatError("missing header line", line=1)
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError:
        raise SceneFormatError("header is not ASCII", line=1) from None
    count, dim, prompts, fmt, intr = _parse_header(header)
    width = _record_width(dim, prompts)
    body = data[nl + 1:]
    if fmt == "binary":
        expected = count * width * 4
        if len(body) != expected:
            raise SceneFormatError(f"expected {expected} payload bytes, found {len(body)}",
                                   offset=nl + 1 + min(len(body), expected))
        rec = np.frombuffer(body, dtype="<f4").astype(float).reshape(count, width)
    else:
        lines = body.decode("ascii", errors="replace").splitlines()
        while lines and not lines[-1].strip():
            lines.pop()
        if len(lines) != count:
            raise SceneFormatError(f"expected {count} records, found {len(lines)}", line=2 + min(len(lines), count))
        rec = np.empty((count, width))
        for i, ln in enumerate(lines):
            toks = ln.split()
            if len(toks) != width:
                raise SceneFormatError(f"expected {width} values, found {len(toks)}", line=i + 2)
            try:
                rec[i] = [float(t) for t in toks]
            except ValueError as exc:
                raise SceneFormatError(str(exc), line=i + 2) from None
    cloud = _unpack_records(rec, dim, prompts)
    return _normalize_embeddings(cloud).validate(), intr


def _normalize_embeddings(cloud):
    if not len(cloud) or not cloud.embedding_dim:
        return cloud
    norms = np.linalg.norm(cloud.embeddings, axis=1)
    off = np.abs(norms - 1.0)
    if (off > RENORM_TOL).any():
        raise SceneValidationError("embedding norm too far from 1 to renormalize", int(np.argmax(off > RENORM_TOL)))
    # rows that already pass the unit check stay untouched so save/load is bit exact
    fix = off > UNIT_TOL
    if not fix.any():
        return cloud
    emb = cloud.embeddings.copy()
    emb[fix] /= norms[fix, None]
    return replace(cloud, embeddings=emb)


def load_scene(path):
    with open(path, "rb") as fh:
        return parse_scene(fh.read())


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class ObjectSpec:
    """A blob of Gaussians sampled inside an ellipsoid with semi-axes ``extent``."""

    center: Sequence[float]
    extent: float | Sequence[float]
    gaussian_count: int
    embedding: Sequence[float]
    color: Sequence[float] = (0.8, 0.3, 0.2)
    opacity: float = 0.9


def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def background_embedding(embeddings, dim, seed=0):
    """A unit vector orthogonal to every embedding in ``embeddings``."""
    basis = np.asarray(embeddings, dtype=float).reshape(-1, dim)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    if len(basis):
        q, _ = np.linalg.qr(basis.T)
        rank = np.linalg.matrix_rank(basis)
        q = q[:, :rank]
        v = v - q @ (q.T @ v)
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        raise ValueError("no direction left for a background embedding")
    return v / norm


def _ball_points(m, rng):
    """``m`` points evenly filling the unit ball (scrambled Halton, volume-preserving map)."""
    u = qmc.Halton(3, seed=rng).random(m) if m else np.zeros((0, 3))
    r = u[:, :1] ** (1.0 / 3.0)
    z = 2.0 * u[:, 1] - 1.0
    phi = 2.0 * np.pi * u[:, 2]
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return r * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def build_synthetic_scene(objects, clutter_count=0, seed=0, background=None, clutter_color=(0.55, 0.5, 0.45)):
    """Sample a cloud with one Gaussian blob per object plus floor clutter.

    Object Gaussians evenly fill each object's ellipsoid (scrambled Halton
    samples) with axis scales ``extent / gaussian_count ** (1/3)``. Clutter forms a thin
    layer below the lowest object and carries ``background`` as embedding
    (a vector orthogonal to all object embeddings when not given).
    """
    objects = list(objects)
    if not objects:
        raise ValueError("at least one object is required")
    rng = np.random.default_rng(seed)
    dim = len(objects[0].embedding)
    parts = []
    for k, obj in enumerate(objects):
        ext = np.broadcast_to(np.asarray(obj.extent, dtype=float), (3,))
        emb = np.asarray(obj.embedding, dtype=float)
        if (ext <= 0).any():
            raise ValueError(f"object {k}: extent must be positive")
        if emb.shape != (dim,) or abs(np.linalg.norm(emb) - 1.0) > UNIT_TOL:
            raise ValueError(f"object {k}: embedding must be a unit {dim}-vector")
        m = int(obj.gaussian_count)
        means = np.asarray(obj.center, dtype=float) + _ball_points(m, rng) * ext
        scales = np.tile(ext / max(m, 1) ** (1.0 / 3.0), (m, 1)) * rng.uniform(0.8, 1.2, size=(m, 3))
        colors = np.clip(np.asarray(obj.color, dtype=float) + rng.normal(scale=0.03, size=(m, 3)), 0.0, 1.0)
        opac = np.clip(obj.opacity + rng.normal(scale=0.03, size=m), 0.05, 0.98)
        parts.append((means, scales, _random_quats(rng, m), opac, colors, np.tile(emb, (m, 1))))
    if clutter_count:
        if background is None:
            background = background_embedding([o.embedding for o in objects], dim, seed=seed)
        centers = np.array([o.center for o in objects], dtype=float)
        exts = np.array([np.broadcast_to(np.asarray(o.extent, dtype=float), (3,)) for o in objects])
        pad = 2.0 * exts.max()
        lo = (centers - exts).min(axis=0) - pad
        hi = (centers + exts).max(axis=0) + pad
        m = int(clutter_count)
        means = np.column_stack([rng.uniform(lo[0], hi[0], m), rng.uniform(lo[1], hi[1], m),
                                 np.full(m, (centers - exts)[:, 2].min()) - 0.1 * pad + rng.normal(scale=0.01 * pad, size=m)])
        cell = np.sqrt((hi[0] - lo[0]) * (hi[1] - lo[1]) / m)
        scales = np.column_stack([np.full((m, 2), 0.5 * cell), np.full(m, 0.05 * cell)]) * rng.uniform(0.8, 1.2, size=(m, 3))
        colors = np.clip(np.asarray(clutter_color) + rng.normal(scale=0.05, size=(m, 3)), 0.0, 1.0)
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
        parts.append((means, scales, quats, np.full(m, 0.8), colors, np.tile(background, (m, 1))))
    cols = list(zip(*parts))
    return GaussianCloud(*(np.concatenate(c) for c in cols)).validate()


def object_centroid(cloud, channel_index):
    """Opacity-weighted centroid of the Gaussians flagged in a channel and their bounding radius."""
    if not cloud.channel_populated(channel_index):
        raise ValueError("no Gaussians match prompt")
    flags = cloud.channels[:, channel_index]
    means = cloud.means[flags]
    w = cloud.opacities[flags]
    if w.sum() <= 0:
        centroid = means.mean(axis=0)
    else:
        centroid = (w[:, None] * means).sum(axis=0) / w.sum()
    radius = float(np.linalg.norm(means - centroid, axis=1).max())
    return centroid, radius
