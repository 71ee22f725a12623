"""Command-line entry point: ``splatcam synth | ground | optimize | eval | render``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
Every output file is written atomically and depends only on the inputs and ``--seed``.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from splatcam.benchmark import benchmark_objects, benchmark_queries, filter_config as benchmark_filter
from splatcam.benchmark import CLUTTER, basis_vector
from splatcam.costs import TERMS, CostConfig, Target, facing_alignment, trace_csv
from splatcam.metrics import evaluate_pose, evaluate_trajectory, report_csv, report_table
from splatcam.optimize import (AdamConfig, NumericalError, SgldConfig, optimize_pose, optimize_trajectory,
                               random_poses_around, sgld_poses)
from splatcam.renderer import Channel, render_channel
from splatcam.renderer.camera import CameraIntrinsics, wrap_rotvec
from splatcam.renderer.images import encode_pgm, encode_ppm, frame_name
from splatcam.scene import (ObjectSpec, SceneFormatError, SceneValidationError, build_synthetic_scene,
                            load_scene, object_centroid, save_scene, write_atomic)
from splatcam.semantics import FilterConfig, GroundingError, build_binary_channel, load_queries, save_queries
from splatcam.trajectory import (KINDS, RBF, BasisSpec, dumps_document, eval_pose_vectors,
                                 init_weights, keyframe_times, load_trajectory, target_poses,
                                 trajectory_document)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    """Settings read from the ``--config`` key=value file. Zero sizes and counts mean "use the default"."""

    prompts: str = ""                 # comma-separated channel order for trajectories; empty = all
    prompt: int = 0                   # channel for pose and sgld modes
    basis: str = RBF
    basis_size: int = 0               # 0: 4 per prompt (rbf), 100 (waypoint), 6 (polynomial)
    sigma: float = 0.0                # 0: 1 / (2 N)
    target_ratio: float = 0.25
    prior_radius: float = 0.0         # 0: 3x the object radius
    prior_weight: float = 1.0
    prior_decay: float = 0.99
    samples_per_interval: int = 8
    mask_epsilon: float = 0.0         # 0: 1e-6 * H * W
    terms: str = ",".join(TERMS)
    iterations: int = 0               # 0: 400 (pose), 200 (trajectory, sgld)
    learning_rate: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rotation_lr: float = 0.01
    translation_lr: float = 0.05
    sgld_step: float = 1e-2
    sgld_temperature: float = -1.0    # negative: 1e-4 * |initial cost|
    sgld_batch: int = 20
    sgld_aim_jitter: float = 0.3      # std of the random look-at offset of the initial poses
    init_offset: float = 4.0          # look-at distance in object radii
    init_jitter_rotation: float = 0.0
    init_jitter_translation: float = 0.0
    resolution: int = 64
    render_resolution: int = 128
    keyframes: int = 9
    percentile: float = 0.05
    dbscan_eps: float = 0.0           # 0: 2x median nearest-neighbor distance
    dbscan_min_pts: int = 4
    scene_format: str = "text"

    def __post_init__(self):
        if self.basis not in KINDS:
            raise InputError(f"basis must be one of {', '.join(KINDS)}")
        if self.scene_format not in ("text", "binary"):
            raise InputError("scene_format must be text or binary")
        if min(self.resolution, self.render_resolution) < 8 or self.keyframes < 1 or self.sgld_batch < 1:
            raise InputError("resolution >= 8, keyframes >= 1 and sgld_batch >= 1 required")

    @classmethod
    def parse(cls, text):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise InputError(f"config: {exc}") from None
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in parser["run"].items():
            if key not in types:
                raise InputError(f"config: unknown key {key!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            try:
                values[key] = conv(raw.strip())
            except ValueError:
                raise InputError(f"config: bad value for {key}: {raw!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.parse(fh.read())

    def cost_config(self):
        terms = tuple(t.strip() for t in self.terms.split(",") if t.strip())
        try:
            return CostConfig(self.target_ratio, self.prior_radius or None, self.prior_weight, self.prior_decay,
                              self.samples_per_interval, self.mask_epsilon or None, terms)
        except ValueError as exc:
            raise InputError(f"config: {exc}") from None

    def adam_config(self, default_iterations):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.adam_eps,
                          self.iterations or default_iterations, self.rotation_lr, self.translation_lr)

    def sgld_config(self, seed):
        temp = None if self.sgld_temperature < 0 else self.sgld_temperature
        return SgldConfig(self.sgld_step, temp, self.iterations or 200, seed)

    def filter_config(self):
        return FilterConfig(self.percentile, self.dbscan_eps or None, self.dbscan_min_pts)

    def basis_spec(self, n):
        size = self.basis_size or {"rbf": 4 * n, "waypoint": 100, "polynomial": 6}[self.basis]
        return BasisSpec(self.basis, size, (self.sigma or None) if self.basis == RBF else None)

    def prompt_order(self, available):
        if not self.prompts.strip():
            return list(range(available))
        try:
            order = [int(p) for p in self.prompts.split(",")]
        except ValueError:
            raise InputError(f"config: bad prompt list {self.prompts!r}") from None
        bad = [p for p in order if not 0 <= p < available]
        if bad:
            raise InputError(f"prompt index {bad[0]} out of range (scene has {available} channels)")
        return order


# ---------------------------------------------------------------------------
# synthetic scene spec

def parse_scene_spec(text):
    """Parse a scene spec: ``dim``, ``clutter``, ``camera``, ``background`` and ``object`` lines.

    Example::

        dim 4
        clutter 100
        camera 64 64
        object center=0,0,0 extent=0.3 count=50 embedding=1,0,0,0 color=0.8,0.3,0.2 opacity=0.9

    ``extent`` takes one or three numbers. Returns (objects, clutter, background, intrinsics).
    """
    objects, clutter, background, dim = [], 0, None, None
    intr = CameraIntrinsics.default()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "dim":
                dim = int(rest[0])
            elif key == "clutter":
                clutter = int(rest[0])
            elif key == "camera":
                intr = CameraIntrinsics.default(int(rest[0]), int(rest[1]))
            elif key == "background":
                background = np.array([float(v) for v in rest])
            elif key == "object":
                kv = dict(tok.split("=", 1) for tok in rest)
                vec = lambda s: tuple(float(v) for v in s.split(","))
                ext = vec(kv["extent"])
                objects.append(ObjectSpec(vec(kv["center"]), ext[0] if len(ext) == 1 else ext, int(kv["count"]),
                                          np.array(vec(kv["embedding"])), vec(kv.get("color", "0.8,0.3,0.2")),
                                          float(kv.get("opacity", 0.9))))
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, KeyError, IndexError) as exc:
            raise InputError(f"scene spec line {lineno}: {exc}") from None
    if not objects:
        raise InputError("scene spec defines no objects")
    if dim is not None and any(len(o.embedding) != dim for o in objects):
        raise InputError(f"scene spec: object embeddings must have dim {dim}")
    return objects, clutter, background, intr


# ---------------------------------------------------------------------------
# helpers

def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _check_channels(cloud, indices, path):
    if not indices:
        raise InputError(f"{path}: scene has no prompt channels (run 'splatcam ground' first)")
    for i in indices:
        if i >= cloud.prompt_count or not cloud.channel_populated(i):
            raise InputError(f"prompt {i}: channel missing or empty in {path} (run 'splatcam ground' first)")


def _reorder(cloud, order):
    return cloud.with_channels(cloud.channels[:, order])


def _frames(cloud, poses, times, intr, out_dir, channels):
    """Write mask and color frames for each pose; channel k is the mask shown in frame k."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for k, (p, t) in enumerate(zip(poses, times)):
        mask = render_channel(cloud, p, intr, Channel.mask(channels[k])).pixels
        color = render_channel(cloud, p, intr, Channel.COLOR).pixels
        for ext, data in (("pgm", encode_pgm(mask)), ("ppm", encode_ppm(color))):
            name = frame_name(k, float(t), ext)
            write_atomic(os.path.join(out_dir, name), data)
            names.append(name)
    return names


def _keyframe_channels(times, n):
    return [min(int(t * n), n - 1) for t in times]


def _json(path, doc):
    write_atomic(path, dumps_document(doc))


def _pose_record(vec):
    vec = np.asarray(vec, dtype=float)
    return {"rotvec": wrap_rotvec(vec[:3]).tolist(), "translation": vec[3:].tolist(), "params": vec.tolist()}


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    _need(args, "out")
    if args.benchmark:
        objects, clutter, background = benchmark_objects(), CLUTTER, basis_vector(3)
        intr = CameraIntrinsics.default(cfg.resolution, cfg.resolution)
    else:
        _need(args, "spec")
        with open(args.spec) as fh:
            objects, clutter, background, intr = parse_scene_spec(fh.read())
    try:
        cloud = build_synthetic_scene(objects, clutter, seed=args.seed, background=background)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    save_scene(cloud, intr, args.out, cfg.scene_format)
    if args.benchmark and args.queries:
        save_queries(benchmark_queries(), args.queries)
    print(f"wrote {len(cloud)} Gaussians to {args.out}")


def cmd_ground(args, cfg):
    _need(args, "scene", "queries", "out")
    cloud, intr = load_scene(args.scene)
    queries = load_queries(args.queries)
    if cloud.embedding_dim != queries.dim:
        raise InputError(f"scene embeddings have dim {cloud.embedding_dim}, queries {queries.dim}")
    fcfg = benchmark_filter(len(cloud)) if args.benchmark else cfg.filter_config()
    out = cloud.with_channels(np.zeros((len(cloud), len(queries)), dtype=bool))
    lines = []
    for i in range(len(queries)):
        try:
            out = build_binary_channel(out, i, queries, fcfg)
        except GroundingError as exc:
            raise InputError(f"prompt {i} ({queries.labels[i]}): {exc}") from None
        c, r = object_centroid(out, i)
        lines.append(f"prompt {i} {queries.labels[i]}: flagged={int(out.channels[:, i].sum())} "
                     f"centroid={c[0]:.4f},{c[1]:.4f},{c[2]:.4f} radius={r:.4f}")
    save_scene(out, intr, args.out, cfg.scene_format)
    print("\n".join(lines))


def cmd_optimize(args, cfg):
    _need(args, "scene", "out")
    os.makedirs(args.out, exist_ok=True)
    mode = args.mode
    ccfg = cfg.cost_config()
    cloud, intr = load_scene(args.scene)
    order = cfg.prompt_order(cloud.prompt_count) if mode == "trajectory" else [cfg.prompt]
    _check_channels(cloud, order, args.scene)
    cloud = _reorder(cloud, order)
    work = intr.resized(cfg.resolution, cfg.resolution)
    final = intr.resized(cfg.render_resolution, cfg.render_resolution)
    n = len(order)
    targets = [Target.from_channel(cloud, i, ccfg) for i in range(n)]
    meta = {"mode": mode, "prompts": order, "seed": args.seed, "resolution": cfg.resolution}

    if mode == "trajectory":
        spec = cfg.basis_spec(n)
        model = init_weights(spec, [t.centroid for t in targets], [t.radius for t in targets], work, args.seed,
                             (cfg.init_jitter_rotation, cfg.init_jitter_translation), cfg.init_offset)
        model, run = optimize_trajectory(cloud, work, model, n, ccfg, cfg.adam_config(200), targets=targets)
        meta["final_cost"] = float(run.values[-1]) if len(run.values) else None
        _json(os.path.join(args.out, "trajectory.json"), trajectory_document(model, cfg.keyframes, meta))
        write_atomic(os.path.join(args.out, "trace.csv"), trace_csv(run.trace).encode())
        ts = keyframe_times(cfg.keyframes)
        _frames(cloud, eval_pose_vectors(model, ts), ts, final, os.path.join(args.out, "frames"),
                _keyframe_channels(ts, n))
        print(f"trajectory: {len(run.values)} iterations, final cost {meta['final_cost']}")
    elif mode == "pose":
        init = target_poses([targets[0].centroid], [targets[0].radius], cfg.init_offset)[0]
        rng = np.random.default_rng(args.seed)
        init = init + rng.normal(size=6) * np.array([cfg.init_jitter_rotation] * 3 + [cfg.init_jitter_translation] * 3)
        run = optimize_pose(cloud, work, 0, init, ccfg, cfg.adam_config(400), target=targets[0])
        tce, tre, ov = evaluate_pose(cloud, run.params, work, 0, ccfg)
        doc = dict(meta, format="splatcam-pose/1", pose=_pose_record(run.params),
                   final_cost=float(run.values[-1]) if len(run.values) else None, tce=tce, tre=tre, iou=ov)
        _json(os.path.join(args.out, "pose.json"), doc)
        write_atomic(os.path.join(args.out, "trace.csv"), trace_csv(run.trace).encode())
        _frames(cloud, [run.params], [0.0], final, os.path.join(args.out, "frames"), [0])
        print(f"pose: tce={tce:.4f} tre={tre:.4f} iou={ov:.4f}")
    else:
        t = targets[0]
        inits = random_poses_around(t.centroid, (2.0 * t.prior_radius, 3.0 * t.prior_radius), cfg.sgld_batch,
                                    args.seed, aim_jitter=cfg.sgld_aim_jitter)
        finals, traces, rows = sgld_poses(cloud, work, 0, inits, ccfg, cfg.sgld_config(args.seed), target=t)
        records = [dict(_pose_record(p), member=b, final_cost=float(traces[b, -1]) if traces.shape[1] else None,
                        alignment=facing_alignment(p, t.centroid)) for b, p in enumerate(finals)]
        _json(os.path.join(args.out, "poses.json"), dict(meta, format="splatcam-poses/1", poses=records))
        body = trace_csv([(k, b) for _, k, b in rows]).splitlines()
        lines = ["member," + body[0]] + [f"{m},{line}" for (m, _, _), line in zip(rows, body[1:])]
        write_atomic(os.path.join(args.out, "trace.csv"), ("\n".join(lines) + "\n").encode())
        _frames(cloud, finals, np.zeros(len(finals)), final, os.path.join(args.out, "frames"), [0] * len(finals))
        print(f"sgld: {len(finals)} poses, min alignment {min(r['alignment'] for r in records):.4f}")


def _trajectory_arg(item):
    name, sep, path = item.partition("=")
    if not sep:
        path, name = item, os.path.splitext(os.path.basename(item))[0]
    return name, path


def _load_doc(path):
    try:
        return load_trajectory(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: cannot read trajectory ({exc})") from None


def cmd_eval(args, cfg):
    _need(args, "scene", "trajectory", "out")
    os.makedirs(args.out, exist_ok=True)
    ccfg = cfg.cost_config()
    cloud, intr = load_scene(args.scene)
    work = intr.resized(cfg.resolution, cfg.resolution)
    reports = {}
    for item in args.trajectory:
        name, path = _trajectory_arg(item)
        model, doc = _load_doc(path)
        order = doc.get("prompts") or list(range(cloud.prompt_count))
        _check_channels(cloud, order, args.scene)
        reports[name] = evaluate_trajectory(_reorder(cloud, order), model, work, len(order), ccfg, cfg.keyframes)
    write_atomic(os.path.join(args.out, "report.csv"), report_csv(reports).encode())
    table = report_table(reports)
    write_atomic(os.path.join(args.out, "report.txt"), table.encode())
    sys.stdout.write(table)


def cmd_render(args, cfg):
    _need(args, "scene", "trajectory", "out")
    if len(args.trajectory) != 1:
        raise UsageError("render takes exactly one --trajectory")
    model, doc = _load_doc(_trajectory_arg(args.trajectory[0])[1])
    cloud, intr = load_scene(args.scene)
    order = doc.get("prompts") or list(range(cloud.prompt_count))
    _check_channels(cloud, order, args.scene)
    cloud = _reorder(cloud, order)
    ts = keyframe_times(cfg.keyframes)
    names = _frames(cloud, eval_pose_vectors(model, ts), ts, intr.resized(cfg.render_resolution, cfg.render_resolution),
                    args.out, _keyframe_channels(ts, len(order)))
    print(f"wrote {len(names)} frames to {args.out}")


COMMANDS = {"synth": cmd_synth, "ground": cmd_ground, "optimize": cmd_optimize, "eval": cmd_eval,
            "render": cmd_render}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="splatcam", description="Language-guided camera trajectories through Gaussian splat scenes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("synth", "build a synthetic scene"), ("ground", "ground queries to binary channels"),
                        ("optimize", "optimize a pose, trajectory or SGLD batch"),
                        ("eval", "score trajectories"), ("render", "render keyframes of a trajectory")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scene", help="scene file")
        p.add_argument("--queries", help="query file")
        p.add_argument("--out", help="output file (synth, ground) or directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value run configuration file")
        if name == "synth":
            p.add_argument("--spec", help="scene spec file")
            p.add_argument("--benchmark", action="store_true", help="three-object benchmark scene")
        if name == "ground":
            p.add_argument("--benchmark", action="store_true", help="percentile that keeps one benchmark object")
        if name == "optimize":
            p.add_argument("--mode", choices=("pose", "trajectory", "sgld"), default="trajectory")
        if name in ("eval", "render"):
            p.add_argument("--trajectory", action="append", help="trajectory document, optionally NAME=PATH")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"splatcam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, SceneFormatError, SceneValidationError, FileNotFoundError) as exc:
        print(f"splatcam: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"splatcam: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"splatcam: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
