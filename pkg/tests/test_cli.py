import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from splatcam.benchmark import OBJECT_GAUSSIANS
from splatcam.cli import RunConfig, InputError, main, parse_scene_spec
from splatcam.scene import load_scene

FAST = "iterations = 4\nresolution = 24\nrender_resolution = 24\nsgld_batch = 3\nkeyframes = 9\n"


def files_under(root):
    out = {}
    for d, _, names in os.walk(root):
        for n in names:
            p = os.path.join(d, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "fast.cfg").write_text(FAST)
    assert main(["synth", "--benchmark", "--out", str(root / "scene.txt"), "--queries", str(root / "q.txt"),
                 "--seed", "1"]) == 0
    assert main(["ground", "--benchmark", "--scene", str(root / "scene.txt"), "--queries", str(root / "q.txt"),
                 "--out", str(root / "grounded.txt")]) == 0
    return root


def run(work, *argv):
    return main([*argv, "--config", str(work / "fast.cfg")])


# ---------------------------------------------------------------------------
# synth / ground

def test_synth_is_byte_deterministic(work, tmp_path):
    main(["synth", "--benchmark", "--out", str(tmp_path / "again.txt"), "--seed", "1"])
    assert (tmp_path / "again.txt").read_bytes() == (work / "scene.txt").read_bytes()
    main(["synth", "--benchmark", "--out", str(tmp_path / "other.txt"), "--seed", "2"])
    assert (tmp_path / "other.txt").read_bytes() != (work / "scene.txt").read_bytes()


def test_synth_from_spec_file(tmp_path):
    (tmp_path / "s.spec").write_text("dim 4\nclutter 20\ncamera 32 32\n"
                                     "object center=0,0,0 extent=0.3 count=40 embedding=1,0,0,0\n"
                                     "object center=1,0,0 extent=0.2,0.1,0.3 count=30 embedding=0,1,0,0 opacity=0.5\n")
    assert main(["synth", "--spec", str(tmp_path / "s.spec"), "--out", str(tmp_path / "s.txt")]) == 0
    cloud, intr = load_scene(tmp_path / "s.txt")
    assert len(cloud) == 90 and cloud.embedding_dim == 4 and intr.width == 32


def test_synth_bad_spec_exit_2(tmp_path, capsys):
    (tmp_path / "bad.spec").write_text("object center=0,0 extent=0.3\n")
    assert main(["synth", "--spec", str(tmp_path / "bad.spec"), "--out", str(tmp_path / "x.txt")]) == 2
    assert "line 1" in capsys.readouterr().err and not (tmp_path / "x.txt").exists()


def test_ground_flags_generator_objects(work):
    cloud, _ = load_scene(work / "grounded.txt")
    assert cloud.prompt_count == 3
    for i in range(3):
        # objects are generated first, in prompt order, followed by clutter
        assert np.array_equal(np.flatnonzero(cloud.channels[:, i]), np.arange(i * OBJECT_GAUSSIANS, (i + 1) * OBJECT_GAUSSIANS))


def test_ground_is_idempotent(work, tmp_path):
    out = tmp_path / "regrounded.txt"
    assert main(["ground", "--benchmark", "--scene", str(work / "grounded.txt"), "--queries", str(work / "q.txt"),
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (work / "grounded.txt").read_bytes()


def test_ground_to_nothing_exit_2(work, tmp_path, capsys):
    (tmp_path / "tight.cfg").write_text("dbscan_eps = 1e-9\n")
    code = main(["ground", "--scene", str(work / "scene.txt"), "--queries", str(work / "q.txt"),
                 "--out", str(tmp_path / "g.txt"), "--config", str(tmp_path / "tight.cfg")])
    assert code == 2 and "query grounded to nothing" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# optimize / eval / render

def test_optimize_trajectory_outputs(work):
    out = work / "traj"
    assert run(work, "optimize", "--scene", str(work / "grounded.txt"), "--out", str(out), "--seed", "3") == 0
    doc = json.loads((out / "trajectory.json").read_text())
    assert doc["format"] == "splatcam-trajectory/1" and doc["basis"]["kind"] == "rbf"
    assert len(doc["keyframes"]) == 9 and doc["prompts"] == [0, 1, 2]
    rows = list(csv.reader((out / "trace.csv").open()))
    assert rows[0] == ["iteration", "tce", "tre", "upright", "prior", "alpha", "total"] and len(rows) == 5
    frames = sorted(os.listdir(out / "frames"))
    assert len(frames) == 18 and frames[0] == "frame_000_0.0556.pgm" and frames[-1] == "frame_008_0.9444.ppm"


def test_optimize_is_byte_deterministic(work, tmp_path):
    args = ["optimize", "--scene", str(work / "grounded.txt"), "--seed", "3"]
    assert run(work, *args, "--out", str(tmp_path / "a")) == 0
    assert run(work, *args, "--out", str(tmp_path / "b")) == 0
    a, b = files_under(tmp_path / "a"), files_under(tmp_path / "b")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)


def test_optimize_pose_mode(work, tmp_path):
    assert run(work, "optimize", "--mode", "pose", "--scene", str(work / "grounded.txt"), "--out", str(tmp_path)) == 0
    doc = json.loads((tmp_path / "pose.json").read_text())
    assert len(doc["pose"]["params"]) == 6 and 0 <= doc["iou"] <= 1
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 5
    assert len(os.listdir(tmp_path / "frames")) == 2


def test_optimize_sgld_mode(work, tmp_path):
    assert run(work, "optimize", "--mode", "sgld", "--scene", str(work / "grounded.txt"), "--out", str(tmp_path)) == 0
    doc = json.loads((tmp_path / "poses.json").read_text())
    assert [p["member"] for p in doc["poses"]] == [0, 1, 2]
    rows = list(csv.reader((tmp_path / "trace.csv").open()))
    assert rows[0][:2] == ["member", "iteration"] and len(rows) == 1 + 3 * 4
    assert len(os.listdir(tmp_path / "frames")) == 6


def test_eval_report(work, tmp_path, capsys):
    traj = work / "traj" / "trajectory.json"
    if not traj.exists():
        run(work, "optimize", "--scene", str(work / "grounded.txt"), "--out", str(work / "traj"), "--seed", "3")
    assert run(work, "eval", "--scene", str(work / "grounded.txt"), "--trajectory", f"a={traj}",
               "--trajectory", f"b={traj}", "--out", str(tmp_path)) == 0
    metrics = [r[1] for r in csv.reader((tmp_path / "report.csv").open())][1:]
    assert {"angular_ldj", "iou", "positional_ldj", "tce", "tre"} <= set(metrics)
    assert sum(m.startswith("keyframe_") for m in metrics) == 2 * 9
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["metric", "a", "b"] and table == (tmp_path / "report.txt").read_text()


def test_eval_missing_channel_names_prompt(work, tmp_path, capsys):
    traj = work / "traj" / "trajectory.json"
    if not traj.exists():
        run(work, "optimize", "--scene", str(work / "grounded.txt"), "--out", str(work / "traj"), "--seed", "3")
    code = run(work, "eval", "--scene", str(work / "scene.txt"), "--trajectory", str(traj), "--out", str(tmp_path))
    assert code == 2 and "prompt 0" in capsys.readouterr().err


def test_render_frames(work, tmp_path):
    traj = work / "traj" / "trajectory.json"
    if not traj.exists():
        run(work, "optimize", "--scene", str(work / "grounded.txt"), "--out", str(work / "traj"), "--seed", "3")
    assert run(work, "render", "--scene", str(work / "grounded.txt"), "--trajectory", str(traj),
               "--out", str(tmp_path)) == 0
    assert len(os.listdir(tmp_path)) == 18


# ---------------------------------------------------------------------------
# errors and config

def test_usage_errors_exit_1(work, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 1
    assert main(["optimize", "--out", "/tmp/nowhere"]) == 1
    assert "--scene is required" in capsys.readouterr().err


def test_invalid_inputs_exit_2(work, tmp_path):
    assert main(["ground", "--scene", str(tmp_path / "missing.txt"), "--queries", str(work / "q.txt"),
                 "--out", str(tmp_path / "g.txt")]) == 2
    (tmp_path / "junk.txt").write_text("not a scene\n")
    assert main(["eval", "--scene", str(tmp_path / "junk.txt"), "--trajectory", "x.json",
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.cfg").write_text("learning_rte = 1\n")
    assert main(["optimize", "--scene", str(work / "grounded.txt"), "--out", str(tmp_path),
                 "--config", str(tmp_path / "bad.cfg")]) == 2


def test_numerical_failure_exit_3(work, tmp_path):
    (tmp_path / "nan.cfg").write_text(FAST + "learning_rate = nan\n")
    code = main(["optimize", "--mode", "pose", "--scene", str(work / "grounded.txt"), "--out", str(tmp_path / "o"),
                 "--config", str(tmp_path / "nan.cfg")])
    assert code == 3


def test_run_config_parse():
    cfg = RunConfig.parse("basis = waypoint  # comment\niterations=7\nterms = tce,tre\n")
    assert cfg.basis == "waypoint" and cfg.iterations == 7
    assert cfg.cost_config().terms == ("tce", "tre") and cfg.basis_spec(3).size == 100
    assert RunConfig().basis_spec(3).size == 12
    with pytest.raises(InputError):
        RunConfig.parse("basis = spline\n")
    with pytest.raises(InputError):
        RunConfig.parse("iterations = many\n")
    with pytest.raises(InputError):
        RunConfig(prompts="0,5").prompt_order(3)


def test_scene_spec_needs_objects():
    with pytest.raises(InputError):
        parse_scene_spec("dim 4\n")


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "splatcam.cli", "synth", "--benchmark", "--out",
                          str(tmp_path / "s.txt")], capture_output=True, text=True)
    assert res.returncode == 0 and "wrote" in res.stdout
