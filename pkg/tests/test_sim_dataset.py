from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gentlegrip.controller import PolicyOutput
from gentlegrip.dataset import (
    LogParseError, SchemaVersionError, VocabularyError, augment_instruction, default_suite,
    generate_dataset, iter_logs, load_manifest, read_log, write_log,
)
from gentlegrip.physics import ConfigurationError, forward_kinematics
from gentlegrip.sim import (
    CONTROL_DT, Scenario, ScriptedPolicy, force_level_params, load_scenario, run_episode,
    scripted_trajectory, write_scenario,
)

SOUP = "pick up the alphabet soup and place it in the basket"


def test_force_level_mapping():
    assert force_level_params(100) == (2000, 100)
    assert force_level_params(25) == (500, 25)
    assert force_level_params(10) == (200, 10)
    with pytest.raises(ConfigurationError):
        force_level_params(50)


def test_instruction_augmentation():
    assert augment_instruction(SOUP, "tightly", "prefix") == "tightly " + SOUP
    assert augment_instruction(SOUP, "gently", "suffix") == SOUP + " gently"
    with pytest.raises(VocabularyError):
        augment_instruction(SOUP, "violently")


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        Scenario(timings=(1, 2, 2, 3, 4, 5, 6))
    with pytest.raises(ConfigurationError):
        Scenario(goal_x=(0.4, 0.3))


def test_scenario_file_round_trip(tmp_path):
    sc = default_suite()[3]
    write_scenario(sc, tmp_path / "s.ini")
    assert load_scenario(tmp_path / "s.ini") == sc
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.ini")


def test_scripted_trajectory_schedule():
    sc = Scenario()
    (x, z), w, _ = scripted_trajectory(sc, 0.0)
    assert w == sc.p_max and z == pytest.approx(sc.grasp_z + sc.approach_height)
    t_mid = 0.5 * (sc.timings[2] + sc.timings[3])
    assert scripted_trajectory(sc, t_mid)[0][1] > sc.grasp_z
    assert scripted_trajectory(sc, 99.0) == scripted_trajectory(sc, sc.horizon)


def test_episode_success_and_timestamps():
    sc = default_suite()[0]
    log = run_episode(sc, ScriptedPolicy(sc), 3)
    s = log.summary
    assert s["success"] and not s["dropped"]
    assert sc.goal_x[0] <= s["final_object"][0] <= sc.goal_x[1]
    t = np.array([st_["t"] for st_ in log.steps])
    assert np.allclose(np.diff(t), CONTROL_DT)
    for step in log.steps:
        x, z, _ = forward_kinematics(step["q"], (0.45, 0.40, 0.15))
        assert (x, z) == pytest.approx(step["ee"][:2], abs=1e-9)
    slip = [st_["slip"] for st_ in log.steps]
    assert all(b >= a >= 0 for a, b in zip(slip, slip[1:]))


def test_open_gripper_drops():
    sc = default_suite()[0]
    log = run_episode(sc, ScriptedPolicy(sc, grip_open=True), 0)
    assert not log.summary["success"] and log.summary["dropped"]


def test_same_seed_same_log():
    sc = default_suite()[2]
    a = run_episode(sc, ScriptedPolicy(sc), 11)
    b = run_episode(sc, ScriptedPolicy(sc), 11)
    assert a == b


def test_non_finite_command_fails_episode():
    sc = default_suite()[0]

    def bad(obs):
        return PolicyOutput(pose=(float("nan"), 0.1, 0.0), width=float("nan"), grip_force=0.0)

    log = run_episode(sc, bad, 0)
    assert not log.summary["success"] and log.summary["failure"]


def test_log_round_trip_and_errors(tmp_path):
    sc = default_suite()[1]
    log = run_episode(sc, ScriptedPolicy(sc), 5, markers=False)
    assert "markers_left" not in log.steps[0]
    path = tmp_path / "ep.jsonl"
    write_log(log, path)
    assert read_log(path) == log

    lines = path.read_text().splitlines()
    trunc = tmp_path / "trunc.jsonl"
    trunc.write_text("\n".join(lines[:10]) + "\n" + lines[10][:20] + "\n")
    with pytest.raises(LogParseError, match="line 11.*last valid line 10"):
        read_log(trunc)
    nosum = tmp_path / "nosum.jsonl"
    nosum.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(LogParseError, match="last valid line"):
        read_log(nosum)

    header = json.loads(lines[0])
    header["schema"] = 99
    old = tmp_path / "old.jsonl"
    old.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(SchemaVersionError):
        read_log(old)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 8), st.sampled_from([100, 25, 10]), st.integers(0, 2**31), st.booleans())
def test_log_round_trip_property(task, level, seed, markers):
    import tempfile
    from pathlib import Path
    sc = replace(default_suite()[task], force_level=level)
    log = run_episode(sc, ScriptedPolicy(sc), seed, markers=markers)
    with tempfile.TemporaryDirectory() as d:
        write_log(log, Path(d) / "x.jsonl")
        assert read_log(Path(d) / "x.jsonl") == log


def test_generate_small_dataset(tmp_path):
    suite = default_suite()[:1]
    suite_dir, rows = generate_dataset(suite, (100,), 2, 0, tmp_path, "A", markers=False)
    logs = sorted(p.name for p in suite_dir.rglob("*.jsonl"))
    assert logs == ["ep_0.jsonl", "ep_1.jsonl"]
    manifest = load_manifest(suite_dir)
    assert len(manifest["episodes"]) == 2 and manifest["force_levels"]["100"] == [2000.0, 100.0]
    assert [ep["adverb"] in ("firmly", "tightly") for ep, _ in iter_logs(suite_dir)] == [True, True]
    for ep in manifest["episodes"]:
        assert ep["instruction"].startswith(ep["adverb"]) or ep["instruction"].endswith(ep["adverb"])


def test_retention_drops_at_low_level(tmp_path):
    # slippery, light object: the gentle level holds no better than the firm one
    suite = [default_suite()[7]]
    _, rows = generate_dataset(suite, (100, 10), 4, 1, tmp_path, "B", markers=False)
    by_level = {r.level: r.sr for r in rows}
    assert by_level[10] <= by_level[100]


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_dataset(default_suite()[:1], (100,), 1, 0, blocker, "A")
