from __future__ import annotations

import json

import numpy as np
import pytest

from gentlegrip.cli import CONFIG_ENV, EXIT_CONFIG, EXIT_IO, build_parser, main
from gentlegrip.dataset import HIST_BINS, read_log
from gentlegrip.plotting import contact_grip_samples, histogram, histogram_text


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_help_documents_flags():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"simulate", "sweep", "metrics", "ablate", "train", "eval", "report"}
    for name, sp in sub.items():
        text = sp.format_help()
        for action in sp._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            if action.help is None and action.option_strings:
                raise AssertionError(f"{name} {action.option_strings} has no help")
    sim = sub["simulate"].format_help()
    for flag in ("--jobs", "--no-markers", "--force-level", "--seed", "--out", "--width-units"):
        assert flag in sim


def test_simulate_writes_log_and_manifest(tmp_path, capsys):
    code, out = run(["simulate", "--seed", "7", "--out", str(tmp_path)], capsys)
    assert code == 0 and "success=True" in out.out
    logs = list(tmp_path.glob("*.jsonl"))
    assert len(logs) == 1
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["config"]["seed"] == 7


def test_simulate_force_level_header(tmp_path, capsys):
    code, _ = run(["simulate", "--force-level", "10", "--no-markers", "--out", str(tmp_path)], capsys)
    log = read_log(next(tmp_path.glob("*.jsonl")))
    assert code == 0 and (log.header["kp"], log.header["kd"]) == (200, 10)
    assert "markers_left" not in log.steps[0]


def test_missing_scenario_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "run"
    code, err = run(["simulate", "--scenario", str(tmp_path / "nope.ini"), "--out", str(out)], capsys)
    assert code == EXIT_IO and not out.exists() and "not found" in err.err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[controller]\ngrip.ff.k = -1\n")
    code, _ = run(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_CONFIG
    code, _ = run(["ablate", "--mode", "sideways", "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_CONFIG
    code, _ = run(["simulate", "--jobs", "0", "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_CONFIG


def test_env_var_names_config(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[controller]\ngrip.ff.k = 0.3\npos.kp = -1e-4, 0, -1e-4\n")
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    code, _ = run(["simulate", "--out", str(tmp_path / "o")], capsys)
    manifest = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
    assert code == 0 and manifest["config_file"] == str(cfg)
    monkeypatch.setenv(CONFIG_ENV, str(tmp_path / "missing.ini"))
    code, _ = run(["simulate", "--out", str(tmp_path / "o2")], capsys)
    assert code == EXIT_IO


def test_sweep_metrics_report(tmp_path, capsys):
    data = tmp_path / "data"
    code, out = run(["sweep", "--dataset", "A", "--tasks", "0,1", "--episodes", "2", "--no-markers",
                     "--out", str(data)], capsys)
    assert code == 0 and out.out.count("object_task") == 4
    assert len(list((data / "A").rglob("*.jsonl"))) == 8
    assert (data / "A" / "run_manifest.json").is_file()

    code, out = run(["metrics", str(data / "A")], capsys)
    assert code == 0 and out.out.startswith("# force metrics")

    rep = tmp_path / "rep"
    code, out = run(["report", str(data / "A"), "--out", str(rep)], capsys)
    assert code == 0
    h100 = (rep / "hist_grip_100.txt").read_text().splitlines()
    h25 = (rep / "hist_grip_25.txt").read_text().splitlines()
    assert [ln.split()[:2] for ln in h100[2:]] == [ln.split()[:2] for ln in h25[2:]]
    means = {lv: float(h[0].split("mean=")[1]) for lv, h in ((100, h100), (25, h25))}
    assert means[25] / means[100] == pytest.approx(0.25, rel=0.2)
    assert (rep / "grip_histograms.png").stat().st_size > 0
    assert (rep / "average_grip.png").stat().st_size > 0


def test_report_without_logs(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _ = run(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "r")], capsys)
    assert code == EXIT_IO
    code, _ = run(["metrics", str(tmp_path / "missing")], capsys)
    assert code == EXIT_IO


def test_truncated_log_exit_code(tmp_path, capsys):
    run(["simulate", "--no-markers", "--out", str(tmp_path)], capsys)
    log = next(tmp_path.glob("*.jsonl"))
    log.write_text("\n".join(log.read_text().splitlines()[:5]) + "\n")
    code, out = run(["metrics", str(log)], capsys)
    assert code == EXIT_IO and "last valid line" in out.err


def test_ablate_single_mode(tmp_path, capsys):
    code, out = run(["ablate", "--mode", "hybrid", "--no-plots", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "trace_hybrid_25.csv").is_file()
    assert out.out.splitlines()[1].startswith("hybrid,25,")


def test_train_and_eval_smoke(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["sweep", "--dataset", "B", "--tasks", "0", "--episodes", "1", "--no-markers",
                "--out", str(tmp_path / "firm_only")], capsys)[0] == 0
    # the heavy first object never survives the gentle level, so no gentle demos exist
    code, _ = run(["train", "--data", str(tmp_path / "firm_only" / "B"), "--steps", "5",
                   "--out", str(tmp_path / "m0")], capsys)
    assert code == EXIT_CONFIG
    assert run(["sweep", "--dataset", "B", "--tasks", "1", "--episodes", "1", "--no-markers",
                "--out", str(data)], capsys)[0] == 0
    model_dir = tmp_path / "model"
    code, _ = run(["train", "--data", str(data / "B"), "--steps", "50", "--rounds", "0",
                   "--out", str(model_dir)], capsys)
    assert code == 0 and (model_dir / "model.txt").is_file() and (model_dir / "loss.txt").is_file()
    code, out = run(["eval", "--model", str(model_dir / "model.txt"), "--episodes", "1",
                     "--out", str(tmp_path / "ev")], capsys)
    assert code == 0 and "gentle/firm AG ratio" in out.out
    code, _ = run(["train", "--data", str(tmp_path), "--out", str(tmp_path / "x")], capsys)
    assert code == EXIT_IO


def test_histogram_mass_and_overflow():
    samples = np.array([-1.0, 0.5, 39.9, 40.0, 55.0])
    counts = histogram(samples, HIST_BINS)
    assert counts.sum() == samples.size and counts[0] == 2 and counts[-1] == 3
    text = histogram_text(25, samples, HIST_BINS)
    assert "np.float64" not in text and text.startswith("# level=25 samples=5")


def test_contact_samples_group_by_level():
    class L:
        def __init__(self, level, grips):
            self.header = {"force_level": level}
            self.steps = [{"f_grip": g} for g in grips]
    out = contact_grip_samples([L(100, [0, 5, 6]), L(25, [0.05, 2]), L(100, [7])])
    assert list(out) == [25, 100]
    assert out[100].tolist() == [5, 6, 7] and out[25].tolist() == [2]
