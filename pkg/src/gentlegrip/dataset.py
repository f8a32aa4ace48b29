"""Force-diverse dataset generation: task catalog, adverb augmentation,
line-delimited episode logs and retention reporting.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .physics import ConfigurationError
from .sim import (
    SCHEMA_VERSION,
    EpisodeLog,
    Scenario,
    ScriptedPolicy,
    force_level_params,
    run_episode,
)
from .tactile import FeatureStats

FIRM_ADVERBS = ("firmly", "tightly")
GENTLE_ADVERBS = ("gently", "softly")
EVAL_ONLY_ADVERBS = ("lightly", "forcefully")
VOCABULARY = FIRM_ADVERBS + GENTLE_ADVERBS + EVAL_ONLY_ADVERBS

# (name, mass kg, mu, half width m); physics invented, names from the task list
CATALOG = [
    ("alphabet soup", 0.30, 0.50, 0.024),
    ("cream cheese", 0.08, 0.60, 0.022),
    ("salad dressing", 0.40, 0.70, 0.027),
    ("bbq sauce", 0.25, 0.80, 0.026),
    ("tomato sauce", 0.20, 0.30, 0.025),
    ("butter", 0.05, 0.50, 0.020),
    ("milk", 0.35, 0.80, 0.028),
    ("chocolate pudding", 0.10, 0.20, 0.021),
    ("orange juice", 0.15, 0.70, 0.028),
]

DATASETS = {
    "A": {"levels": (100, 25), "quantize": False},
    "B": {"levels": (100, 10), "quantize": False},
    "C": {"levels": (100, 10), "quantize": True},
}

HIST_BINS = np.linspace(0.0, 40.0, 41)


class LogParseError(ValueError):
    pass


class SchemaVersionError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


def default_suite():
    suite = []
    for i, (name, mass, mu, hw) in enumerate(CATALOG):
        suite.append(Scenario(
            task_id=f"object_task{i}",
            instruction=f"pick up the {name} and place it in the basket",
            mass=mass, mu=mu, half_width=hw))
    return suite


def adverb_class(level):
    force_level_params(level)
    return "firm" if int(level) == 100 else "gentle"


def augment_instruction(base, adverb, position="prefix", rng=None):
    """Inject ``adverb`` before or after ``base``; ``position='random'`` draws it from ``rng``."""
    if adverb not in VOCABULARY:
        raise VocabularyError(f"unknown adverb {adverb!r}")
    if position == "random":
        position = ("prefix", "suffix")[int(rng.integers(2))]
    if position == "prefix":
        return f"{adverb} {base}"
    if position == "suffix":
        return f"{base} {adverb}"
    raise ValueError(f"position must be prefix or suffix, got {position!r}")


def instruction_variants(base):
    out = []
    for adverbs in (FIRM_ADVERBS, GENTLE_ADVERBS):
        for adv in adverbs:
            for pos in ("prefix", "suffix"):
                out.append(augment_instruction(base, adv, pos))
    return out


# --- line-delimited logs ---------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_log(log, path):
    with open(path, "w") as fh:
        fh.write(_dumps(log.header) + "\n")
        for step in log.steps:
            fh.write(_dumps(step) + "\n")
        fh.write(_dumps(log.summary) + "\n")


def read_log(path):
    header, steps, summary = None, [], None
    last_valid = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
                kind = rec["type"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise LogParseError(
                    f"{path}: malformed record at line {lineno} (last valid line {last_valid}): {exc}"
                ) from None
            if lineno == 1:
                if kind != "header":
                    raise LogParseError(f"{path}: line 1 is not a header")
                if rec.get("schema") != SCHEMA_VERSION:
                    raise SchemaVersionError(
                        f"{path}: schema {rec.get('schema')} incompatible with reader {SCHEMA_VERSION}")
                header = rec
            elif summary is not None:
                raise LogParseError(f"{path}: record after summary at line {lineno}")
            elif kind == "step":
                steps.append(rec)
            elif kind == "summary":
                summary = rec
            else:
                raise LogParseError(f"{path}: unexpected record type {kind!r} at line {lineno}")
            last_valid = lineno
    if header is None:
        raise LogParseError(f"{path}: empty log")
    if summary is None:
        raise LogParseError(f"{path}: truncated log, no summary (last valid line {last_valid})")
    return EpisodeLog(header, steps, summary)


def quantize_widths(log, p_max):
    """Binary open/closed width logging used by the discrete-gripper dataset."""
    for step in log.steps:
        closed = step["p_cmd"] < 0.5 * p_max
        step["p"] = 0.0 if closed else p_max
        step["p_cmd"] = 0.0 if closed else p_max
    log.header["width_logging"] = "binary"
    return log


# --- generation ------------------------------------------------------------

def episode_seed(seed, cell_index, episode_index):
    return int(seed) * 100_003 + cell_index * 1_000 + episode_index


def _run_job(job):
    sc, level, seed, instruction, adverb, markers, quantize = job
    sc = replace(sc, force_level=level)
    log = run_episode(sc, ScriptedPolicy(sc), seed, markers=markers, instruction=instruction,
                      extra_header={"adverb": adverb, "adverb_class": adverb_class(level),
                                    "base_instruction": sc.instruction,
                                    "width_logging": "continuous"})
    if quantize:
        quantize_widths(log, sc.p_max)
    return log


def map_jobs(fn, jobs, n_jobs=1):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


def plan_jobs(suite, levels, episodes_per_cell, seed, markers=True, quantize=False):
    jobs, cells = [], []
    for ti, sc in enumerate(suite):
        for li, level in enumerate(levels):
            cell = ti * len(levels) + li
            cls = adverb_class(level)
            adverbs = FIRM_ADVERBS if cls == "firm" else GENTLE_ADVERBS
            for k in range(episodes_per_cell):
                s = episode_seed(seed, cell, k)
                rng = np.random.default_rng([s, 7])
                adverb = adverbs[int(rng.integers(len(adverbs)))]
                instr = augment_instruction(sc.instruction, adverb, "random", rng)
                jobs.append((sc, int(level), s, instr, adverb, markers, quantize))
                cells.append((sc.task_id, int(level), k))
    return jobs, cells


def generate_dataset(suite, levels, episodes_per_cell, seed, out_dir, name="B",
                     markers=True, quantize=False, n_jobs=1):
    """Replay every task at every force level and write logs plus a manifest.

    Returns ``(suite_dir, retention_rows)``.
    """
    if episodes_per_cell < 1:
        raise ConfigurationError("episodes_per_cell must be >= 1")
    for level in levels:
        force_level_params(level)
    suite_dir = Path(out_dir) / name
    suite_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(suite_dir, os.W_OK):
        raise PermissionError(f"output directory not writable: {suite_dir}")

    jobs, cells = plan_jobs(suite, levels, episodes_per_cell, seed, markers, quantize)
    logs = map_jobs(_run_job, jobs, n_jobs)

    episodes = []
    forces = []
    actions = []
    for (task, level, k), job, log in zip(cells, jobs, logs):
        path = suite_dir / task / str(level) / f"ep_{k}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_log(log, path)
        episodes.append({"path": str(path.relative_to(suite_dir)), "task": task, "level": level,
                         "seed": job[2], "adverb": job[4], "adverb_class": adverb_class(level),
                         "instruction": job[3], "success": log.summary["success"]})
        if log.summary["success"]:
            forces.extend(s["f_left"] + s["f_right"] for s in log.steps)
            actions.extend(action_targets(log))

    rows = M.summarize(logs, groups=[(c[0], c[1]) for c in cells])
    (suite_dir / "retention.csv").write_text(M.to_csv(rows))
    stats = FeatureStats.from_frames(forces) if forces else FeatureStats()
    act = np.asarray(actions) if actions else np.zeros((1, 6))
    manifest = {
        "schema": SCHEMA_VERSION, "suite": name, "seed": int(seed), "levels": [int(v) for v in levels],
        "episodes_per_cell": int(episodes_per_cell), "markers": bool(markers),
        "width_logging": "binary" if quantize else "continuous",
        "force_levels": {str(v): list(force_level_params(v)) for v in levels},
        "horizons": {sc.task_id: sc.horizon for sc in suite},
        "tasks": [{"task_id": sc.task_id, "instruction": sc.instruction, "mass": sc.mass,
                   "mu": sc.mu, "half_width": sc.half_width} for sc in suite],
        "force_feature_stats": stats.to_dict(),
        "action_stats": {"mean": act.mean(axis=0).tolist(),
                         "std": np.where(act.std(axis=0) > 1e-9, act.std(axis=0), 1.0).tolist()},
        "histogram_bins": HIST_BINS.tolist(),
        "episodes": episodes,
    }
    (suite_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return suite_dir, rows


def load_manifest(suite_dir):
    return json.loads((Path(suite_dir) / "manifest.json").read_text())


def iter_logs(suite_dir, manifest=None):
    manifest = manifest or load_manifest(suite_dir)
    for ep in manifest["episodes"]:
        yield ep, read_log(Path(suite_dir) / ep["path"])


def action_targets(log):
    """Per-tick semantic action targets from consecutive steps.

    Columns: next-tick end-effector displacement (x, z), next-tick measured
    aperture, next-tick grip force, next-tick applied force (base x, z).
    """
    steps = log.steps
    out = []
    for cur, nxt in zip(steps, steps[1:]):
        fa = nxt["f_applied"]
        out.append([nxt["ee"][0] - cur["ee"][0], nxt["ee"][1] - cur["ee"][1], nxt["p"],
                    nxt["f_grip"], fa[2], fa[0]])
    return out
