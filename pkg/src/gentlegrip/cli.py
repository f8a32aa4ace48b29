"""Command line entry point.

Exit codes: 0 on completion (failed or slipping episodes are data), 2 for
configuration errors, 3 for missing or unreadable inputs and output failures.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import metrics as M
from .controller import TABLE_KEYS, HybridConfig
from .dataset import (
    DATASETS,
    HIST_BINS,
    LogParseError,
    SchemaVersionError,
    default_suite,
    generate_dataset,
    iter_logs,
    load_manifest,
    read_log,
    write_log,
)
from .physics import ConfigurationError
from .sim import FORCE_LEVELS, ScriptedPolicy, force_level_params, load_scenario, run_episode

CONFIG_ENV = "GENTLEGRIP_CONFIG"
EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("gentlegrip")


class UsageError(ConfigurationError):
    pass


# --- config ----------------------------------------------------------------

def config_path(args):
    """``--config`` wins; otherwise the environment variable may name the file."""
    return args.config or os.environ.get(CONFIG_ENV) or None


def load_controller_config(path, width_units=None):
    """Controller table from the ``[controller]`` section of an INI file."""
    table = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        cp = configparser.ConfigParser()
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise ConfigurationError(f"{p}: {exc}") from None
        if cp.has_section("controller"):
            for key, raw in cp["controller"].items():
                name = TABLE_KEYS.get(key)
                if name in ("pos_kp", "ik_offset"):
                    table[key] = [float(v) for v in raw.replace("[", "").replace("]", "").split(",")]
                else:
                    table[key] = raw.strip()
    if width_units:
        table["width_units"] = width_units
    try:
        return HybridConfig.from_table(table)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None


def parse_levels(text):
    try:
        levels = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"bad force level list {text!r}") from None
    for v in levels:
        force_level_params(v)
    return levels


def write_manifest(out_dir, args, extra=None):
    """Echo of the resolved run configuration.

    The output directory and job count are left out so that identical runs
    produce identical trees wherever they are written and however parallel.
    """
    skip = {"func", "out", "jobs", "verbose"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    body = {"version": __version__, "command": args.command, "config": cfg,
            "config_file": config_path(args)}
    if extra:
        body.update(extra)
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(body, indent=1, sort_keys=True, default=str) + "\n")
    return path


def ensure_out(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory not writable: {p}")
    return p


def collect_logs(paths):
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.rglob("*.jsonl")))
        elif p.is_file():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such log file or directory: {p}")
    if not files:
        raise FileNotFoundError("no episode logs found in " + ", ".join(str(p) for p in paths))
    return files


# --- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    cfg = load_controller_config(config_path(args), args.width_units)
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        suite = default_suite()
        if not 0 <= args.task < len(suite):
            raise ConfigurationError(f"--task must be in [0, {len(suite) - 1}]")
        sc = suite[args.task]
    if args.force_level is not None:
        force_level_params(args.force_level)
        sc = replace(sc, force_level=args.force_level)
    out = ensure_out(args.out)
    ep = run_episode(sc, ScriptedPolicy(sc), args.seed, hybrid_cfg=cfg, markers=not args.no_markers)
    path = out / f"{sc.task_id}_{sc.force_level}_seed{args.seed}.jsonl"
    write_log(ep, path)
    write_manifest(out, args, {"scenario": asdict(sc), "log": path.name})
    s, m = ep.summary, ep.summary["metrics"]
    print(f"task={sc.task_id} level={sc.force_level} seed={args.seed} success={s['success']} "
          f"dropped={s['dropped']} AG={m['AG']:.3f} MG={m['MG']:.3f} AA={m['AA']:.3f} "
          f"MA={m['MA']:.3f} failure={s['failure']}")
    return 0


def cmd_sweep(args):
    preset = DATASETS[args.dataset]
    levels = parse_levels(args.levels) if args.levels else preset["levels"]
    suite = default_suite()
    if args.tasks:
        idx = [int(v) for v in args.tasks.split(",")]
        if any(not 0 <= i < len(suite) for i in idx):
            raise ConfigurationError(f"--tasks entries must be in [0, {len(suite) - 1}]")
        suite = [suite[i] for i in idx]
    out = ensure_out(args.out)
    t0 = time.perf_counter()
    suite_dir, rows = generate_dataset(suite, levels, args.episodes, args.seed, out, args.dataset,
                                       markers=not args.no_markers, quantize=preset["quantize"],
                                       n_jobs=args.jobs)
    write_manifest(suite_dir, args, {"levels": list(levels)})
    log.info("sweep of %d episodes took %.1f s", len(suite) * len(levels) * args.episodes,
             time.perf_counter() - t0)
    sys.stdout.write(M.to_csv(rows))
    return 0


def cmd_metrics(args):
    logs = [read_log(f) for f in collect_logs(args.logs)]
    rows = M.summarize(logs)
    text = M.to_csv(rows)
    if args.out:
        out = ensure_out(args.out)
        (out / "metrics.csv").write_text(text)
        write_manifest(out, args, {"n_logs": len(logs)})
    sys.stdout.write(text)
    return 0


def cmd_ablate(args):
    from .ablation import MODES, default_disturbance, run_ablation, traces_csv
    from .plotting import ablation_figure
    modes = MODES if args.mode == "all" else (args.mode,)
    for m in modes:
        if m not in MODES:
            raise ConfigurationError(f"unknown ablation mode {m!r}; expected one of {MODES} or all")
    force_level_params(args.target_level)
    cfg = load_controller_config(config_path(args), args.width_units)
    out = ensure_out(args.out)
    dist = default_disturbance() if args.disturbance else None
    results = []
    lines = ["mode,target_level,tracking_error,success,dropped,slip_event,max_correction"]
    for m in modes:
        res = run_ablation(m, args.target_level, args.seed, dist, cfg=cfg)
        results.append(res)
        (out / f"trace_{m}_{args.target_level}.csv").write_text(traces_csv(res))
        lines.append(f"{m},{args.target_level},{res.tracking_error:.6f},{res.success},"
                     f"{res.dropped},{res.slip_event},{res.correction:.6f}")
    text = "\n".join(lines) + "\n"
    (out / "ablation_summary.csv").write_text(text)
    if not args.no_plots:
        ablation_figure(results, out / f"ablation_{args.target_level}.png")
    write_manifest(out, args, {"controller": asdict(cfg)})
    sys.stdout.write(text)
    return 0


def cmd_train(args):
    from .flow import Normalizer, TrainConfig, save_model, train_policy
    data = Path(args.data)
    if not (data / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest in {data}")
    manifest = load_manifest(data)
    logs = [lg for _, lg in iter_logs(data, manifest)]
    norm = Normalizer.from_manifest(manifest)
    cfg = TrainConfig(family=args.family, steps=args.steps, lambda_force=args.lambda_force,
                      seed=args.seed, tactile=not args.no_tactile)
    if args.peak_lr is not None:
        cfg = replace(cfg, peak_lr=args.peak_lr)
    out = ensure_out(args.out)
    t0 = time.perf_counter()
    model, info = train_policy(logs, norm, cfg, rounds=args.rounds,
                               log_fn=lambda r, i: log.info("round %d: %s", r, i))
    hist = info.pop("history")
    np.savetxt(out / "loss.txt", hist, header="step-wise training loss of the final round")
    extra = {"train_config": asdict(cfg), "rounds": info["rounds"], "dataset": manifest["suite"]}
    save_model(model, norm, out / "model.txt", extra)
    write_manifest(out, args, extra)
    log.info("training took %.1f s", time.perf_counter() - t0)
    print(f"model={out / 'model.txt'} family={cfg.family} rounds={args.rounds} "
          f"loss_first={info['rounds'][0]['loss_first']:.4f} loss_last={info['rounds'][-1]['loss_last']:.4f}")
    return 0


def cmd_eval(args):
    from .flow import eval_closed_loop, force_ratio, load_model
    model_path = Path(args.model)
    if not model_path.is_file():
        raise FileNotFoundError(f"model file not found: {model_path}")
    model, norm, _ = load_model(model_path)
    cfg = load_controller_config(config_path(args), args.width_units)
    out = ensure_out(args.out)
    res = eval_closed_loop(model, norm, default_suite(), episodes=args.episodes, seed=args.seed,
                           tactile=not args.no_tactile, hybrid_cfg=cfg)
    lines = ["class,episodes,successes,SR,AG,MG"]
    for cls, r in res.items():
        ag = "--" if r.ag is None else f"{r.ag:.3f}"
        mg = "--" if r.mg is None else f"{r.mg:.3f}"
        lines.append(f"{cls},{r.episodes},{r.successes},{r.sr:.2f},{ag},{mg}")
        for k, lg in enumerate(r.logs):
            write_log(lg, ensure_out(out / "logs" / cls) / f"{lg.header['task_id']}_{k}.jsonl")
    ratio = force_ratio(res)
    lines.append(f"# gentle/firm AG ratio: {'--' if ratio is None else f'{ratio:.4f}'}")
    text = "\n".join(lines) + "\n"
    (out / "eval.csv").write_text(text)
    write_manifest(out, args, {"ratio": ratio})
    sys.stdout.write(text)
    return 0


def cmd_report(args):
    from .plotting import contact_grip_samples, force_histograms_figure, histogram_text, metrics_figure
    logs = [read_log(f) for f in collect_logs(args.logs)]
    out = ensure_out(args.out)
    edges = HIST_BINS
    samples = contact_grip_samples(logs)
    files = []
    for level, s in samples.items():
        path = out / f"hist_grip_{level}.txt"
        path.write_text(histogram_text(level, s, edges))
        files.append(path.name)
    rows = M.summarize(logs)
    table = M.to_csv(rows)
    (out / "metrics.csv").write_text(table)
    if not args.no_plots:
        force_histograms_figure(samples, edges, out / "grip_histograms.png")
        metrics_figure(rows, out / "average_grip.png")
    write_manifest(out, args, {"histogram_bins": edges.tolist(), "histograms": files,
                               "n_logs": len(logs)})
    sys.stdout.write(table)
    for level, s in samples.items():
        sys.stdout.write(f"# level {level}: {s.size} contact samples, mean grip {s.mean():.3f} N\n")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"controller INI file ([controller] section); "
                                          f"defaults to ${CONFIG_ENV} if set")
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--width-units", choices=("si", "percent"), default=None,
                        help="interpretation of the grip deadzone: metres or percent of p_max")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="gentlegrip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one scripted episode")
    s.add_argument("--scenario", help="scenario INI file (default: task from the built-in suite)")
    s.add_argument("--task", type=int, default=0, help="built-in suite task index (default 0)")
    s.add_argument("--force-level", type=int, choices=sorted(FORCE_LEVELS), default=None,
                   help="gripper impedance level in percent")
    s.add_argument("--no-markers", action="store_true", help="omit marker fields from the log")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="replay the suite at several force levels")
    s.add_argument("--dataset", choices=sorted(DATASETS), default="B",
                   help="dataset preset: A (100,25), B (100,10), C (100,10 binary widths)")
    s.add_argument("--levels", help="comma-separated force levels overriding the dataset's")
    s.add_argument("--tasks", help="comma-separated task indices (default all)")
    s.add_argument("--episodes", type=int, default=5, help="episodes per task and level (default 5)")
    s.add_argument("--no-markers", action="store_true", help="omit marker fields from logs")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("metrics", parents=[common], help="summarize episode logs")
    s.add_argument("logs", nargs="+", help="log files or directories")
    s.set_defaults(func=cmd_metrics, out=None)

    s = sub.add_parser("ablate", parents=[common], help="grip-force tracking ablations")
    s.add_argument("--mode", default="all", help="hybrid, no-ff, no-adm, full-force or all")
    s.add_argument("--target-level", type=int, default=25, help="force level to track (default 25)")
    s.add_argument("--disturbance", action="store_true", help="inject a finger setpoint disturbance")
    s.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("train", parents=[common], help="train the flow policy on a dataset")
    s.add_argument("--data", required=True, help="dataset directory containing manifest.json")
    s.add_argument("--family", choices=("linear", "mlp"), default="mlp", help="velocity model family")
    s.add_argument("--steps", type=int, default=15000, help="optimizer steps per round")
    s.add_argument("--rounds", type=int, default=3, help="closed-loop aggregation rounds")
    s.add_argument("--lambda-force", type=float, default=0.1, help="loss weight on force dims")
    s.add_argument("--peak-lr", type=float, default=None, help="peak learning rate")
    s.add_argument("--no-tactile", action="store_true", help="zero the force-history features")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="closed-loop evaluation of a trained policy")
    s.add_argument("--model", required=True, help="model file written by train")
    s.add_argument("--episodes", type=int, default=2, help="episodes per task and class")
    s.add_argument("--no-tactile", action="store_true", help="zero the force-history features")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="histograms, tables and figures from logs")
    s.add_argument("logs", nargs="+", help="log files or directories")
    s.add_argument("--no-plots", action="store_true", help="write text outputs only")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    from .flow import DatasetError
    try:
        return args.func(args)
    except (ConfigurationError, SchemaVersionError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LogParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
