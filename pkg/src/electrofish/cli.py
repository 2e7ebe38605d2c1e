"""Command-line entry point: ``electrofish {train,rollout,analyze,assay}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .analysis import (UndefinedStatisticError, displacement_stats, eod_probability, mine_motifs,
                       spi_distribution, theil_index)
from .assay import TRIAL_COLUMNS, run_two_fish_assay
from .checkpoint import load_checkpoint
from .config import parse_config
from .episode_log import export_text, read_episode_log, write_episode_log
from .errors import ElectrofishError
from .policy import PolicyController
from .runner import BurstyEmitter, RandomController, episode_seed, run_episode
from .trainer import train

SCRIPTED = ("random", "bursty")


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def table(columns, rows):
    """Tab-separated text with a header line."""
    lines = ["\t".join(columns)]
    lines += ["\t".join(_fmt(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- analyze tables (shared with tests for CLI/library parity) --------------

def motifs_table(logs, d_motif=0.15, L_motif=4, k=6):
    recs = mine_motifs(logs, d_motif, L_motif, k)
    rows = [{"rank": i + 1, "code": " ".join(r.code), "count": r.count} for i, r in enumerate(recs)]
    return table(("rank", "code", "count"), rows), {"motifs": rows, "d_motif": d_motif, "L_motif": L_motif,
                                                    "segmentation": "non-overlapping"}


def theil_table(logs, paths):
    rows = []
    for p, lg in zip(paths, logs):
        try:
            t = theil_index(lg.food_totals())
        except UndefinedStatisticError:
            t = float("nan")
        rows.append({"log": p, "theil": t, "food_total": int(lg.food_totals().sum())})
    return table(("log", "theil", "food_total"), rows), {"theil": rows}


def spi_table(logs, agent=None):
    n = logs[0].n_agents
    agents = [agent] if agent is not None else list(range(n)) + [None]
    rows = []
    for a in agents:
        d = spi_distribution(logs, a)
        rows.append({"agent": "all" if a is None else a, "n_intervals": int(d.intervals.size),
                     "mean_interval_s": float(d.intervals_s.mean()) if d.intervals.size else float("nan"),
                     "rate_hz": d.rate_hz, "tau90_s": d.tau90 * d.dt if not d.empty else float("nan"),
                     "tail_excess": d.tail_excess, "empty": d.empty, "degenerate_fit": d.degenerate_fit})
    cols = ("agent", "n_intervals", "mean_interval_s", "rate_hz", "tau90_s", "tail_excess", "empty",
            "degenerate_fit")
    return table(cols, rows), {"spi": rows}


def eodrate_table(logs, n_boot=1000, seed=0):
    conds = sorted({lg.condition() for lg in logs})
    rows = []
    keys = ("competition_mode", "knollenorgan_enabled", "collective_sensing_enabled")
    for c in conds + [None]:
        r = eod_probability(logs, None if c is None else dict(zip(keys, c)), n_boot, seed)
        rows.append({"condition": "all" if c is None else "/".join(str(x) for x in c), "rate": r.rate,
                     "ci_low": r.ci_low, "ci_high": r.ci_high, "n_episodes": r.n_episodes,
                     "n_eods": r.n_eods, "n_agent_steps": r.n_agent_steps})
    cols = ("condition", "rate", "ci_low", "ci_high", "n_episodes", "n_eods", "n_agent_steps")
    return table(cols, rows), {"eodrate": rows}


def displacement_table(logs, window=9):
    d = displacement_stats(logs, window)
    rows = [{"bin_low": float(lo), "bin_high": float(hi), "count": int(c)}
            for lo, hi, c in zip(d.bin_edges[:-1], d.bin_edges[1:], d.hist)]
    summary = {"window_steps": d.window_steps, "n": int(d.displacements.size), "mean_m": d.mean,
               "windows": d.overlap}
    return table(("bin_low", "bin_high", "count"), rows), {"displacement": summary, "histogram": rows}


# --- subcommands ------------------------------------------------------------

def _cmd_train(args):
    cfg = parse_config(args.config)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    tr = train(cfg, out, resume=not args.no_resume,
               progress=lambda r: logging.info("update %d env_steps %d reward %.3f food %.3f",
                                               r["update"], r["env_steps"], r["mean_episode_reward"],
                                               r["food_per_episode"]))
    print(f"trained {tr.update} updates ({tr.env_steps} env steps); outputs in {out}")
    return 0


def _controller(which, cfg, rng):
    n = cfg.arena.n_agents
    if which == "random":
        return RandomController(rng)
    if which == "bursty":
        return BurstyEmitter(rng)
    params, _ = load_checkpoint(which, layout=cfg.sensors)
    return PolicyController(params, n, rng)


def _cmd_rollout(args):
    cfg = parse_config(args.config)
    if cfg.training.determinism == "strict":
        torch.set_num_threads(1)
    if args.checkpoint not in SCRIPTED:
        load_checkpoint(args.checkpoint, layout=cfg.sensors)
    out = Path(args.out) if args.out else cfg.resolved_output_dir() / "rollouts"
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.episodes):
        seed = episode_seed(args.seed, k)
        ctrl = _controller(args.checkpoint, cfg, np.random.default_rng(episode_seed(args.seed, k, 1)))
        log, _ = run_episode(cfg.sim, ctrl, seed, cfg.hash, record_obs=args.record_obs,
                             max_steps=args.steps)
        path = write_episode_log(log, out / f"episode_{k:04d}.eflog")
        if args.text:
            export_text(log, path.with_suffix(".tsv"))
        print(path)
    return 0


def _cmd_analyze(args):
    logs = [read_episode_log(p) for p in args.logs]
    if args.stat == "motifs":
        text, summary = motifs_table(logs, args.d_motif, args.L_motif, args.k)
    elif args.stat == "theil":
        text, summary = theil_table(logs, args.logs)
    elif args.stat == "spi":
        text, summary = spi_table(logs, args.agent)
    elif args.stat == "eodrate":
        text, summary = eodrate_table(logs, args.n_boot, args.seed)
    else:
        text, summary = displacement_table(logs, args.window)
    _emit(text, args.out)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return 0


def _cmd_assay(args):
    cfg = parse_config(args.config)
    if cfg.training.determinism == "strict":
        torch.set_num_threads(1)
    policy = None
    if args.checkpoint != "scripted":
        policy, _ = load_checkpoint(args.checkpoint, layout=cfg.sensors)
    res = run_two_fish_assay(cfg, policy, n_trials=args.trials)
    summary = res.summary()
    text = table(tuple(summary[0].keys()), summary) if summary else ""
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.tsv").write_text(table(TRIAL_COLUMNS, res.trials))
        (out / "summary.tsv").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="electrofish", description="Electric-fish multi-agent simulator")
    p.add_argument("--version", action="version", version=f"electrofish {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a shared recurrent policy")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (default: config output_dir or $ELECTROFISH_OUTPUT_DIR)")
    t.add_argument("--no-resume", action="store_true", help="ignore any saved trainer state")
    t.set_defaults(func=_cmd_train)

    r = sub.add_parser("rollout", help="write episode logs")
    r.add_argument("config")
    r.add_argument("checkpoint", help="checkpoint file, or 'random' / 'bursty' for scripted controllers")
    r.add_argument("--episodes", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--steps", type=int, default=None, help="cap on steps per episode")
    r.add_argument("--out")
    r.add_argument("--text", action="store_true", help="also write a .tsv export per log")
    r.add_argument("--record-obs", action="store_true")
    r.set_defaults(func=_cmd_rollout)

    a = sub.add_parser("analyze", help="statistics over episode logs")
    a.add_argument("stat", choices=("spi", "eodrate", "displacement", "theil", "motifs"))
    a.add_argument("logs", nargs="+")
    a.add_argument("--agent", type=int, default=None)
    a.add_argument("--window", type=int, default=9)
    a.add_argument("--d-motif", type=float, default=0.15)
    a.add_argument("--L-motif", type=int, default=4)
    a.add_argument("--k", type=int, default=6)
    a.add_argument("--n-boot", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="write the table here instead of stdout")
    a.add_argument("--summary", help="write a JSON summary here")
    a.set_defaults(func=_cmd_analyze)

    s = sub.add_parser("assay", help="two-fish patch-finding protocol")
    s.add_argument("config")
    s.add_argument("checkpoint", help="checkpoint file, or 'scripted'")
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_assay)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ElectrofishError, OSError, ValueError) as exc:
        print(f"electrofish: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
