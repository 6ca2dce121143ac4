"""Command-line runner: execute scenarios and summarize results.

Subcommands:
  run      simulate a scenario file over variants x seeds, writing
           trajectories.csv and metrics.json into the output directory
  metrics  print RMSE / gate tables for an existing run; --plotdata emits
           per-robot overlay and gate-statistic CSV files

The default output directory is taken from $LIELOC_OUT, else ./results.
Exit codes: 0 success, 2 configuration error, 3 numerical runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from collections import defaultdict
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_scenario
from .liegroups import LieGroupError
from .metrics import compute_metrics
from .sim import VARIANTS, run_scenario

CSV_SCHEMA_HEADER = "# lieloc trajectories schema=1"
CSV_COLUMNS = ["t", "robot", "variant", "seed",
               "true_qw", "true_qx", "true_qy", "true_qz",
               "true_px", "true_py", "true_pz",
               "est_qw", "est_qx", "est_qy", "est_qz",
               "est_px", "est_py", "est_pz",
               "cov_trace", "dsq", "gate"]


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (scalar first) of a rotation matrix."""
    t = np.trace(r)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2.0
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


def _default_out() -> str:
    return os.environ.get("LIELOC_OUT", "results")


def _write_trajectories(path: str, logs: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for log in logs:
            for rid, rl in log.robots.items():
                gate_at = {round(g.t, 9): g for g in rl.gates}
                for k in range(len(rl.t)):
                    t = rl.t[k]
                    tq = rotation_to_quat(rl.true_rot[k])
                    eq = rotation_to_quat(rl.est_rot[k])
                    g = gate_at.get(round(t, 9))
                    writer.writerow(
                        [f"{t:.6f}", rid, log.variant, log.seed]
                        + [f"{x:.9g}" for x in tq] + [f"{x:.9g}" for x in rl.true_pos[k]]
                        + [f"{x:.9g}" for x in eq] + [f"{x:.9g}" for x in rl.est_pos[k]]
                        + [f"{rl.cov_trace[k]:.9g}"]
                        + ([f"{g.d_squared:.9g}", int(g.accepted)] if g else ["", ""]))


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    variants = args.variants.split(",")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
    seeds = _parse_seeds(args.seeds)
    if not variants or not seeds:
        raise ConfigError("at least one variant and one seed required")
    os.makedirs(args.out, exist_ok=True)
    logs, reports = [], []
    for seed in seeds:
        sc = replace(scenario, seed=seed)
        for variant in variants:
            log = run_scenario(sc, variant=variant)
            logs.append(log)
            reports.append(compute_metrics(log).to_dict())
    _write_trajectories(os.path.join(args.out, "trajectories.csv"), logs)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump({"schema": 1, "scenario": args.scenario, "runs": reports},
                  fh, indent=2)
    print(f"wrote {len(logs)} runs to {args.out}")
    return 0


def _load_results(out_dir: str) -> dict:
    path = os.path.join(out_dir, "metrics.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no metrics.json under {out_dir}")
    with open(path) as fh:
        return json.load(fh)


def cmd_metrics(args) -> int:
    data = _load_results(args.out)
    by_variant = defaultdict(lambda: defaultdict(list))
    gate_stats = defaultdict(lambda: defaultdict(lambda: [0, 0, 0, 0]))
    for run in data["runs"]:
        for rid, m in run["robots"].items():
            by_variant[run["variant"]][rid].append(m["rmse_pos_m"])
            g = gate_stats[run["variant"]][rid]
            g[0] += m["gate_total"]
            g[1] += m["gate_accepted"]
            g[2] += m["gate_faulted"]
            g[3] += m["gate_faulted_rejected"]
    print(f"{'variant':12s} {'robot':8s} {'runs':>4s} {'median RMSE [m]':>16s} "
          f"{'gates':>6s} {'accept':>7s} {'faulted':>8s} {'rejected':>9s}")
    for variant, robots in sorted(by_variant.items()):
        for rid, vals in sorted(robots.items()):
            g = gate_stats[variant][rid]
            print(f"{variant:12s} {rid:8s} {len(vals):4d} "
                  f"{float(np.median(vals)):16.6f} {g[0]:6d} {g[1]:7d} "
                  f"{g[2]:8d} {g[3]:9d}")
    if args.plotdata:
        _write_plotdata(args.out)
        print(f"plot data written under {args.out}")
    return 0


def _write_plotdata(out_dir: str) -> None:
    traj_path = os.path.join(out_dir, "trajectories.csv")
    if not os.path.exists(traj_path):
        raise FileNotFoundError(f"no trajectories.csv under {out_dir}")
    rows_by_robot = defaultdict(list)
    with open(traj_path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        for row in reader:
            rows_by_robot[row["robot"]].append(row)
    for rid, rows in rows_by_robot.items():
        with open(os.path.join(out_dir, f"plot_traj_{rid}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "variant", "seed", "true_x", "true_y",
                        "est_x", "est_y"])
            for row in rows:
                w.writerow([row["t"], row["variant"], row["seed"],
                            row["true_px"], row["true_py"],
                            row["est_px"], row["est_py"]])
        with open(os.path.join(out_dir, f"plot_dsq_{rid}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "variant", "seed", "dsq", "gate"])
            for row in rows:
                if row["dsq"]:
                    w.writerow([row["t"], row["variant"], row["seed"],
                                row["dsq"], row["gate"]])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lieloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("--scenario", required=True, help="scenario YAML path")
    p_run.add_argument("--out", default=_default_out(), help="output directory")
    p_run.add_argument("--variants", default="full",
                       help=f"comma list from {','.join(VARIANTS)}")
    p_run.add_argument("--seeds", default="0", help="e.g. 0 or 1,2,3 or 1..10")
    p_run.set_defaults(func=cmd_run)

    p_met = sub.add_parser("metrics", help="summarize an existing run")
    p_met.add_argument("--out", default=_default_out(), help="run output directory")
    p_met.add_argument("--plotdata", action="store_true",
                       help="emit per-robot plot CSV files")
    p_met.set_defaults(func=cmd_metrics)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LieGroupError as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
