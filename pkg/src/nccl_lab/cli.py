"""Command-line entry points.

``nccl-lab run`` executes one config over one or more seeds and writes a
run directory per seed under ``<out>/<config-id>/<seed>/``. ``nccl-lab
compare`` aggregates metrics.json files across such directories. The
``NCCL_LAB_THREADS`` environment variable caps how many seeds run in
parallel (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import parse_config, parse_config_text, serialize_config
from .continual import RunRecord, run_experiment


def write_run_dir(record: RunRecord, out_root: Path) -> Path:
    run_dir = out_root / record.config_id / str(record.seed)
    run_dir.mkdir(parents=True, exist_ok=True)

    (run_dir / "config.ini").write_text(record.config_text)
    record.prototypes.to_csv(run_dir / "prototypes.csv")

    payload = dict(record.metrics.to_dict())
    payload["seed"] = record.seed
    payload["config_id"] = record.config_id
    payload["acc_matrix"] = record.acc_matrix_jsonable()
    with open(run_dir / "metrics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(run_dir / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "epoch", "lr", "plasticity", "distill",
                         "total", "clamp_events"])
        for row in record.loss_log:
            writer.writerow([row["task"], row["epoch"], repr(row["lr"]),
                             repr(row["plasticity"]), repr(row["distill"]),
                             repr(row["total"]), row["clamp_events"]])

    with open(run_dir / "reliability_bins.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "bin_lo", "bin_hi", "count", "acc", "conf"])
        for task, lo, hi, count, acc, conf in record.reliability:
            writer.writerow([task, repr(lo), repr(hi), count,
                             repr(acc), repr(conf)])
    return run_dir


def _run_one(config_text: str, seed: int, out_root: str) -> str:
    cfg = parse_config_text(config_text)
    record = run_experiment(cfg, seed=seed)
    return str(write_run_dir(record, Path(out_root)))


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    config_text = (Path(args.config)).read_text()
    seeds = args.seed or [cfg.train.seed]
    texts = [config_text]
    if args.matrix_mix:
        # paired records: the same config with mixing force-toggled
        texts = []
        for enabled in (True, False):
            variant = parse_config_text(config_text)
            variant.mix.enabled = enabled
            texts.append(serialize_config(variant))
    jobs = [(t, s) for t in texts for s in seeds]
    workers = max(1, int(os.environ.get("NCCL_LAB_THREADS", "1")))
    if workers == 1 or len(jobs) == 1:
        paths = [_run_one(t, s, args.out) for t, s in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_run_one, [t for t, _ in jobs],
                                  [s for _, s in jobs],
                                  [args.out] * len(jobs)))
    for path in paths:
        print(path)
    return 0


def _collect_metrics(root: Path) -> dict[str, list[dict]]:
    by_config: dict[str, list[dict]] = {}
    for metrics_path in sorted(root.glob("*/*/metrics.json")):
        with open(metrics_path) as fh:
            payload = json.load(fh)
        payload["_dir"] = metrics_path.parent
        by_config.setdefault(payload["config_id"], []).append(payload)
    return by_config


def _dataset_section(run_dir: Path) -> str:
    text = (run_dir / "config.ini").read_text()
    lines = []
    keep = False
    for line in text.splitlines():
        if line.startswith("["):
            keep = line.strip() == "[dataset]"
        if keep and line.strip():
            lines.append(line.strip())
    return "\n".join(lines)


# metric column -> (json key, True if larger is better)
_COMPARE_METRICS = {
    "average_accuracy": ("average_accuracy", True),
    "forgetting": ("forgetting", False),
    "aece": ("aece", False),
    "aoe": ("aoe", False),
}


def compare_rows(by_config: dict[str, list[dict]]) -> list[dict]:
    """Per-config per-metric mean/std with deltas against the first
    config (sorted order) and an improvement marker."""
    datasets = {_dataset_section(r["_dir"])
                for runs in by_config.values() for r in runs}
    if len(datasets) > 1:
        raise ValueError("compare: runs use different [dataset] settings; "
                         "deltas would be meaningless")
    ids = sorted(by_config)
    baseline = ids[0]
    rows = []
    for config_id in ids:
        runs = by_config[config_id]
        for metric, (key, larger_better) in _COMPARE_METRICS.items():
            vals = [r[key] for r in runs if r[key] is not None]
            if not vals:
                continue
            base_vals = [r[key] for r in by_config[baseline]
                         if r[key] is not None]
            mean = float(np.mean(vals))
            delta = mean - float(np.mean(base_vals)) if base_vals else 0.0
            if delta == 0.0:
                direction = "="
            else:
                improved = (delta > 0) == larger_better
                direction = "+" if improved else "-"
            rows.append({
                "config_id": config_id, "metric": metric,
                "seeds": len(vals), "mean": mean,
                "std": float(np.std(vals)), "delta": delta,
                "direction": direction,
            })
    return rows


def cmd_compare(args) -> int:
    root = Path(args.runs)
    by_config = _collect_metrics(root)
    if not by_config:
        print(f"no metrics.json found under {root}", file=sys.stderr)
        return 1
    header = f"{'config':14} {'seeds':>5} {'AA':>8} {'F':>8} " \
             f"{'AECE':>8} {'AOE':>8}"
    print(header)
    for config_id in sorted(by_config):
        runs = by_config[config_id]
        aa = np.mean([r["average_accuracy"] for r in runs])
        fs = [r["forgetting"] for r in runs if r["forgetting"] is not None]
        f_str = f"{np.mean(fs):8.3f}" if fs else f"{'-':>8}"
        aece = np.mean([r["aece"] for r in runs])
        aoe = np.mean([r["aoe"] for r in runs])
        print(f"{config_id:14} {len(runs):5d} {aa:8.3f} {f_str} "
              f"{aece:8.4f} {aoe:8.4f}")
    if args.out:
        try:
            rows = compare_rows(by_config)
        except ValueError as exc:
            print(str(exc), file=sys.stderr)
            return 1
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "config_id", "metric", "seeds", "mean", "std", "delta",
                "direction"])
            writer.writeheader()
            for row in rows:
                row = dict(row)
                for key in ("mean", "std", "delta"):
                    row[key] = repr(row[key])
                writer.writerow(row)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nccl-lab",
        description="Desk-scale continual-learning lab with fixed "
                    "simplex prototypes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one config over seeds")
    p_run.add_argument("--config", required=True, help="INI config file")
    p_run.add_argument("--seed", type=int, action="append",
                       help="seed to run (repeatable; default from config)")
    p_run.add_argument("--out", default="runs", help="output root directory")
    p_run.add_argument("--matrix-mix", action="store_true",
                       help="also run the config with mixing toggled, "
                            "producing paired run directories")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate metrics across runs")
    p_cmp.add_argument("--runs", default="runs", help="runs root directory")
    p_cmp.add_argument("--out", default=None,
                       help="write a per-metric comparison CSV here")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
