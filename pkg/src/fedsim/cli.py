"""Command-line entry point.

Commands:
  simulate  run one experiment and write metrics.csv / summary.json /
            resolved-config.json to the output directory
  ablate    run every ablation variant on the same seeds side by side
  validate  sanity-check a config and its dataset without running

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
The FEDSIM_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config, load_dataset, to_experiment_config
from .errors import ConfigurationError, DataFormatError, NumericError
from .harness import ABLATIONS, FeatureSettings, prepare_user_samples, run_experiment

log = logging.getLogger("fedsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _apply_overrides(resolved: dict, args) -> dict:
    if args.seed is not None:
        resolved["master_seed"] = args.seed
    if args.output is not None:
        resolved["output_dir"] = args.output
    return resolved


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    resolved = _apply_overrides(load_config(args.config), args)
    cfg = to_experiment_config(resolved, threads=args.threads)
    streams, activities = load_dataset(resolved["dataset"])
    report = run_experiment(cfg, streams, activities)
    outdir = Path(resolved["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    report.write_csv(outdir / "metrics.csv")
    _write_json(outdir / "summary.json", report.summary())
    _write_json(outdir / "resolved-config.json", resolved)
    summary = report.summary()
    print(f"wrote {outdir / 'metrics.csv'} ({len(report.rows)} rows)")
    print(f"test macro-F1: baseline {summary['ts_macro_f1']['baseline_mean']:.3f} "
          f"-> final {summary['ts_macro_f1']['final_mean']:.3f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    resolved = _apply_overrides(load_config(args.config), args)
    streams, activities = load_dataset(resolved["dataset"])
    outdir = Path(resolved["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    comparison = {}
    import csv as _csv

    from .harness import CSV_HEADER

    with open(outdir / "ablation.csv", "w", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(("variant", *CSV_HEADER))
        for variant in ABLATIONS:
            variant_resolved = dict(resolved, ablation=variant)
            cfg = to_experiment_config(variant_resolved, threads=args.threads)
            report = run_experiment(cfg, streams, activities)
            for r in report.rows:
                writer.writerow([
                    variant, r.repeat, r.shard, r.round, r.split, r.metric,
                    r.activity if r.activity is not None else "",
                    repr(r.value) if r.value is not None else "",
                ])
            last = cfg.shards_per_user
            comparison[variant] = {
                "final_shard_tr_macro_f1": report.mean(split="Tr", metric="macro_f1", shard=last),
                "final_shard_question_rate": report.mean(split="Tr", metric="question_rate", shard=last),
                "ts_final_macro_f1": report.ts_final_mean(),
            }
            print(f"{variant}: Tr F1 {comparison[variant]['final_shard_tr_macro_f1']:.3f}, "
                  f"question rate {comparison[variant]['final_shard_question_rate']:.3f}")
    _write_json(outdir / "ablation-summary.json", comparison)
    return EXIT_OK


def cmd_validate(args) -> int:
    resolved = _apply_overrides(load_config(args.config), args)
    streams, activities = load_dataset(resolved["dataset"])
    feats = FeatureSettings(
        window_len=resolved["features"]["window_len"],
        overlap=resolved["features"]["overlap"],
    )
    per_user = prepare_user_samples(streams, sorted(activities), feats)
    sh = resolved["shards_per_user"]
    counts = {u: len(samples) for u, samples in per_user.items()}
    histogram: dict[str, int] = {name: 0 for name in sorted(activities)}
    index_to_name = dict(enumerate(sorted(activities)))
    for samples in per_user.values():
        for s in samples:
            histogram[index_to_name[int(s.true_label)]] += 1

    print(f"users: {len(counts)}")
    print(f"windows per user: min {min(counts.values())}, max {max(counts.values())}, "
          f"total {sum(counts.values())}")
    print("class histogram:")
    for name in sorted(histogram):
        print(f"  {name}: {histogram[name]}")

    too_small = sorted(u for u, c in counts.items() if c < sh)
    if too_small:
        raise DataFormatError(
            f"user {too_small[0]} has {counts[too_small[0]]} windows, fewer than "
            f"{sh} shards (affected users: {', '.join(too_small)})"
        )
    missing = sorted(name for name, c in histogram.items() if c == 0)
    if missing:
        raise DataFormatError(f"whitelisted activities never occur: {', '.join(missing)}")
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated semi-supervised activity recognition simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("simulate", cmd_simulate), ("ablate", cmd_ablate), ("validate", cmd_validate)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override master_seed from the config")
        p.add_argument("--threads", type=int, default=1, help="parallel client workers (default 1)")
        p.add_argument("--output", default=None, help="override output_dir from the config")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FEDSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
