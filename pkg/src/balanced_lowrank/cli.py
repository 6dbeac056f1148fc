"""Command-line front-end for runs, merge sweeps, spectra and metric tables.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 parse error.
Failures print one line ``error: <ErrorClass>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .adapter import load_updates, materialize
from .errors import BalancedLowRankError, ConfigError
from .harness.config import MODES, ExperimentConfig, load_config
from .harness.experiments import baseline_run, merge_experiment, run_sequence, write_merge, write_run
from .harness.metrics import MetricsReport, load_accuracy, write_metrics_csv
from .spectral import spectrum, write_spectrum_csv

logger = logging.getLogger("balanced_lowrank")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="balanced-lowrank",
        description="Structured low-rank continual learning experiments on a synthetic benchmark.",
    )
    p.add_argument("--mode", choices=MODES, help="command to run (default: the config's mode)")
    p.add_argument("--config", help="JSON configuration or a manifest from an earlier run")
    p.add_argument("--seed", type=int, help="64-bit seed; overrides the config")
    p.add_argument("--out", help="output directory (required by run, baseline, merge-experiment)")
    p.add_argument("inputs", nargs="*", help="matrix CSVs (metrics), checkpoints (spectrum) or run dirs (compare)")
    return p


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.mode:
        config = config.with_updates(mode=args.mode)
    elif not args.config:
        raise ConfigError("missing required field: mode (pass --mode or a config)")
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
    return config


def _need_out(args) -> str:
    if not args.out:
        raise ConfigError("missing required field: out (pass --out <dir>)")
    return args.out


def _need_inputs(args, count: int | None = None) -> list[str]:
    if not args.inputs or (count is not None and len(args.inputs) != count):
        want = f"exactly {count}" if count else "at least one"
        raise ConfigError(f"mode {args.mode} needs {want} input path(s)")
    return args.inputs


def cmd_run(config: ExperimentConfig, out: str) -> int:
    if config.seed is None:
        raise ConfigError("missing required field: seed")
    runner = run_sequence if config.mode == "run" else baseline_run
    result = runner(config)
    for name in write_run(out, result):
        print(os.path.join(out, name))
    return 0


def cmd_merge_experiment(config: ExperimentConfig, out: str) -> int:
    if config.seed is None:
        raise ConfigError("missing required field: seed")
    report = merge_experiment(config)
    report.write_csv(sys.stdout)
    write_merge(out, report, config)
    return 0


def cmd_metrics(paths) -> int:
    for path in paths:
        if len(paths) > 1:
            print(f"# {path}")
        write_metrics_csv(MetricsReport.from_matrix(load_accuracy(path)), sys.stdout)
    return 0


def cmd_spectrum(paths, out: str | None) -> int:
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        for upd in load_updates(path):
            report = spectrum(materialize(upd), rank=upd.rank)
            print(f"{stem} layer {upd.layer_index}: rank={upd.rank} cv={report.cv:.3e} "
                  f"variance={report.variance:.3e}")
            if out:
                os.makedirs(out, exist_ok=True)
                target = os.path.join(out, f"spectrum_{stem}_layer{upd.layer_index}.csv")
                with open(target, "w", encoding="utf-8") as fh:
                    write_spectrum_csv(report, fh)
    return 0


def _metrics_of(path: str) -> MetricsReport:
    if os.path.isdir(path):
        path = os.path.join(path, "accuracy.csv")
    return MetricsReport.from_matrix(load_accuracy(path))


def cmd_compare(path_a: str, path_b: str) -> int:
    a, b = _metrics_of(path_a), _metrics_of(path_b)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["metric", "a", "b", "delta", "sign"])
    signs = []
    for name in MetricsReport.NAMES:
        va, vb = getattr(a, name), getattr(b, name)
        if va is None or vb is None:
            continue
        delta = vb - va
        sign = "+" if delta > 0 else "-" if delta < 0 else "0"
        signs.append(sign)
        writer.writerow([name, f"{va:.4f}", f"{vb:.4f}", f"{delta:.4f}", sign])
    print(f"# b higher on {signs.count('+')}, lower on {signs.count('-')}, "
          f"equal on {signs.count('0')} of {len(signs)} metrics")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _resolve(args)
        args.mode = config.mode
        if config.mode in ("run", "baseline"):
            return cmd_run(config, _need_out(args))
        if config.mode == "merge-experiment":
            return cmd_merge_experiment(config, _need_out(args))
        if config.mode == "metrics":
            return cmd_metrics(_need_inputs(args))
        if config.mode == "spectrum":
            return cmd_spectrum(_need_inputs(args), args.out)
        return cmd_compare(*_need_inputs(args, 2))
    except BalancedLowRankError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
