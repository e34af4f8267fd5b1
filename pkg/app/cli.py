# ───────────────────────────────────────────────────────────────────────────────
# app/cli.py
"""
Command line: train, ablation, theory-check, gradcheck, sample.

Exit codes: 0 success, 1 failed checks, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from app.ablation import DEFAULT_SEEDS, run_ablation
from app.checks import all_passed, run_gradient_checks, run_theory_checks, write_report
from app.core import ConfigError, GanLabError
from app.nn import forward, load_checkpoint
from app.plotting import write_scatter_svg
from app.storage import store
from app.synth import SampleSet, sample_mixture
from app.train import PRESETS, load_config, train, write_artifacts

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _out_dir() -> str:
    return os.getenv("GAN_OUT_DIR", "out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softmax-gan", description="Softmax GAN laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run from a JSON config")
    p.add_argument("--config", required=True, help="path to the JSON config")
    p.add_argument("--out", help="run directory (default: $GAN_OUT_DIR/<variant>-seed<seed>)")
    p.add_argument("--timing", action="store_true", help="record wall-clock ms per logged cycle (default: 0)")

    p = sub.add_parser("ablation", help="softmax vs. baseline under a named preset")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    p.add_argument("--cycles", type=int, help="override total_cycles")
    p.add_argument("--workers", type=int, help="parallel runs (default: $GAN_WORKERS or 1)")
    p.add_argument("--out", help="directory for per-run artifacts")
    p.add_argument("--report", help="write the comparison as JSON")

    p = sub.add_parser("theory-check", help="exact checks on finite state spaces")
    p.add_argument("--report", help="JSON report path (default: $GAN_OUT_DIR/theory_report.json)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    p.add_argument("--report", help="JSON report path (default: $GAN_OUT_DIR/gradcheck_report.json)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)

    p = sub.add_parser("sample", help="draw from a saved generator")
    p.add_argument("--checkpoint", required=True, help="run directory or checkpoint.json")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: the run directory)")
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    artifacts = train(config)
    out = args.out or os.path.join(_out_dir(), f"{config.loss_variant}-seed{config.seed}")
    write_artifacts(artifacts, out, include_timing=args.timing)
    summary = artifacts.summary()
    print(
        f"verdict={summary['verdict']} coverage={summary['final_coverage']}/{summary['n_modes']} "
        f"saturated_at={summary['saturated_at']} -> {out}"
    )
    return EXIT_OK


def _cmd_ablation(args: argparse.Namespace) -> int:
    overrides = {} if args.cycles is None else {"total_cycles": args.cycles}
    report = run_ablation(args.preset, seeds=args.seeds, workers=args.workers, out_dir=args.out, **overrides)
    print(report.format_table())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return EXIT_OK


def _run_checks(suite: str, results, report: Optional[str], default_name: str) -> int:
    path = report or os.path.join(_out_dir(), default_name)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_report(path, suite, results)
    store.record_checks(suite, [r.to_dict() for r in results])
    failed = [r.name for r in results if not r.passed]
    print(f"{suite}: {len(results) - len(failed)}/{len(results)} checks passed -> {path}")
    for name in failed:
        print(f"  FAILED {name}")
    return EXIT_OK if all_passed(results) else EXIT_FAILED


def _resolve_checkpoint(path: str) -> tuple[str, str]:
    """(checkpoint file, run directory)."""
    if os.path.isdir(path):
        return os.path.join(path, "checkpoint.json"), path
    return path, os.path.dirname(os.path.abspath(path))


def _cmd_sample(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigError("must be >= 1", field="n")
    ckpt, run_dir = _resolve_checkpoint(args.checkpoint)
    networks = load_checkpoint(ckpt)
    if "generator" not in networks:
        raise ConfigError("checkpoint holds no generator network", field="checkpoint")
    spec, params = networks["generator"]
    logger.info(f"[CLI] generator {spec.layer_sizes} from {ckpt}")

    rng = np.random.default_rng(args.seed)
    z = rng.standard_normal((args.n, spec.input_dim))
    generated = SampleSet(forward(spec, params, z), seed=args.seed)

    config_path = os.path.join(run_dir, "config.json")
    if os.path.exists(config_path):
        real = sample_mixture(load_config(config_path).data_mixture(), args.n, rng)
    else:
        real = SampleSet(np.zeros((0, 2)))

    out = args.out or run_dir
    os.makedirs(out, exist_ok=True)
    generated.to_csv(os.path.join(out, "samples.csv"))
    write_scatter_svg(os.path.join(out, "scatter.svg"), real, generated, title=f"samples seed={args.seed}")
    print(f"wrote {args.n} samples -> {out}")
    return EXIT_OK


def cli_main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("GAN_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "ablation":
            return _cmd_ablation(args)
        if args.command == "theory-check":
            return _run_checks("theory", run_theory_checks(args.seed), args.report, "theory_report.json")
        if args.command == "gradcheck":
            results = run_gradient_checks(args.seed, instances=args.instances)
            return _run_checks("gradient", results, args.report, "gradcheck_report.json")
        if args.command == "sample":
            return _cmd_sample(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, KeyError, ValueError, GanLabError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE
