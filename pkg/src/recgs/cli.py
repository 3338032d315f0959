"""Command-line entry point.

    recgs synth    --out DATA [--config spec.json] [--seed N]
    recgs train    DATA --method vanilla|recurrent|joint --out RES [--config train.json]
                   [--seed N] [--k K] [--threshold T] [--max-iterations M]
    recgs baseline DATA --out RES [--window W]
    recgs eval     RES DATA [--out metrics.txt]

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from . import io
from .metrics import evaluate, report_lines
from .optim import DivergenceError
from .synth import BenchmarkSpec

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("recgs")


class ConfigError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def cmd_synth(args):
    raw = _load_config(args.config)
    try:
        spec = BenchmarkSpec.from_dict(raw)
        if args.seed is not None:
            spec = BenchmarkSpec.from_dict({**spec.as_dict(),
                                            "scene": {**spec.as_dict()["scene"], "seed": args.seed},
                                            "caustic": {**spec.as_dict()["caustic"], "seed": args.seed}})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = ex.synth_dataset(spec, args.out)
    print(f"wrote {len(list((out / 'images').glob('*.rcgf')))} frames to {out}")


def _train_config(args) -> ex.TrainConfig:
    raw = _load_config(args.config)
    try:
        cfg = ex.TrainConfig.from_dict(raw)
        return cfg.with_overrides(seed=args.seed, k=args.k, threshold=args.threshold,
                                  max_iterations=args.max_iterations)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args):
    cfg = _train_config(args)
    ds = ex.read_dataset(args.dataset)
    out = io.ensure_dir(args.out)
    if args.method == "vanilla":
        result = ex.run_vanilla(ds, cfg)
    elif args.method == "joint":
        result = ex.run_joint(ds, cfg)
    else:
        def progress(rec):
            log.info("iteration %d delta %.6g", rec["iteration"], rec["delta"])
        result = ex.run_recurrent(ds, cfg, progress=progress)
    ex.write_results(result, out, dict(method=args.method, train=cfg.as_dict()), args.dataset)
    if args.method == "recurrent":
        state = "converged" if result.converged else "not converged"
        print(f"recurrent: {state} after {result.iterations} iterations")
    print(f"wrote results to {out}")


def cmd_baseline(args):
    if args.window < 1 or args.window % 2 == 0:
        raise ConfigError(f"--window must be a positive odd integer, got {args.window}")
    ds = ex.read_dataset(args.dataset)
    result = ex.run_baseline(ds, args.window)
    out = ex.write_results(result, args.out, dict(method="baseline", window=args.window), args.dataset)
    print(f"wrote results to {out}")


def cmd_eval(args):
    res = ex.read_results(args.results)
    ds = ex.read_dataset(args.dataset)
    if len(res["renders"]) != len(ds.images) or res["renders"][0].shape != ds.images[0].shape:
        raise ConfigError("results and dataset do not match in frame count or size")
    if ds.clean is None:
        raise ConfigError("dataset has no clean ground truth to evaluate against")
    report = evaluate(res["renders"], ds.clean, res["caustics"], ds.gt_caustics)
    text = "\n".join(report_lines(report)) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recgs", description="Recurrent caustic removal for Gaussian splatting.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", help="JSON benchmark spec (missing keys take defaults)")
    p.add_argument("--seed", type=int, help="seed for scene and caustics")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model to a dataset")
    p.add_argument("dataset")
    p.add_argument("--method", choices=ex.METHODS, default="recurrent")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--seed", type=int, help="frame-order seed")
    p.add_argument("--k", type=int, help="number of kept frequencies")
    p.add_argument("--threshold", type=float, help="convergence threshold on the caustic change")
    p.add_argument("--max-iterations", type=int, help="recurrence iteration cap")
    p.add_argument("--out", required=True, help="results directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("baseline", help="motion-compensated temporal median filtering")
    p.add_argument("dataset")
    p.add_argument("--window", type=int, default=7, help="odd number of frames per window")
    p.add_argument("--out", required=True, help="results directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="metrics of a results directory against ground truth")
    p.add_argument("results")
    p.add_argument("dataset")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"recgs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"recgs: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, io.FormatError) as exc:
        print(f"recgs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
