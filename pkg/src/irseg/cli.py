"""Command-line interface: train, segment, eval, synth, bench, overlay.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite values encountered). The IRSEG_LOG environment
variable (error, warn, info, debug) sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import errors, pipeline
from .synthetic import BENCHMARK_SCENE_NAMES

logger = logging.getLogger("irseg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_EXCEPTIONS = (errors.ConfigError, errors.UnknownSceneError, errors.WrongKError, errors.ChannelMismatchError)
_NUMERIC_EXCEPTIONS = (errors.NonFiniteError,)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# Flags that map one-to-one onto PipelineConfig / FeatureConfig keys.
_OVERRIDE_KEYS = [
    ("input-dir", str),
    ("pattern", str),
    ("output-dir", str),
    ("method", str),
    ("k", int),
    ("seed", int),
    ("use-intensity", bool),
    ("use-flow-mag", bool),
    ("use-divergence", bool),
    ("use-sift-flow", bool),
    ("training-frames", int),
    ("kmeans-max-iters", int),
    ("kmeans-tol", float),
    ("gmm-max-iters", int),
    ("gmm-tol", float),
    ("gmm-reg", float),
    ("mrf-beta", float),
    ("mrf-max-sweeps", int),
    ("gmrf-lambda", float),
    ("gmrf-kappa", float),
    ("gmrf-max-sweeps", int),
    ("gmrf-tol", float),
    ("flow-alpha", float),
    ("flow-max-iters", int),
    ("flow-tol", float),
    ("sift-cell-size", int),
    ("sift-eta", float),
    ("sift-alpha", float),
    ("sift-t", float),
    ("sift-d", float),
    ("sift-radius", int),
    ("sift-bp-iters", int),
    ("truth-dir", str),
    ("jobs", int),
    ("dump-flow", bool),
]


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    for flag, kind in _OVERRIDE_KEYS:
        dest = flag.replace("-", "_")
        if kind is bool:
            parser.add_argument(f"--{flag}", dest=dest, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(f"--{flag}", dest=dest, type=kind, default=None)


def _config_from_args(args):
    overrides = {}
    for flag, _ in _OVERRIDE_KEYS:
        dest = flag.replace("-", "_")
        val = getattr(args, dest, None)
        if val is not None:
            overrides[dest] = val
    return pipeline.load_config(args.config, overrides)


def build_parser():
    parser = argparse.ArgumentParser(prog="irseg", description="Unsupervised fire/smoke segmentation of IR frame sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit channel stats and the cluster model on the leading frames")
    _add_config_flags(p_train)

    p_seg = sub.add_parser("segment", help="segment every frame after the training prefix")
    _add_config_flags(p_seg)
    p_seg.add_argument("--model", help="model.json path (defaults to <output-dir>/model.json)")

    p_eval = sub.add_parser("eval", help="compare predicted label maps against ground truth")
    p_eval.add_argument("--pred-dir", required=True)
    p_eval.add_argument("--truth-dir", required=True)
    p_eval.add_argument("--output-dir", required=True)

    p_synth = sub.add_parser("synth", help="write a pinned synthetic benchmark scene")
    p_synth.add_argument("scene", help=f"one of: {', '.join(BENCHMARK_SCENE_NAMES)}")
    p_synth.add_argument("--output-dir", required=True)

    p_bench = sub.add_parser("bench", help="run every method and feature set over the benchmark suite")
    p_bench.add_argument("--output-dir", required=True)

    p_overlay = sub.add_parser("overlay", help="render class overlays for frames plus label maps")
    p_overlay.add_argument("--input-dir", required=True)
    p_overlay.add_argument("--pattern", default="*.pgm")
    p_overlay.add_argument("--labels-dir", required=True)
    p_overlay.add_argument("--output-dir", required=True)
    return parser


def _run(args):
    if args.command == "train":
        cfg = _config_from_args(args)
        path = pipeline.cmd_train(cfg)
        print(path)
        return EXIT_OK
    if args.command == "segment":
        cfg = _config_from_args(args)
        model = args.model or os.path.join(cfg.output_dir, "model.json")
        written = pipeline.cmd_segment(cfg, model)
        print(f"{len(written)} label maps written to {cfg.output_dir}")
        return EXIT_OK
    if args.command == "eval":
        report = pipeline.cmd_eval(args.pred_dir, args.truth_dir, args.output_dir)
        print("pooled accuracy %.6f" % report["pooled"]["accuracy"])
        return EXIT_OK
    if args.command == "synth":
        manifest = pipeline.cmd_synth(args.scene, args.output_dir)
        print(manifest)
        return EXIT_OK
    if args.command == "bench":
        rows, pooled = pipeline.cmd_bench(args.output_dir)
        for (method, fset), rep in sorted(pooled.items()):
            print("%s/%s pooled accuracy %.6f" % (method, fset, rep["accuracy"]))
        return EXIT_OK
    if args.command == "overlay":
        written = pipeline.cmd_overlay(args.input_dir, args.pattern, args.labels_dir, args.output_dir)
        print(f"{len(written)} overlays written to {args.output_dir}")
        return EXIT_OK
    raise errors.ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    level = _LOG_LEVELS.get(os.environ.get("IRSEG_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except _CONFIG_EXCEPTIONS as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except _NUMERIC_EXCEPTIONS as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (errors.IrsegError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
