"""Command-line entry point: ``flowact <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Every run writes a run manifest (resolved config, seed, version, thread
count, timestamps, argv) as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, profiles
from .data.dataset import (DatasetError, Preprocessing, build_input, make_sample, load_frames, open_dataset,
                           prepare_dataset)
from .data.ppm import ImageFormatError, read_ppm, write_ppm
from .data.synth import synth_generate
from .evaluation import cross_validate, dumps_report, render_text, report_dict
from .flow import FlowConfigError, FlowParams, farneback_flow, flow_to_rgb, to_grayscale
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import model_forward
from .tensor_core import FormatError, NumericError, SeededRng, ShapeError, save_ften
from .training import ConfigError, LabelError, train

log = logging.getLogger("flowact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _now():
    return datetime.now(timezone.utc).isoformat()


class RunRecorder:
    """Collects the run manifest for one invocation."""

    def __init__(self, command, argv, threads):
        self.data = {"subcommand": command, "argv": list(argv), "tool_version": __version__,
                     "threads": threads, "rng_algorithm": SeededRng.algorithm, "numpy": np.__version__,
                     "python": platform.python_version(), "started": _now(), "config": {}}

    def write(self, path):
        self.data["finished"] = _now()
        text = json.dumps(self.data, indent=2, sort_keys=True) + "\n"
        if path == "-":
            sys.stderr.write(text)
        else:
            Path(path).write_text(text)


# --- commands ---------------------------------------------------------------

def _flow_params(args, base: FlowParams) -> FlowParams:
    kw = {}
    for flag, key in (("levels", "pyramid_levels"), ("scale", "pyramid_scale"), ("win", "expansion_window"),
                      ("iters", "iterations_per_level"), ("sigma", "window_sigma"), ("avg", "averaging_window")):
        v = getattr(args, flag)
        if v is not None:
            kw[key] = v
    return replace(base, **kw)


def cmd_flow_compute(args, run):
    params = _flow_params(args, FlowParams())
    a = to_grayscale(read_ppm(args.a))
    b = to_grayscale(read_ppm(args.b))
    flow = farneback_flow(a, b, params)
    save_ften(args.out, flow.as_array())
    if args.viz:
        write_ppm(args.viz, flow_to_rgb(flow, args.max_mag))
    run.data["config"] = {"flow": params.to_dict(), "max_mag": args.max_mag, "inputs": [args.a, args.b]}
    mag = flow.magnitude()
    print(json.dumps({"out": args.out, "max_magnitude": float(mag.max()), "mean_magnitude": float(mag.mean())}))
    return args.run_manifest or f"{args.out}.run.json"


def cmd_synth(args, run):
    cfg = replace(profiles.synth_config(args.profile, args.n), **{
        k: v for k, v in (("size", args.size), ("square", args.square), ("noise", args.noise)) if v is not None})
    manifest = synth_generate(args.out, cfg, args.seed)
    run.data["seed"] = args.seed
    run.data["config"] = {"synth": manifest.generator}
    print(json.dumps({"root": args.out, "videos": len(manifest.entries)}))
    return args.run_manifest or f"{str(args.out).rstrip('/')}.run.json"


def _preprocessing(args) -> Preprocessing:
    prep = profiles.preprocessing(args.profile)
    if getattr(args, "size", None):
        prep = replace(prep, size=args.size)
    return prep


def cmd_data_prepare(args, run):
    manifest = open_dataset(args.root)
    manifest.check()
    prep = _preprocessing(args)
    inputs, labels, ids = prepare_dataset(manifest, prep, cache=args.cache)
    run.data["config"] = {"preprocessing": prep.to_dict(), "cache": args.cache}
    if args.out:
        save_ften(args.out, inputs)
    print(json.dumps({"videos": len(ids), "input_shape": list(inputs.shape[1:]),
                      "class_counts": np.bincount(labels, minlength=len(manifest.classes)).tolist()}))
    return args.run_manifest or (f"{args.out}.run.json" if args.out else "-")


def _train_config(args):
    overrides = {"seed": args.seed}
    for flag in ("epochs", "batch_size", "lr", "alpha", "t0", "penalty"):
        v = getattr(args, flag)
        if v is not None:
            overrides[flag] = v
    if args.optimal:
        overrides["schedule"] = "optimal"
    return profiles.train_config(args.profile, **overrides)


def _load_dataset(args):
    manifest = open_dataset(args.data)
    manifest.check()
    prep = _preprocessing(args)
    mcfg = profiles.model_config(args.profile)
    if prep.size != mcfg.height:
        mcfg = replace(mcfg, height=prep.size, width=prep.size)
    inputs, labels, ids = prepare_dataset(manifest, prep, cache=args.cache)
    return manifest, prep, mcfg, inputs, labels, ids


def cmd_train(args, run):
    manifest, prep, mcfg, inputs, labels, ids = _load_dataset(args)
    tcfg = _train_config(args)
    run.data["seed"] = args.seed
    run.data["config"] = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "preprocessing": prep.to_dict(),
                          "profile": args.profile, "data": str(args.data), "full_profile": mcfg.is_full_profile}
    state, history = train(inputs, labels, mcfg, tcfg,
                           progress=lambda r: log.info("epoch %d loss %.4f acc %.3f", r.epoch, r.loss, r.acc))
    save_checkpoint(args.out, state, mcfg, meta={"preprocessing": prep.to_dict(), "train": tcfg.to_dict(),
                                                  "classes": manifest.classes})
    if args.history:
        Path(args.history).write_text(history.to_csv())
    last = history.epochs[-1] if len(history) else None
    print(json.dumps({"out": args.out, "epochs": len(history),
                      "final_loss": last.loss if last else None, "final_acc": last.acc if last else None}))
    return args.run_manifest or f"{args.out}.run.json"


def cmd_eval_kfold(args, run):
    manifest, prep, mcfg, inputs, labels, ids = _load_dataset(args)
    tcfg = _train_config(args)
    config = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "preprocessing": prep.to_dict(), "k": args.k,
              "seed": args.seed, "profile": args.profile, "data": str(args.data)}
    run.data["seed"] = args.seed
    run.data["config"] = config
    reports, mean_acc = cross_validate(inputs, labels, ids, mcfg, tcfg, k=args.k, seed=args.seed,
                                       progress=lambda r: log.info("fold %d accuracy %.4f", r.fold, r.accuracy))
    Path(args.out).write_text(dumps_report(report_dict(reports, mean_acc, config)))
    names = sorted(manifest.classes, key=manifest.classes.get)
    text = render_text(reports, mean_acc, names)
    if args.text:
        Path(args.text).write_text(text)
    sys.stdout.write(text)
    return args.run_manifest or f"{args.out}.run.json"


def cmd_predict(args, run):
    state, mcfg, meta = load_checkpoint(args.model)
    prep = Preprocessing.from_dict(meta["preprocessing"]) if "preprocessing" in meta else Preprocessing()
    sample = make_sample(load_frames(args.video), 0, Path(args.video).name, prep)
    x = build_input(sample, prep.max_mag)[None]
    probs = model_forward(x, state, mcfg)[0]
    run.data["config"] = {"model": mcfg.to_dict(), "preprocessing": prep.to_dict(), "checkpoint": args.model}
    print(json.dumps({"class": int(np.argmax(probs)), "probabilities": [float(p) for p in probs]}))
    return args.run_manifest or "-"


# --- parser -----------------------------------------------------------------

def _add_common(p):
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS threads (default 1)")
    p.add_argument("--run-manifest", help="where to write the run manifest ('-' for stderr)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_profile(p):
    p.add_argument("--profile", choices=profiles.PROFILES, default="full")
    p.add_argument("--size", type=int, help="override frame size")
    p.add_argument("--cache", action="store_true", help="persist assembled inputs as FTEN beside each video")


def _add_training(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="constant learning rate")
    p.add_argument("--optimal", action="store_true", help="use 1/(alpha (t0 + t)) schedule")
    p.add_argument("--alpha", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--penalty", choices=("none", "l2"))
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="flowact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    flow = sub.add_parser("flow", help="optical flow tools")
    flow_sub = flow.add_subparsers(dest="action", required=True, parser_class=_Parser)
    fc = flow_sub.add_parser("compute", help="dense flow between two PPM frames")
    fc.add_argument("--a", required=True)
    fc.add_argument("--b", required=True)
    fc.add_argument("--out", required=True, help="FTEN (h, w, 2) output")
    fc.add_argument("--viz", help="PPM visualization output")
    fc.add_argument("--max-mag", type=float, default=4.0)
    fc.add_argument("--levels", type=int)
    fc.add_argument("--scale", type=float)
    fc.add_argument("--win", type=int)
    fc.add_argument("--iters", type=int)
    fc.add_argument("--sigma", type=float)
    fc.add_argument("--avg", type=int)
    _add_common(fc)
    fc.set_defaults(func=cmd_flow_compute)

    sy = sub.add_parser("synth", help="generate a synthetic motion dataset")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n", type=int, default=250)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--profile", choices=profiles.PROFILES, default="full")
    sy.add_argument("--size", type=int)
    sy.add_argument("--square", type=int)
    sy.add_argument("--noise", type=float)
    _add_common(sy)
    sy.set_defaults(func=cmd_synth)

    data = sub.add_parser("data", help="dataset tools")
    data_sub = data.add_subparsers(dest="action", required=True, parser_class=_Parser)
    dp = data_sub.add_parser("prepare", help="assemble model inputs for a dataset")
    dp.add_argument("--root", required=True)
    dp.add_argument("--out", help="optional FTEN of all stacked inputs")
    _add_profile(dp)
    _add_common(dp)
    dp.set_defaults(func=cmd_data_prepare)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--history", help="CSV of per-epoch statistics")
    _add_training(tr)
    _add_profile(tr)
    _add_common(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluation")
    ev_sub = ev.add_subparsers(dest="action", required=True, parser_class=_Parser)
    kf = ev_sub.add_parser("kfold", help="k-fold cross-validation")
    kf.add_argument("--data", required=True)
    kf.add_argument("--k", type=int, default=5)
    kf.add_argument("--out", required=True, help="JSON report")
    kf.add_argument("--text", help="also write the text tables here")
    _add_training(kf)
    _add_profile(kf)
    _add_common(kf)
    kf.set_defaults(func=cmd_eval_kfold)

    pr = sub.add_parser("predict", help="classify one video directory")
    pr.add_argument("--model", required=True)
    pr.add_argument("--video", required=True)
    _add_common(pr)
    pr.set_defaults(func=cmd_predict)
    return parser


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    command = " ".join(filter(None, [args.command, getattr(args, "action", None)]))
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    run = RunRecorder(command, argv, args.threads)
    limiter = _limit_threads(args.threads)
    t0 = time.perf_counter()
    try:
        manifest_path = args.func(args, run)
    except (UsageError, ConfigError, FlowConfigError, LabelError) as exc:
        print(f"flowact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"flowact: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ImageFormatError, FormatError, ShapeError, OSError, KeyError) as exc:
        print(f"flowact: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"flowact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    run.data["seconds"] = round(time.perf_counter() - t0, 3)
    run.write(manifest_path)
    return EXIT_OK


def rerun(manifest_path) -> int:
    """Re-execute the command recorded in a run manifest."""
    data = json.loads(Path(manifest_path).read_text())
    return main(data["argv"])


if __name__ == "__main__":
    sys.exit(main())
