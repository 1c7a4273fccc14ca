"""Command-line entry point: ``gaid <subcommand> ...``.

Machine-readable JSON goes to stdout (or ``--out`` where that names a
file); a short human summary goes to stderr. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from . import tensor_core as tc
from .config import RunConfig, describe_defaults
from .evaluation import evaluate, write_rank_csv
from .feature_io import Dataset, GFTError, ManifestError, SynthConfig, gen_synthetic, load_manifest, write_manifest
from .geometry import cap_fraction_approx_log, cap_fraction_log
from .train.graph import NumericError
from .train.loop import train
from .train.params import CheckpointError, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gaid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default)


def _emit(doc, out: str | None = None) -> None:
    text = dumps(doc) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    if "GAID_SEED" in os.environ:
        return int(os.environ["GAID_SEED"])
    return default


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _run_config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        doc[key.strip()] = _parse_value(value)
    try:
        cfg = RunConfig.from_dict(doc)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load(path) -> Dataset:
    return load_manifest(path)


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = SynthConfig(args.samples, args.frames, args.dim, args.rho, args.blank_fraction, args.text_noise,
                      args.frame_noise, args.audio_noise, args.shared_offset, args.silent_fraction)
    seed = _seed(args)
    ds = gen_synthetic(cfg, seed)
    out = Path(args.out)
    manifest = write_manifest(ds, out, tc.get_dtype())
    labels = {
        "seed": seed,
        "config": vars(cfg),
        "informative": ds.meta["informative"].astype(int),
        "blank": ds.meta["blank"].astype(int),
    }
    (out / "labels.json").write_text(dumps(labels) + "\n", encoding="utf-8")
    _emit({"manifest": str(manifest), "samples": len(ds), "frames": cfg.frames, "d_model": cfg.d_model,
           "seed": seed, "informative": int(ds.meta["informative"].sum())})
    _say(f"wrote {len(ds)} clips to {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.precision is None:
        tc.set_precision(cfg.precision)
    ds = _load(args.manifest)
    val = _load(args.val_manifest) if args.val_manifest else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "metrics.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def record(entry):
            fh.write(json.dumps(entry, sort_keys=True, default=_json_default) + "\n")
            fh.flush()
            r1 = entry["val_r1"]
            loss = entry["train_loss"]
            _say(f"epoch {entry['epoch']}: loss {'-' if loss is None else f'{loss:.4f}'} val R@1 {r1:.2f}")

        params, history = train(ds, cfg, val, callback=record)
    best = max(history, key=lambda h: h["val_r1"])
    ckpt = save_checkpoint(params, out / "checkpoint", cfg, {"best_epoch": best["epoch"]})
    _emit({"checkpoint": str(ckpt), "metrics_log": str(log_path), "best_epoch": best["epoch"],
           "best_val_r1": best["val_r1"], "epochs": cfg.epochs, "config": cfg.to_dict()})
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if (ckpt / "checkpoint" / "index.json").exists():
        ckpt = ckpt / "checkpoint"
    params, _ = load_checkpoint(ckpt)
    ds = _load(args.manifest)
    res = evaluate(params, ds, args.mode, args.stp_samples, args.dsl_beta, seed=_seed(args))
    doc = res.to_dict()
    if args.dsl == "off":
        doc["dsl"] = None
    if args.ranks_csv:
        write_rank_csv(args.ranks_csv, res)
    _emit(doc, args.out)
    m = res.t2v
    _say(f"{args.mode}: t2v R@1 {m.r1:.2f} R@5 {m.r5:.2f} R@10 {m.r10:.2f} MdR {m.mdr:g} MnR {m.mnr:.2f} "
         f"({res.cost.forward_passes_per_query} pass/query, {res.cost.wall_time:.3f}s scoring)")
    return EXIT_OK


def _ablation_config(args) -> experiments.AblationConfig:
    cfg = experiments.AblationConfig()
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else cfg.seeds
    if args.seed is not None and not args.seeds:
        seeds = (args.seed,)
    run = cfg.run.replace(epochs=args.epochs) if args.epochs is not None else cfg.run
    if args.stp_samples is not None:
        run = run.replace(stp_samples=args.stp_samples)
    return experiments.AblationConfig(seeds, args.n_train, args.n_val, args.n_test, cfg.synth, run)


def cmd_ablate_fusion(args) -> int:
    cfg = _ablation_config(args)
    ds = _load(args.manifest) if args.manifest else None

    def progress(row):
        _say(f"seed {row['seed']} {row['granularity']:>6}: test R@1 {row['test']['r1']:.2f}")

    doc = experiments.ablate_fusion(cfg, ds, progress=progress)
    _emit(doc, args.out)
    _say("median test R@1: " + ", ".join(f"{g} {v:.2f}" for g, v in doc["median_r1"].items()))
    return EXIT_OK


def cmd_ablate_perturb(args) -> int:
    cfg = _ablation_config(args)
    ds = _load(args.manifest) if args.manifest else None

    def progress(row):
        _say(f"{row['mode']:>5}: t2v R@1 {row['t2v']['r1']:.2f}, {row['cost']['forward_passes_per_query']} "
             f"pass/query, {row['cost']['wall_time']:.3f}s scoring")

    _emit(experiments.ablate_perturb(cfg, ds, progress=progress), args.out)
    return EXIT_OK


def cmd_cone_prob(args) -> int:
    theta = math.radians(args.theta_deg)
    doc = {"theta_deg": args.theta_deg, "dim": args.dim,
           "log10_exact": cap_fraction_log(theta, args.dim),
           "log10_approx": cap_fraction_approx_log(theta, args.dim)}
    _emit(doc, args.out)
    _say(f"P(theta={args.theta_deg} deg, d={args.dim}) = 10^{doc['log10_exact']:.4f} "
         f"(concentration estimate 10^{doc['log10_approx']:.4f})")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    grans = experiments.GRANULARITIES if args.granularity == "all" else (args.granularity,)
    modes = experiments.PERTURB_MODES if args.mode == "all" else (args.mode,)
    doc = experiments.grad_check_suite(args.dim, args.frames, args.batch, _seed(args), args.tolerance,
                                       args.lam, args.dropout, args.max_per_group or None, grans, modes)
    _emit(doc, args.out)
    for c in doc["configs"]:
        _say(f"{c['granularity']:>6} x {c['perturb_mode']:<4} max rel err {c['max_rel_error']:.2e} "
             f"{'ok' if c['passed'] else 'FAIL'}")
    return EXIT_OK if doc["passed"] else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--precision", choices=("f32", "f64"), default=None,
                        help="floating-point width (default: f32, or the config's value for train)")
    common.add_argument("--seed", type=int, default=None, help="overrides GAID_SEED and config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gaid", description="Gated audio-visual fusion and adaptive text perturbation for "
                "text-to-video retrieval, on precomputed or synthetic features.",
                formatter_class=argparse.RawDescriptionHelpFormatter,
                epilog="run config keys and defaults:\n" + describe_defaults())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    g.add_argument("--samples", type=int, default=256)
    g.add_argument("--frames", type=int, default=12)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--rho", type=float, default=0.5, help="fraction of clips with informative audio")
    g.add_argument("--blank-fraction", type=float, default=0.0)
    g.add_argument("--text-noise", type=float, default=0.5)
    g.add_argument("--frame-noise", type=float, default=1.0)
    g.add_argument("--audio-noise", type=float, default=1.0)
    g.add_argument("--shared-offset", type=float, default=1.0)
    g.add_argument("--silent-fraction", type=float, default=0.0)
    g.add_argument("--out", default="synthetic", help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train and save the best checkpoint",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config keys and defaults:\n" + describe_defaults())
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest", help="validation set (default: the training set)")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--out", required=True, help="output directory (checkpoint/ and metrics.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="retrieval metrics and inference cost")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--mode", choices=experiments.PERTURB_MODES, default="dasp")
    e.add_argument("--stp-samples", type=int, default=20)
    e.add_argument("--dsl", choices=("on", "off"), default="on")
    e.add_argument("--dsl-beta", type=float, default=100.0)
    e.add_argument("--ranks-csv", help="write per-query text-to-video ranks here")
    e.add_argument("--out", help="JSON output file (default stdout)")
    e.set_defaults(func=cmd_eval)

    for name, fn, text in (("ablate-fusion", cmd_ablate_fusion, "compare the four fusion granularities"),
                           ("ablate-perturb", cmd_ablate_perturb, "compare none, stp and dasp")):
        a = sub.add_parser(name, parents=[common], help=text)
        a.add_argument("--manifest", help="dataset to split (default: synthetic, one per seed)")
        a.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
        a.add_argument("--epochs", type=int)
        a.add_argument("--stp-samples", type=int)
        a.add_argument("--n-train", type=int, default=512)
        a.add_argument("--n-val", type=int, default=128)
        a.add_argument("--n-test", type=int, default=128)
        a.add_argument("--out", help="JSON output file (default stdout)")
        a.set_defaults(func=fn)

    c = sub.add_parser("cone-prob", parents=[common], help="spherical cap fraction")
    c.add_argument("--theta-deg", type=float, required=True)
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cone_prob)

    k = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check (64-bit)")
    k.add_argument("--dim", type=int, default=16)
    k.add_argument("--frames", type=int, default=4)
    k.add_argument("--batch", type=int, default=4)
    k.add_argument("--granularity", choices=("all",) + experiments.GRANULARITIES, default="all")
    k.add_argument("--mode", choices=("all",) + experiments.PERTURB_MODES, default="all")
    k.add_argument("--lam", type=float, default=0.8)
    k.add_argument("--dropout", type=float, default=0.3)
    k.add_argument("--tolerance", type=float, default=1e-4)
    k.add_argument("--max-per-group", type=int, default=0, help="coordinates probed per tensor (default 0: all)")
    k.add_argument("--out")
    k.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _say(str(e))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    previous = tc.precision_name()
    try:
        if args.precision:
            tc.set_precision(args.precision)
        return args.func(args)
    except UsageError as e:
        _say(f"usage error: {e}")
        return EXIT_USAGE
    except (GFTError, ManifestError, CheckpointError, OSError) as e:
        _say(f"data error: {e}")
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        _say(f"numeric failure: {e}")
        return EXIT_NUMERIC
    except ValueError as e:
        _say(f"invalid argument: {e}")
        return EXIT_USAGE
    finally:
        tc.set_precision(previous)


if __name__ == "__main__":
    sys.exit(main())
