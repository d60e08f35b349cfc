"""``rsrwkv`` command line: verification, benchmarks, analysis and the toy trainer."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import analysis
from .bench import KERNELS, bench
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, RsrwkvError, UsageError
from .imageio import read_ppm
from .model import TOY_CONFIG, ModelConfig, backbone_forward, init_backbone, zero_backbone
from .numerics import rtn
from .numerics.tensor import Tensor, as_dtype
from .scan2d import scan_orders_csv
from .train import train_toy
from .verify import SUITES, report_csv, run_suites
from .wkv import bi_wkv_scan, wkv_causal

EXIT_FAIL = 1
EXIT_USAGE = 2


def _depths(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"depths must be four comma-separated ints, got {text!r}") from exc
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"depths must have four entries, got {len(vals)}")
    return vals


def _sizes(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated ints, got {text!r}") from exc


def build_config(args, base: ModelConfig = ModelConfig()) -> ModelConfig:
    overrides = {
        "directions": args.dirs, "patch_size": args.patch, "embed_dim": args.dim,
        "stage_depths": args.depths, "num_classes": args.classes,
    }
    return dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _weights(args, base: ModelConfig = ModelConfig()):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    return init_backbone(build_config(args, base), seed=args.seed, dtype=args.dtype)


def _image(path: str, dtype: str) -> Tensor:
    return Tensor(read_ppm(path), dtype=as_dtype(dtype))


# -------------------------------------------------------------- subcommands


def cmd_verify(args) -> int:
    checks = run_suites(args.suite, args.seed, args.dtype)
    _emit(report_csv(checks), args.out)
    return 0 if all(c.ok for c in checks) else EXIT_FAIL


def cmd_bench(args) -> int:
    result = bench(args.kernel, args.sizes, reps=args.reps, channels=args.channels, seed=args.seed)
    _emit(result.to_csv(), args.out)
    return 0


def cmd_train_toy(args) -> int:
    cfg = build_config(args, TOY_CONFIG)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss", "accuracy"])

    def log(step, loss, acc):
        writer.writerow([step, repr(loss), repr(acc)])

    result = train_toy(cfg, steps=args.steps, lr=args.lr, seed=args.seed, image_size=args.size,
                       count=args.count, dtype=args.dtype, stop_when_fit=args.stop_when_fit, log=log)
    sys.stdout.write(buf.getvalue())
    if args.out:
        save_checkpoint(result.weights, args.out)
    return 0


def cmd_init(args) -> int:
    if not args.out:
        raise UsageError("init needs --out for the checkpoint manifest")
    cfg = build_config(args)
    weights = zero_backbone(cfg, args.dtype) if args.zero else init_backbone(cfg, args.seed, args.dtype)
    save_checkpoint(weights, args.out)
    return 0


def cmd_infer(args) -> int:
    weights = load_checkpoint(args.checkpoint)
    dtype = "f32" if weights.dtype == np.float32 else "f64"
    _, logits = backbone_forward(_image(args.image, dtype), weights)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "logit"])
    for i, val in enumerate(logits.data):
        writer.writerow([i, repr(float(val))])
    _emit(buf.getvalue(), args.out)
    return 0


def _erf_images(args, cfg: ModelConfig) -> list[np.ndarray]:
    dt = as_dtype(args.dtype)
    if args.images:
        return [read_ppm(p).astype(dt) for p in args.images]
    rng = np.random.default_rng([args.seed, 1])
    size = args.size
    return [rng.random((cfg.in_channels, size, size)).astype(dt) for _ in range(args.count)]


def cmd_erf(args) -> int:
    weights = _weights(args)
    report = analysis.erf_map(analysis.center_token_probe(weights), _erf_images(args, weights.cfg))
    _emit(report.to_csv(), args.out)
    if args.pgm:
        report.write_pgm(args.pgm)
    print(f"high_ratio,{report.high_ratio!r}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    weights = _weights(args)
    dtype = "f32" if weights.dtype == np.float32 else "f64"
    before, after = analysis.eca_channel_stats(_image(args.image, dtype), weights, args.block)
    _emit(analysis.channel_stats_csv(before, after), args.out)
    return 0


def cmd_params(args) -> int:
    _emit(analysis.count_params(build_config(args)).to_csv(), args.out)
    return 0


def cmd_flops(args) -> int:
    _emit(analysis.count_flops(build_config(args), args.size, args.size).to_csv(), args.out)
    return 0


def cmd_scan_orders(args) -> int:
    if args.height < 1 or args.width < 1:
        raise ConfigError("grid extents must be positive")
    _emit(scan_orders_csv(args.height, args.width), args.out)
    return 0


def cmd_wkv(args) -> int:
    if not args.out:
        raise UsageError("wkv needs --out for the RTN1 result")
    k, v, w, u = (rtn.read(p) for p in (args.k, args.v, args.w, args.u))
    fn = bi_wkv_scan if args.mode == "bi" else wkv_causal
    rtn.write(args.out, fn(k, v, w, u))
    return 0


# ------------------------------------------------------------------- parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model overrides")
    g.add_argument("--dirs", type=int, choices=(1, 2, 4), help="scan directions (default 4)")
    g.add_argument("--patch", type=int, help="patch size")
    g.add_argument("--dim", type=int, help="embedding dimension")
    g.add_argument("--depths", type=_depths, help="blocks per stage, e.g. 3,3,3,3")
    g.add_argument("--classes", type=int, help="number of output classes")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")

    parser = argparse.ArgumentParser(prog="rsrwkv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Callable, help: str, model: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help)
        if model:
            _add_model_flags(p)
        p.set_defaults(func=fn)
        return p

    p = add("verify", cmd_verify, "run oracle property suites, CSV report")
    p.add_argument("suite", choices=(*SUITES, "all"))

    p = add("bench", cmd_bench, "time a kernel over sizes, CSV with log-log slope")
    p.add_argument("kernel", choices=KERNELS)
    p.add_argument("--sizes", type=_sizes, required=True, help="ascending T values, e.g. 1024,4096")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--channels", type=int, default=64)

    p = add("train-toy", cmd_train_toy, "train the toy model on synthetic data", model=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--count", type=int, default=8, help="training images")
    p.add_argument("--stop-when-fit", action="store_true")

    p = add("init", cmd_init, "write a freshly initialised checkpoint", model=True)
    p.add_argument("--zero", action="store_true", help="zero every weight except LN gains")

    p = add("infer", cmd_infer, "class logits for one PPM image")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)

    p = add("erf", cmd_erf, "effective receptive field map (CSV, optional PGM)", model=True)
    p.add_argument("images", nargs="*", help="PPM inputs (default: seeded noise images)")
    p.add_argument("--checkpoint")
    p.add_argument("--pgm", metavar="PATH")
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--count", type=int, default=1)

    p = add("stats", cmd_stats, "per-channel mean |x| around channel attention", model=True)
    p.add_argument("image")
    p.add_argument("--checkpoint")
    p.add_argument("--block", type=int, default=-1)

    add("params", cmd_params, "parameter counts per module", model=True)

    p = add("flops", cmd_flops, "multiply-accumulate counts per component", model=True)
    p.add_argument("--size", type=int, default=224, help="square input side")

    p = add("scan-orders", cmd_scan_orders, "sequence position of each grid cell per direction")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)

    p = add("wkv", cmd_wkv, "run a WKV kernel on RTN1 inputs")
    p.add_argument("--mode", choices=("bi", "causal"), default="bi")
    for name in ("k", "v", "w", "u"):
        p.add_argument(f"--{name}", required=True, metavar="RTN1")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rsrwkv {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RsrwkvError, OSError) as exc:
        print(f"rsrwkv {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
