"""Command-line surface.

Subcommands: count (complexity report), verify (oracle suites), sr (upscale
a PNG with saved weights), train-toy (overfit one image), eval (Y-channel
PSNR/SSIM between two PNGs), rpb-curve (export position-bias curves as CSV).

Exit codes: 0 success, 1 oracle or validation failure, 2 usage error,
3 I/O error. Every artifact-producing command writes a small JSON run
manifest next to its primary output. GRF_PRECISION=f32|f64 sets the default
float width; the --precision flag wins over the environment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from .attention import VARIANTS
from .complexity import count_macs, reduction_summary
from .config import ConfigError, ModelConfig, load_config
from .imaging import psnr, read_png, rgb_to_y, ssim, to_float_rgb, to_u8, write_png
from .network import init_parameters
from .precision import precision_name, set_precision
from .rng import Rng
from .tensor import ContractError, DimensionError, NumericError
from .training import TrainConfig, train_toy, upscale
from .verification import (
    curves_to_csv,
    gradcheck_suite,
    qk_equivalence_suite,
    rpb_curve_export,
    rpb_properties_suite,
)
from .weights_io import WeightsFormatError, WeightsMismatchError, load_weights, save_weights

SUITES = ("qk-equivalence", "gradcheck", "rpb-properties", "all")


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    precision: str
    outputs: list[str]
    version: str = __version__

    def write_beside(self, primary_output: str) -> str:
        path = primary_output + ".manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)
            fh.write("\n")
        return path


def _resolve_precision(flag: str | None) -> str:
    name = flag or os.environ.get("GRF_PRECISION") or "f64"
    if name not in ("f32", "f64"):
        raise UsageError(f"precision must be f32 or f64, got {name!r}")
    return name


def _parse_resolution(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        w, h = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"resolution must look like 1280x720, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise UsageError(f"resolution must be positive, got {text!r}")
    return (w, h)


def _load_cfg(path: str | None) -> ModelConfig:
    return load_config(path) if path else ModelConfig()


def _manifest(args: argparse.Namespace, config_path: str | None, outputs: list[str]) -> None:
    RunManifest(
        command=args.command,
        config_path=config_path,
        seed=getattr(args, "seed", 0),
        precision=precision_name(),
        outputs=outputs,
    ).write_beside(outputs[0])


# -- subcommands --------------------------------------------------------------


def cmd_count(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    if args.scale is not None:
        cfg = cfg.with_scale(args.scale)
    res = _parse_resolution(args.resolution)
    report = count_macs(cfg, res, args.variant)
    sys.stdout.write(report.table())
    modules = cfg.groups * cfg.blocks_per_group
    print(f"attention-only per module: {report.sa_params // modules:,} params, {report.sa_macs // modules:,} macs")
    pr, mr = reduction_summary(cfg, res)
    print(f"attention reduction vs dense baseline: params {pr:.1%}, macs {mr:.1%}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    failures = 0

    def show(reports: list, summary_name: str | None = None) -> None:
        nonlocal failures
        bad = [r for r in reports if not r.passed]
        failures += len(bad)
        if summary_name is not None:
            worst = max(r.max_abs_error for r in reports)
            status = "pass" if not bad else "FAIL"
            print(f"[{status}] {summary_name}: {len(reports) - len(bad)}/{len(reports)} trials, worst={worst:.3e}")
            for r in bad:
                print(r.line())
        else:
            for r in reports:
                print(r.line())

    if args.suite in ("qk-equivalence", "all"):
        show(qk_equivalence_suite(args.seed), summary_name="qk-equivalence")
    if args.suite in ("gradcheck", "all"):
        show(gradcheck_suite(args.seed, grl_residual=not args.corrupt_grl_residual))
    if args.suite in ("rpb-properties", "all"):
        show(rpb_properties_suite(args.seed))
    return 0 if failures == 0 else 1


def cmd_sr(args: argparse.Namespace) -> int:
    params, cfg = load_weights(args.weights)
    if args.scale is not None and args.scale != cfg.scale:
        raise WeightsMismatchError(
            f"weights were built for scale {cfg.scale}, asked for {args.scale}"
        )
    lr = to_float_rgb(read_png(args.input))
    out_img = to_u8(upscale(params, cfg, lr))
    stem, _ = os.path.splitext(args.input)
    out_path = args.output or f"{stem}_x{cfg.scale}.png"
    write_png(out_img, out_path)
    _manifest(args, args.weights, [out_path])
    print(f"wrote {out_path} ({out_img.width}x{out_img.height})")
    return 0


def cmd_train_toy(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    tcfg = TrainConfig(
        lr=args.lr, iters=args.iters, batch=args.batch, seed=args.seed,
        augment=not args.no_augment,
    )
    hr = to_float_rgb(read_png(args.image))
    result = train_toy(cfg, tcfg, hr, variant=args.variant)
    save_weights(args.output, result.params, cfg)
    curve_path = args.output + ".loss.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        for i, loss in enumerate(result.losses):
            fh.write(f"{i},{loss:.8g}\n")
    _manifest(args, args.config, [args.output, curve_path])
    if result.losses:
        print(f"loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f} over {tcfg.iters} iterations")
    else:
        print("0 iterations, saved initial parameters")
    print(f"wrote {args.output}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ya = rgb_to_y(read_png(args.image_a))
    yb = rgb_to_y(read_png(args.image_b))
    print(f"psnr: {psnr(ya, yb, crop=args.crop):.4f}")
    print(f"ssim: {ssim(ya, yb, crop=args.crop):.4f}")
    return 0


def cmd_rpb_curve(args: argparse.Namespace) -> int:
    if args.weights:
        params, cfg = load_weights(args.weights)
        source = args.weights
    else:
        cfg = _load_cfg(args.config)
        params = init_parameters(cfg, Rng(args.seed).split("init"), variant=args.variant)
        source = args.config
    try:
        block = params.groups[args.group].blocks[args.block]
    except IndexError:
        raise ContractError(
            f"no block ({args.group}, {args.block}) in a "
            f"{cfg.groups}x{cfg.blocks_per_group} model"
        ) from None
    row = args.row if args.row is not None else cfg.window.h - 1
    curves = rpb_curve_export(block.grsa.rpb, cfg.window, row)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(curves_to_csv(curves))
    _manifest(args, source, [args.output])
    print(f"wrote {args.output} ({curves.shape[0]} heads x {curves.shape[1]} offsets)")
    return 0


# -- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grformer", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", parents=[common], help="parameter and MAC report")
    p.add_argument("config", nargs="?", help="config file; defaults used when omitted")
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--resolution", default="1280x720", help="upscaled output size WxH")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="grsa")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("verify", parents=[common], help="run oracle suites")
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument(
        "--corrupt-grl-residual", action="store_true",
        help="sever the grouped projection's shortcut (mutation test hook)",
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sr", parents=[common], help="upscale a PNG with saved weights")
    p.add_argument("input")
    p.add_argument("weights")
    p.add_argument("--scale", type=int, default=None, help="must match the weights if given")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("train-toy", parents=[common], help="overfit one image")
    p.add_argument("image")
    p.add_argument("--config", default=None)
    p.add_argument("-o", "--output", default="toy.grfw1")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="grsa")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", parents=[common], help="Y-channel PSNR/SSIM of two PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--crop", type=int, default=0, help="border pixels ignored, usually the scale")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rpb-curve", parents=[common], help="export position-bias curves")
    p.add_argument("weights", nargs="?", help="weight container; fresh init when omitted")
    p.add_argument("--config", default=None, help="used when no weights are given")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="grsa")
    p.add_argument("--group", type=int, default=0)
    p.add_argument("--block", type=int, default=0)
    p.add_argument("--row", type=int, default=None, help="vertical offset row; default is dy = 0")
    p.add_argument("-o", "--output", default="rpb_curve.csv")
    p.set_defaults(func=cmd_rpb_curve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_precision(_resolve_precision(args.precision))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, WeightsMismatchError, DimensionError, ContractError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WeightsFormatError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
