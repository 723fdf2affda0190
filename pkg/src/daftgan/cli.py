"""``daftgan`` command line: train, infer, eval, grad-check, mask-demo.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model
from .config import OUTPUT_DIR_ENV, Config, ConfigError
from .harness.imageio import ImageFormatError, read_pgm, read_ppm, write_pgm, write_ppm
from .harness.masks import MaskGenerationError, MaskSpec, generate_mask, mask_fraction

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _mask_spec(args) -> MaskSpec:
    try:
        if args.kind == "center":
            if not 0.0 < args.ratio < 1.0:
                raise ValueError(f"--ratio must lie in (0, 1), got {args.ratio}")
            return MaskSpec("center", args.ratio, args.ratio, seed=args.seed)
        return MaskSpec("irregular", args.lo, args.hi, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from .harness.train import train

    cfg = Config.load(args.config)
    if args.steps is not None:
        cfg = cfg.with_overrides(steps=args.steps).validate()
    out = Path(args.out or cfg.dir)
    if args.resume is not None and not Path(args.resume).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.resume}")
    images = captions = None
    if args.data is not None:
        from .harness.scenes import load_dataset

        images, captions = load_dataset(args.data)
    trainer = train(cfg, out, resume=args.resume, images=images, captions=captions)
    print(f"trained to step {trainer.step}; checkpoint {out / 'final.ckpt'}; log {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg, model, _ = load_model(args.checkpoint)
    image = read_ppm(args.image)
    mask = read_pgm(args.mask)
    s = cfg.image_size
    if image.shape != (3, s, s):
        raise UsageError(f"image is {image.shape[2]}x{image.shape[1]}, checkpoint expects {s}x{s}")
    if mask.shape != (s, s):
        raise UsageError(f"mask is {mask.shape[1]}x{mask.shape[0]}, checkpoint expects {s}x{s}")
    z = np.random.default_rng(args.seed).standard_normal((1, cfg.noise_dim))
    out = model.inpaint(image[None], mask[None], [args.caption], z).composited.data[0]
    # valid pixels are copied from the input, not regenerated
    out = np.where(mask[None] > 0.5, out, image)
    corrupted = image * (1.0 - mask[None])
    write_ppm(args.out, np.concatenate([corrupted, out, image], axis=2))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness.evaluate import evaluate

    cfg, model, _ = load_model(args.checkpoint)
    spec = _mask_spec(args) if args.kind else cfg.mask_spec()
    res = evaluate(model, cfg, spec, args.scenes, split=args.split)
    print(f"{'row':<14}{'psnr':>10}{'ssim':>10}")
    print(f"{'composited':<14}{res.psnr:10.4f}{res.ssim:10.4f}")
    print(f"{'masked_input':<14}{res.baseline_psnr:10.4f}{res.baseline_ssim:10.4f}")
    if args.out:
        res.write_csv(args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_scope

    results = run_scope(args.scope, args.seeds, on_result=lambda r: print(r.line(), flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_mask_demo(args) -> int:
    spec = _mask_spec(args)
    if args.sweep:
        fr = [mask_fraction(generate_mask(spec.with_seed(args.seed + i), args.size)) for i in range(args.sweep)]
        print(f"sweep {args.sweep} seeds: min {min(fr):.4f} max {max(fr):.4f} mean {np.mean(fr):.4f} "
              f"bounds [{spec.lo}, {spec.hi}]")
    m = generate_mask(spec, args.size)
    if args.out:
        write_pgm(args.out, m)
    line = f"fraction {mask_fraction(m):.6f}"
    if spec.kind == "center":
        rows = np.flatnonzero(m.any(axis=1))
        cols = np.flatnonzero(m.any(axis=0))
        line += f" square {len(rows)}x{len(cols)} at row {rows[0]} col {cols[0]}" if len(rows) else " square 0x0"
    print(line)
    return EXIT_OK


def _add_mask_args(p, required_kind: bool) -> None:
    p.add_argument("--kind", choices=["irregular", "center"], default="irregular" if required_kind else None)
    p.add_argument("--lo", type=float, default=0.10)
    p.add_argument("--hi", type=float, default=0.70)
    p.add_argument("--ratio", type=float, default=0.25, help="hole fraction of a center mask")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    from .gradcheck import SCOPES

    parser = argparse.ArgumentParser(prog="daftgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help=f"output directory (default: config, then ${OUTPUT_DIR_ENV})")
    p.add_argument("--steps", type=int, help="override the total step count")
    p.add_argument("--data", help="dataset cache directory (PPM + caption .txt); default renders scenes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write a corrupted | composited | original triptych")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PPM (P6) image")
    p.add_argument("--mask", required=True, help="PGM (P5) mask, nonzero = hole")
    p.add_argument("--caption", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mean PSNR/SSIM on a split, with the masked-input baseline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["heldout", "train"], default="heldout")
    p.add_argument("--scenes", type=int)
    p.add_argument("--out", help="CSV output path")
    _add_mask_args(p, required_kind=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient suites")
    p.add_argument("--scope", required=True, choices=list(SCOPES) + ["all"])
    p.add_argument("--seeds", type=int, default=50)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("mask-demo", help="generate one mask as PGM and print its statistics")
    _add_mask_args(p, required_kind=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out")
    p.add_argument("--sweep", type=int, default=0, help="also report min/max fraction over this many seeds")
    p.set_defaults(func=cmd_mask_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, UsageError, CheckpointError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MaskGenerationError, FloatingPointError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
