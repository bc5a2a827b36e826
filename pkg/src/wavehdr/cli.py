"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import atomic_write, load_checkpoint, params_digest
from .errors import ConfigError, DataError, GeometryError, NumericError, ShapeError
from .hdr import mu_law_array, triangle_merge
from .model import ModelConfig, predict
from .wavelet import WAVELET_KINDS

logger = logging.getLogger("wavehdr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wavelet", choices=WAVELET_KINDS)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--avg-hf-fusion", action="store_true")
    p.add_argument("--no-sobel", action="store_true")
    p.add_argument("--forward-all-bands", action="store_true")
    p.add_argument("--width", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavehdr", description="Wavelet-domain HDR fusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON file with train config keys; flags override it")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--crop", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--precision", choices=("float64", "float32"))
    t.add_argument("--checkpoint-every", type=int)
    _model_flags(t)

    i = sub.add_parser("infer", help="fuse one bracket")
    i.add_argument("--checkpoint", required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--ldr", nargs=3, metavar=("SHORT", "MID", "LONG"))
    src.add_argument("--sample", help="a dataset sample directory")
    i.add_argument("--exposure", help="exposure file (required with --ldr)")
    i.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a model on a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictor", choices=("model", "triangle", "oracle"), default="model",
                   help="'triangle' is the static merge baseline, 'oracle' returns the ground truth")
    e.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("inspect-subbands", help="write wavelet sub-band panels")
    s.add_argument("--image", help="PNG image to decompose")
    s.add_argument("--checkpoint", help="also show bands of the reference features")
    s.add_argument("--sample", help="sample directory (used with --checkpoint)")
    s.add_argument("--level", type=int, default=1)
    s.add_argument("--wavelet", choices=WAVELET_KINDS, default="haar")
    s.add_argument("--out", required=True)

    m = sub.add_parser("make-synthetic", help="render a synthetic bracket dataset")
    m.add_argument("--out", required=True)
    m.add_argument("--count", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--channels", type=int, default=3)
    m.add_argument("--max-motion", type=int, default=6)
    m.add_argument("--biases", type=float, nargs=3, default=(-2.0, 0.0, 2.0))
    return parser


def _snapshot(out: Path, args: argparse.Namespace, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": args.command, "args": {k: v for k, v in vars(args).items() if k != "func"}, **extra}
    atomic_write(out / f"{args.command}_config.json", json.dumps(record, indent=2, sort_keys=True, default=list).encode())


def resolve_train_config(args: argparse.Namespace):
    from .train import TrainConfig

    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    model = dict(base.pop("model", {}))
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("batch", "batch"), ("crop", "crop"), ("lr", "lr"),
                      ("precision", "precision"), ("checkpoint_every", "checkpoint_every")):
        if getattr(args, flag) is not None:
            base[key] = getattr(args, flag)
    if args.wavelet is not None:
        model["wavelet"] = args.wavelet
    if args.width is not None:
        model["width"] = args.width
    if args.no_attention:
        model["attention"] = False
    if args.avg_hf_fusion:
        model["avg_hf_fusion"] = True
    if args.no_sobel:
        model["sobel_loss"] = False
    if args.forward_all_bands:
        model["forward_all_bands"] = True
    base["model"] = ModelConfig.from_dict(model)
    return TrainConfig.from_dict(base)


def cmd_train(args) -> int:
    from .train import load_dataset, train

    cfg = resolve_train_config(args)
    samples = load_dataset(args.dataset)
    if samples[0].shape[1] != cfg.model.channels:
        raise ConfigError(f"dataset has {samples[0].shape[1]} channels, model expects {cfg.model.channels}")
    out = Path(args.out)
    _snapshot(out, args, resolved=cfg.to_dict())
    result = train(samples, cfg, out)
    print(f"trained {cfg.steps} steps in {result.seconds:.1f}s; final loss "
          f"{result.losses[-1] if result.losses else float('nan'):.6f}; outputs in {out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .data import load_ldr_triplet, load_sample, write_hdr, write_png16

    params, cfg = load_checkpoint(args.checkpoint)
    if args.sample:
        sample = load_sample(args.sample, require_gt=False)
    else:
        if not args.exposure:
            raise UsageError("--exposure is required with --ldr")
        sample = load_ldr_triplet(args.ldr, args.exposure)
    hdr = predict(sample, params, cfg).astype(np.float32)
    preview = mu_law_array(np.maximum(hdr.astype(np.float64), 0.0), cfg.mu).astype(np.float32)
    out = Path(args.out)
    _snapshot(out, args, model=cfg.to_dict(), checkpoint_digest=params_digest(params))
    write_hdr(out / "hdr.fhdr", hdr)
    write_hdr(out / "preview.fhdr", preview)
    write_png16(out / "preview.png", np.clip(preview, 0, 1))
    print(f"wrote {out / 'hdr.fhdr'} ({hdr.shape[2]}x{hdr.shape[3]}) and preview")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import list_samples, load_sample
    from .metrics import evaluate_samples, sha256_text

    samples = [load_sample(d, require_gt=False) for d in list_samples(args.dataset)]
    if args.predictor == "model":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for the model predictor")
        params, cfg = load_checkpoint(args.checkpoint)
        fn = lambda s: predict(s, params, cfg)
        cdig, kdig, mu = sha256_text(cfg.dumps()), params_digest(params), cfg.mu
    else:
        cfg = ModelConfig()
        fn = (lambda s: triangle_merge(s, cfg.gamma)) if args.predictor == "triangle" else (lambda s: s.gt_hdr)
        cdig, kdig, mu = sha256_text(args.predictor), "", cfg.mu
    report = evaluate_samples(samples, fn, mu, cdig, kdig, args.workers)
    out = Path(args.out)
    _snapshot(out, args, model=cfg.to_dict())
    report.write(out)
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .autodiff import Tensor
    from .data import load_sample, read_png16
    from .hdr import build_input
    from .model import as_constants, encode, padded_sample
    from .subbands import decompose, energy_fractions, save_panels

    out = Path(args.out)
    report = {}
    if args.image:
        img = read_png16(args.image)
        panels = decompose(img, args.level, args.wavelet)
        save_panels(panels, out)
        report["image"] = {lv: energy_fractions(panels, lv) for lv in range(1, args.level + 1)}
    if args.checkpoint:
        if not args.sample:
            raise UsageError("--sample is required with --checkpoint")
        params, cfg = load_checkpoint(args.checkpoint)
        sample = padded_sample(load_sample(args.sample, require_gt=False))
        enc = encode(build_input(sample, cfg.gamma), as_constants(params), cfg)
        feat = enc.ref_features.data.mean(axis=1, keepdims=True)
        panels = decompose(feat, args.level, args.wavelet)
        save_panels(panels, out, prefix="feat_")
        report["features"] = {lv: energy_fractions(panels, lv) for lv in range(1, args.level + 1)}
    if not report:
        raise UsageError("give --image and/or --checkpoint with --sample")
    _snapshot(out, args)
    atomic_write(out / "energy.json", json.dumps(report, indent=2).encode())
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    from .data import make_synthetic_dataset

    if args.count < 1 or args.size < 8 or args.size % 8:
        raise UsageError("--count must be >= 1 and --size a multiple of 8")
    out = Path(args.out)
    dirs = make_synthetic_dataset(out, args.count, args.seed, args.size, args.channels, args.max_motion, tuple(args.biases))
    _snapshot(out, args)
    print(f"wrote {len(dirs)} samples to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "inspect-subbands": cmd_inspect,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, GeometryError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
