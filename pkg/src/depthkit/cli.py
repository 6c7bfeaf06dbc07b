"""Command-line entry point.

Subcommands: make-toy-data, train, eval, predict, gradcheck.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

__all__ = ["main"]

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors reported on exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="depthkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", parents=[], help="generate a procedural toy dataset")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", default="64x64", help="HxW, both divisible by 32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--ablation", action="append", default=[],
                   help="study variant; may be repeated")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a prediction directory")
    p.add_argument("--checkpoint")
    p.add_argument("--pred-dir")
    p.add_argument("--dataset", required=True, help="dataset root directory")
    p.add_argument("--split", default="test", choices=["test", "train"])
    p.add_argument("--scaled", action="store_true", help="median-scale predictions")
    p.add_argument("--qualitative", action="store_true",
                   help="add image-similarity, edge-F1 and normal-error measures")
    p.add_argument("--out", help="directory for report files (default: dataset root)")

    p = sub.add_parser("predict", help="predict depth for a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output 16-bit depth PNG (meters*1000)")
    p.add_argument("--auto-resize", action="store_true",
                   help="resize to the nearest multiple of 32 and restore afterwards")

    p = sub.add_parser("gradcheck", help="verify loss gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def cmd_make_toy_data(args) -> int:
    from . import data

    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise ValueError(f"--size must look like 64x64, got {args.size!r}")
    data.make_toy_dataset(args.n, (h, w), args.seed, args.out)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from . import config as config_mod
    from . import data, trainer

    cfg = config_mod.load_experiment_config(args.config)
    for name in args.ablation:
        cfg = config_mod.apply_ablation(cfg, name)
    dataset = data.DepthDataset(cfg.dataset_root)
    model = trainer.build_model_for_training(cfg.train)
    result = trainer.train(model, dataset, cfg.train, out_dir=cfg.out_dir, policy=cfg.policy)
    final = result.steps[-1]
    print(f"trained {final.iteration} iterations, final loss {final.total:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from . import data, metrics, trainer

    if bool(args.checkpoint) == bool(args.pred_dir):
        raise ValueError("exactly one of --checkpoint or --pred-dir is required")
    dataset = data.DepthDataset(args.dataset)
    ids = dataset.test_ids if args.split == "test" else dataset.train_ids
    if args.checkpoint:
        model, _ = trainer.load_model_from_checkpoint(args.checkpoint)
        report = trainer.evaluate_model(
            model, dataset, scaled=args.scaled, qualitative=args.qualitative, ids=ids
        )
    else:
        report = metrics.evaluate_set(
            Path(args.dataset) / dataset.profile.depth_dir,
            args.pred_dir,
            dataset.profile,
            scaled=args.scaled,
            qualitative=args.qualitative,
            ids=ids,
        )
    out_dir = Path(args.out) if args.out else Path(args.dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_text(out_dir / "report.txt")
    report.write_json(out_dir / "report.json")
    for key, value in report.to_dict().items():
        if value is not None:
            print(f"{key}={value}")
    return 0


def _nearest_multiple_of_32(n: int) -> int:
    return max(32, int(round(n / 32.0)) * 32)


def _colorize(depth_values: np.ndarray) -> np.ndarray:
    """Map normalized depth to an 8-bit color image (near = warm, far = cold)."""
    lo, hi = float(depth_values.min()), float(depth_values.max())
    t = np.zeros_like(depth_values) if hi <= lo else (depth_values - lo) / (hi - lo)
    stops = np.array(
        [[208, 56, 44], [238, 147, 49], [245, 231, 122], [116, 198, 168], [45, 96, 163]],
        dtype=np.float64,
    )
    pos = t * (len(stops) - 1)
    idx = np.clip(pos.astype(int), 0, len(stops) - 2)
    frac = (pos - idx)[..., None]
    rgb = stops[idx] + (stops[idx + 1] - stops[idx]) * frac
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def cmd_predict(args) -> int:
    from PIL import Image

    from . import core, data, trainer
    from .metrics import PREDICTION_PNG_SCALE

    model, payload = trainer.load_model_from_checkpoint(args.checkpoint)
    d_min, d_max, m = payload.get("depth_range", (0.4, 10.0, 10.0))
    profile = data.DatasetProfile(name="inference", d_min=d_min, d_max=d_max, m=m)
    image = data.load_rgb_png(args.image)
    orig_h, orig_w = image.height, image.width
    if orig_h % 32 or orig_w % 32:
        if not args.auto_resize:
            raise ValueError(
                f"image is {orig_h}x{orig_w}; dimensions must be divisible by 32 "
                "(pass --auto-resize)"
            )
        image = core.resize_bilinear(
            image, _nearest_multiple_of_32(orig_h), _nearest_multiple_of_32(orig_w)
        )
    depth = trainer.predict_with_mirror(model, image, profile)
    if (depth.height, depth.width) != (orig_h, orig_w):
        depth = core.resize_bilinear(depth, orig_h, orig_w)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data.save_depth_png(out_path, depth, PREDICTION_PNG_SCALE)
    vis_path = out_path.with_name(out_path.stem + "_vis.png")
    Image.fromarray(_colorize(depth.values), mode="RGB").save(vis_path)
    print(f"wrote {out_path} and {vis_path}")
    return 0


def cmd_gradcheck(args) -> int:
    import torch

    from .loss import LossWeights, SsimParams, composite_loss, gradient_check, l_depth, l_grad, l_ssim

    rng = np.random.default_rng(args.seed)
    y = torch.from_numpy(rng.uniform(1.0, 25.0, (16, 16)))
    yhat = torch.from_numpy(rng.uniform(1.0, 25.0, (16, 16)))
    params = SsimParams(dynamic_range=24.0)
    weights = LossWeights()
    checks = {
        "l_depth": lambda a, b: l_depth(a, b),
        "l_grad": lambda a, b: l_grad(a, b),
        "l_ssim": lambda a, b: l_ssim(a, b, params),
        "composite": lambda a, b: composite_loss(a, b, weights, params),
    }
    scale = 1.01 if args.corrupt else 1.0
    worst = 0.0
    for name, fn in checks.items():
        err = gradient_check(fn, y, yhat, rng=np.random.default_rng(args.seed + 1),
                             analytic_scale=scale)
        worst = max(worst, err)
        print(f"{name} max_relative_error={err:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        print(f"FAIL: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE}", file=sys.stderr)
        return 2
    return 0


_COMMANDS = {
    "make-toy-data": cmd_make_toy_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and usage errors (1)
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"depthkit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
