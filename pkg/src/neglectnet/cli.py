"""``neglectnet`` command line: synth, train, eval, infer, gradcheck.

Configuration is resolved as defaults, then ``config.json`` beside a given
checkpoint, then ``--config FILE``, then individual ``--key value`` flags.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint, imageio, synth
from .config import ConfigError, RunConfig
from .generator import build_generator
from .metrics import evaluate_arrays
from .training import (TrainReport, Trainer, latest_checkpoint, load_params, predict)

log = logging.getLogger("neglectnet")

CONFIG_NAME = "config.json"
THREADS_ENV = "NEGLECTNET_THREADS"


class CliError(Exception):
    pass


# --------------------------------------------------------------- config glue


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config keys")
    grp = p.add_argument_group("config keys")
    for f in dataclasses.fields(RunConfig):
        dashed = "--" + f.name.replace("_", "-")
        names = ["--" + f.name] + ([dashed] if dashed != "--" + f.name else [])
        grp.add_argument(*names, dest=f.name, default=None, metavar=f.type.upper(),
                         help=f"default {f.default!r}")


def resolve_config(args: argparse.Namespace, checkpoint_path: Path | None = None) -> RunConfig:
    merged: dict = {}
    if checkpoint_path is not None and (checkpoint_path.parent / CONFIG_NAME).is_file():
        merged.update(json.loads((checkpoint_path.parent / CONFIG_NAME).read_text()))
    if args.config:
        merged.update(json.loads(Path(args.config).read_text()))
    merged.update({k: v for k in RunConfig.keys() if (v := getattr(args, k, None)) is not None})
    return RunConfig.from_dict(merged)


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / CONFIG_NAME)


def _datasets(cfg: RunConfig, split: str) -> synth.Dataset:
    if cfg.data_dir and (Path(cfg.data_dir) / split / "manifest.csv").is_file():
        return synth.load_split(cfg.data_dir, split)
    if split == "train":
        return synth.make_dataset(cfg.synth(cfg.seed), cfg.n_train)
    return synth.make_dataset(cfg.synth(cfg.test_seed), cfg.n_test)


def _load_generator(cfg: RunConfig, ckpt: Path, image_hw: tuple[int, int] | None = None):
    net = cfg.net()
    if image_hw is not None:
        net = dataclasses.replace(net, image_h=image_hw[0], image_w=image_hw[1])
    gen = build_generator(net, cfg.seed)
    load_params(gen.tensors, checkpoint.load(ckpt), "gen")
    return gen


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    n_train = args.n if args.n is not None else cfg.n_train
    if n_train < 1 or cfg.n_test < 0:
        raise CliError("n must be >= 1")
    root = Path(cfg.data_dir or "data")
    train = synth.make_dataset(cfg.synth(cfg.seed), n_train, root, "train")
    counts = [("train", len(train))]
    if cfg.n_test > 0:
        test = synth.make_dataset(cfg.synth(cfg.test_seed), cfg.n_test, root, "test")
        counts.append(("test", len(test)))
    _echo_config(cfg.replace(n_train=n_train, data_dir=str(root)), root)
    for split, n in counts:
        print(f"{split},{n},{root / split}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    _echo_config(cfg, out)
    data = _datasets(cfg, "train")
    trainer = Trainer(cfg.net(), cfg.loss_weights(), cfg.schedule())
    if args.resume:
        ckpt = latest_checkpoint(out)
        if ckpt is None:
            raise CliError(f"nothing to resume in {out}")
        trainer.load_arrays(checkpoint.load(ckpt))
        log_path = out / "train_log.csv"
        if log_path.is_file():
            prev = TrainReport.read_csv(log_path)
            trainer.report.records = [r for r in prev.records if r.step < trainer.step]
        log.info("resuming from %s at step %d", ckpt, trainer.step)
    report = trainer.fit(data, out)
    if cfg.figures and report.records:
        from .plotting import loss_curves
        loss_curves(report, out / "loss_curves.png")
    print(f"steps,{trainer.step}")
    print(f"checkpoint,{latest_checkpoint(out)}")
    if report.records:
        last = report.records[-1]
        print(f"l1_y,{last.l1_y!r}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    cfg = resolve_config(args, ckpt)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _datasets(cfg, args.split)
    gen = _load_generator(cfg, ckpt)
    y_p, z_p, _ = predict(gen, data.x)
    result = evaluate_arrays(y_p, data.y, z_p, data.z if z_p is not None else None)
    csv_path = out / f"eval_{args.split}.csv"
    result.write_csv(csv_path)
    wr = csv.writer(sys.stdout)
    wr.writerow(["metric", "value", "n"])
    for name, value, n in result.rows():
        wr.writerow([name, f"{value:.6g}", n])
    if cfg.figures:
        from .plotting import sample_grid
        sample_grid(data.x, data.y, y_p, z_p, out / f"eval_{args.split}.png")
    return 0


def _center_crop(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape[-2:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise CliError(f"image {h}x{w} is smaller than {multiple}x{multiple}")
    if (nh, nw) != (h, w):
        log.warning("input %dx%d not divisible by %d; center-cropping to %dx%d", h, w, multiple, nh, nw)
        top, left = (h - nh) // 2, (w - nw) // 2
        img = img[..., top:top + nh, left:left + nw]
    return img


def _gray_rgb(m: np.ndarray) -> np.ndarray:
    """(1,H,W) in [0,1] -> (3,H,W) in [-1,1]."""
    return np.repeat(np.clip(m, 0, 1) * 2.0 - 1.0, 3, axis=0)


def cmd_infer(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    cfg = resolve_config(args, ckpt)
    x = imageio.load_rgb(args.input)
    x = _center_crop(x, 2 ** max(cfg.depth, cfg.d_depth))
    h, w = x.shape[-2:]
    gen = _load_generator(cfg, ckpt, (h, w))
    y_p, z_p, masks = predict(gen, x[None])
    out = Path(args.output) if args.output else Path(cfg.out_dir) / f"infer_{Path(args.input).stem}"
    out.mkdir(parents=True, exist_ok=True)

    imageio.save_rgb(out / "x.png", x)
    imageio.save_rgb(out / "y_p.png", y_p[0])
    z = z_p[0] if z_p is not None else np.zeros((1, h, w), np.float32)
    imageio.save_mask(out / "z_p.png", z)
    for i, m in enumerate(masks, start=1):
        f = h // m.shape[-2]
        imageio.save_mask(out / f"neglect_mask_{i}.png", m[0].repeat(f, axis=-2).repeat(f, axis=-1))
    diff = np.abs(x - y_p[0]).mean(axis=0, keepdims=True) / 2.0
    panel = np.concatenate([x, _gray_rgb(z), y_p[0], _gray_rgb(diff)], axis=-1)
    Image.fromarray(imageio.rgb_to_uint8(panel), mode="RGB").save(out / "panel.png", format="PNG")
    print(f"outputs,{out}")
    print(f"neglect_masks,{len(masks)}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite()
    print("check,max_rel_err,tol,status")
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {' '.join(failed)}", file=sys.stderr)
    return 0 if not failed else 1


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neglectnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic train/test dataset")
    p.add_argument("--n", type=int, default=None, help="training samples (overrides n_train)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in out_dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None, help="directory for the output images")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (CliError, ConfigError) as exc:
        parser.error(str(exc))
    except (FileNotFoundError, OSError, checkpoint.CheckpointError) as exc:
        print(f"neglectnet: error: {exc}", file=sys.stderr)
        return 1
    return 1
