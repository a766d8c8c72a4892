"""Command-line surface: train, decompose, eval, synth, verify.

Configuration is flat ``key = value`` text under ``[section]`` headers
(stdlib configparser syntax).  Unknown sections or keys are rejected
before any compute, and every value is validated by the owning module's
config type.  All commands are deterministic given their inputs and seed,
and exit nonzero with a one-line cause on any error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .data import (AugmentConfig, ensure_disjoint_split, generate_mit_shading,
                   load_dataset, load_sample, parse_manifest, resynthesize)
from .losses import LossConfig
from .metrics import PredictionRecord, evaluate_report
from .network import NetworkConfig, build_network
from .png_io import read_png, write_png
from .rng import Rng, derive_seed
from .trainer import (TrainConfig, decompose_image, load_checkpoint,
                      network_from_checkpoint, train_loop)
from . import verify as verify_mod


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_manifest: str | None = None
    test_manifest: str | None = None
    split_mode: str = "scene-split"
    out_dir: str = "run"


_SCHEMA = {
    "network": {
        "channel_scale": float,
        "use_hypercolumn": bool,
        "use_deconv_head": bool,
        "dropout_prob": float,
        "input_multiple": int,
    },
    "loss": {
        "lambda": float,
        "use_gradient_loss": bool,
        "log_epsilon": float,
    },
    "augment": {
        "crop_h": int,
        "crop_w": int,
        "mirror_prob": float,
        "rotate_min_deg": float,
        "rotate_max_deg": float,
        "zoom_min": float,
        "zoom_max": float,
        "enable_rotate_zoom": bool,
    },
    "train": {
        "base_lr": float,
        "momentum": float,
        "batch_size": int,
        "max_iterations": int,
        "seed": int,
        "checkpoint_every": int,
    },
    "data": {
        "train_manifest": str,
        "test_manifest": str,
        "split_mode": str,
    },
    "output": {
        "out_dir": str,
    },
}


def load_run_config(path) -> RunConfig:
    """Parse and validate a config file; typos fail before any compute."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ValueError(f"config: cannot read {path}")
    values: dict[str, dict] = {}
    lr_multipliers: dict[str, float] = {}
    for section in parser.sections():
        if section == "lr_multipliers":
            for key, raw in parser.items(section):
                lr_multipliers[key] = float(raw)
            continue
        if section not in _SCHEMA:
            raise ValueError(f"config: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"config: unknown key {key!r} in [{section}]")
            kind = _SCHEMA[section][key]
            if kind is bool:
                values[section][key] = parser.getboolean(section, key)
            else:
                values[section][key] = kind(raw)

    net = NetworkConfig(**values.get("network", {}))
    loss_kw = dict(values.get("loss", {}))
    if "lambda" in loss_kw:
        loss_kw["lam"] = loss_kw.pop("lambda")
    loss = LossConfig(**loss_kw)
    aug = AugmentConfig(**values.get("augment", {}))
    train = TrainConfig(**values.get("train", {}), loss=loss, augment=aug,
                        lr_multipliers=lr_multipliers)
    data = values.get("data", {})
    out = values.get("output", {})
    return RunConfig(network=net, train=train,
                     train_manifest=data.get("train_manifest"),
                     test_manifest=data.get("test_manifest"),
                     split_mode=data.get("split_mode", "scene-split"),
                     out_dir=out.get("out_dir", "run"))


def _image_to_nchw(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


def _nchw_to_image(t: np.ndarray) -> np.ndarray:
    return t[0].transpose(1, 2, 0)


def cmd_train(args) -> int:
    if args.config is None:
        raise ValueError("train: --config is required")
    run = load_run_config(args.config)
    if args.seed is not None:
        run.train.seed = args.seed
    if run.train_manifest is None:
        raise ValueError("config: [data] train_manifest is required to train")
    manifest = parse_manifest(run.train_manifest, split="train",
                              mode=run.split_mode)
    if run.test_manifest:
        test = parse_manifest(run.test_manifest, split="test", mode=run.split_mode)
        ensure_disjoint_split(manifest, test)
    samples = load_dataset(manifest)
    os.makedirs(run.out_dir, exist_ok=True)
    net = build_network(run.network, Rng(derive_seed(run.train.seed, "init")))
    resume = load_checkpoint(args.resume) if args.resume else None
    if args.verbose:
        print(f"training {len(samples)} samples for "
              f"{run.train.max_iterations} iterations")

    def ck_path(iteration):
        return os.path.join(run.out_dir, f"checkpoint_{iteration:06d}.ckpt")

    _, trace = train_loop(net, samples, run.train, checkpoint_path=ck_path,
                          resume=resume)
    trace_path = os.path.join(run.out_dir, "loss_trace.csv")
    with open(trace_path, "w") as f:
        f.write("iteration,loss\n")
        for it, loss in trace:
            f.write(f"{it},{loss!r}\n")
    if args.verbose and trace:
        print(f"final loss {trace[-1][1]:.6g} -> {trace_path}")
    return 0


def cmd_decompose(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ck)
    image = _image_to_nchw(read_png(args.input))
    albedo, shading = decompose_image(net, image)
    write_png(args.out_albedo, _nchw_to_image(albedo), bit_depth=16)
    write_png(args.out_shading, _nchw_to_image(shading), bit_depth=16)
    if args.verbose:
        print(f"decomposed {args.input} "
              f"({image.shape[2]}x{image.shape[3]}) -> "
              f"{args.out_albedo}, {args.out_shading}")
    return 0


def cmd_eval(args) -> int:
    manifest = parse_manifest(args.manifest)
    records = []
    missing = []
    for entry in manifest.entries:
        sample = load_sample(entry, manifest.base_dir)
        pa = os.path.join(args.pred_dir, f"{entry.id}_albedo.png")
        ps = os.path.join(args.pred_dir, f"{entry.id}_shading.png")
        if not (os.path.exists(pa) and os.path.exists(ps)):
            missing.append({"id": entry.id,
                            "error": f"missing prediction files {pa} / {ps}"})
            continue
        records.append(PredictionRecord(
            entry.id, sample.albedo, sample.shading,
            _image_to_nchw(read_png(pa)), _image_to_nchw(read_png(ps)),
            sample.mask))
    if not records and not missing:
        raise ValueError("eval: manifest has no samples")
    report = (evaluate_report(records, include_mit_total=args.mit_total)
              if records else {"per_sample": [], "errors": []})
    report["errors"] = missing + report.get("errors", [])
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.verbose and "mean" in report:
        m = report["mean"]
        print(f"mse_a={m['mse_a']:.6f} mse_s={m['mse_s']:.6f} "
              f"lmse_a={m['lmse_a']:.6f} lmse_s={m['lmse_s']:.6f} "
              f"dssim_a={m['dssim_a']:.6f} dssim_s={m['dssim_s']:.6f}")
    if report["errors"]:
        for err in report["errors"]:
            print(f"eval error [{err['id']}]: {err['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    manifest = parse_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    if not manifest.entries:
        print("synth: manifest is empty, nothing to do", file=sys.stderr)
        return 0
    lines = []
    for entry in manifest.entries:
        sample = load_sample(entry, manifest.base_dir)
        sid = entry.id
        mask = sample.mask
        if args.mode == "gen-mit-shading":
            shading, alpha, valid = generate_mit_shading(sample.image, sample.albedo)
            image = sample.image
            mask = mask * valid
            if args.verbose:
                print(f"{sid}: alpha={alpha:.6f} "
                      f"valid={float(valid.mean()):.4f}")
        else:  # resynth-sintel
            shading = sample.shading
            image = resynthesize(sample.albedo, sample.shading)
        names = {"image": f"{sid}_image.png", "albedo": f"{sid}_albedo.png",
                 "shading": f"{sid}_shading.png", "mask": f"{sid}_mask.png"}
        write_png(os.path.join(args.out_dir, names["image"]),
                  _nchw_to_image(image), bit_depth=16)
        write_png(os.path.join(args.out_dir, names["albedo"]),
                  _nchw_to_image(sample.albedo), bit_depth=16)
        if shading.shape[1] == 1:
            write_png(os.path.join(args.out_dir, names["shading"]),
                      shading[0, 0], bit_depth=16)
        else:
            write_png(os.path.join(args.out_dir, names["shading"]),
                      _nchw_to_image(shading), bit_depth=16)
        write_png(os.path.join(args.out_dir, names["mask"]), mask[0, 0],
                  bit_depth=8)
        lines.append("\t".join([sid, names["image"], names["albedo"],
                                names["shading"], names["mask"], entry.scene]))
    out_manifest = os.path.join(args.out_dir, "manifest.tsv")
    with open(out_manifest, "w") as f:
        f.write(f"# generated by intrinsics synth --mode {args.mode}\n")
        f.write("\n".join(lines) + "\n")
    if args.verbose:
        print(f"wrote {len(lines)} samples -> {out_manifest}")
    return 0


def cmd_verify(args) -> int:
    results = verify_mod.run_all(corrupt=args.corrupt, log=print)
    failed = [name for name, ok, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intrinsics",
        description="Albedo/shading decomposition by convolutional regression")
    parser.add_argument("--verbose", action="store_true", help="progress output")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured training seed")
    parser.add_argument("--config", default=None, help="run configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    # SUPPRESS keeps a globally supplied --config from being clobbered
    p.add_argument("--config", default=argparse.SUPPRESS)
    p.add_argument("--resume", default=None,
                   help="checkpoint to resume from (same config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", help="split an image into albedo and shading")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out-albedo", required=True)
    p.add_argument("--out-shading", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mit-total", action="store_true",
                   help="include the approximate reweighted total LMSE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="derive a dataset (shading generation or "
                                     "resynthesis)")
    p.add_argument("--mode", required=True,
                   choices=["gen-mit-shading", "resynth-sintel"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run every module's verification suite")
    p.add_argument("--corrupt", default=None, choices=verify_mod.CORRUPTIBLE,
                   help="testing aid: break one layer's backward pass")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
