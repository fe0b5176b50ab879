"""Command-line entry point: train / eval / dehaze / synth / ablate.

Option values resolve in priority order: explicit flag > CL2S_<NAME> env
var > config file > built-in default. The config file is JSON; keys may be
flat ("lr0") or dotted ("trainer.lr0"), in which case only the last segment
counts. Every command echoes its fully resolved configuration and a
manifest of written artifacts into the output directory, so a run can be
reproduced from its own output.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .images import load_image, quantize_unit, save_image
from .trainer import CheckpointError, TrainConfig, load_checkpoint, train
from .variants import (
    ABLATION_ORDER,
    VariantSpec,
    forward_image,
    resolve_preset_name,
)

log = logging.getLogger(__name__)

ENV_PREFIX = "CL2S_"


def _cast(value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    for typ in (int, float):
        if isinstance(default, typ):
            return typ(value)
    return value if default is None else type(default)(value)


def resolve_options(args, defaults):
    """Merge flags, environment, config file and defaults into one dict."""
    from_file = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            raw = json.load(fh)
        from_file = {k.split(".")[-1].replace("-", "_"): v for k, v in raw.items()}

    resolved = {}
    for name, default in defaults.items():
        flag = getattr(args, name, None)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if flag is not None:
            resolved[name] = flag
        elif env is not None:
            resolved[name] = _cast(env, default)
        elif name in from_file:
            resolved[name] = _cast(from_file[name], default)
        else:
            resolved[name] = default
    return resolved


def _prepare_out(opts, command):
    out = Path(opts["out"] or f"runs/{command}")
    out.mkdir(parents=True, exist_ok=True)
    with (out / "config.json").open("w") as fh:
        json.dump({k: v for k, v in sorted(opts.items())}, fh, indent=2, default=str)
    return out


def _write_manifest(out, command, artifacts):
    with (out / "manifest.json").open("w") as fh:
        json.dump({"command": command, "artifacts": sorted(str(a) for a in artifacts)},
                  fh, indent=2)


def _resolve_variant(opts):
    if opts.get("heads"):
        return VariantSpec.from_kinds(opts["heads"]).name
    return resolve_preset_name(opts["variant"])


def parse_variant_list(text):
    """Split a comma-separated preset list, tolerating the comma in FD-J1,4.

    Two-token merges are tried first so "FD-J1,4,CL2S" parses as the FD-J1,4
    preset followed by CL2S.
    """
    tokens = [t for t in text.split(",") if t]
    names, i = [], 0
    while i < len(tokens):
        if i + 1 < len(tokens):
            try:
                names.append(resolve_preset_name(tokens[i] + "," + tokens[i + 1]))
                i += 2
                continue
            except ValueError:
                pass
        try:
            names.append(resolve_preset_name(tokens[i]))
            i += 1
        except ValueError:
            raise ValueError(f"unknown variant {tokens[i]!r}") from None
    return names


def _train_config(opts, variant):
    return TrainConfig(
        variant=variant,
        backbone=opts["backbone"],
        pretrained=opts["pretrained"],
        divide_by_t=opts["divide_by_t"],
        dataset_root=opts["dataset"],
        dataset_layout=opts["layout"],
        dataset_split=opts["split"],
        synthetic_n=opts["synthetic"],
        synthetic_size=opts["size"],
        max_iters=opts["iters"],
        batch_size=opts["batch"],
        crop=opts["crop"],
        lr0=opts["lr0"],
        poly_power=opts["power"],
        grad_clip=opts["grad_clip"],
        aux_loss_weight=opts["aux_weight"],
        flip=opts["flip"],
        init_std=opts["init_std"],
        seed=opts["seed"],
        log_every=opts["log_every"],
        checkpoint_every=opts["checkpoint_every"],
        eval_every=opts["eval_every"],
        holdout_frac=opts["holdout_frac"],
        device=opts["device"],
    )


TRAIN_DEFAULTS = {
    "variant": "CL2S", "heads": "", "backbone": "tiny", "pretrained": False,
    "divide_by_t": False, "dataset": "", "layout": "FLAT_PAIRS", "split": "all",
    "synthetic": 0, "size": 128, "iters": 40000, "batch": 16, "crop": 256,
    "lr0": 2e-4, "power": 0.9, "grad_clip": 0.0, "aux_weight": 0.0,
    "flip": True, "init_std": 0.01, "seed": 0, "log_every": 50,
    "checkpoint_every": 2000, "eval_every": 2000, "holdout_frac": 0.1,
    "device": "cpu", "out": None,
}


def cmd_train(args):
    opts = resolve_options(args, TRAIN_DEFAULTS)
    variant = _resolve_variant(opts)
    cfg = _train_config(opts, variant)
    out = _prepare_out(opts, "train")
    result = train(cfg, out_dir=out)
    artifacts = [result.final_checkpoint, out / "train_log.jsonl", out / "config.json"]
    if result.best_checkpoint:
        artifacts.append(result.best_checkpoint)
    _write_manifest(out, "train", artifacts)
    print(f"trained {variant} for {cfg.max_iters} iterations")
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


EVAL_DEFAULTS = {
    "checkpoint": "", "identity": False, "dataset": "", "layout": "FLAT_PAIRS",
    "split": "all", "synthetic": 0, "size": 128, "holdout_only": False,
    "holdout_frac": 0.1, "seed": 0, "device": "cpu", "out": None,
}


def cmd_eval(args):
    opts = resolve_options(args, EVAL_DEFAULTS)
    if not opts["identity"] and not opts["checkpoint"]:
        raise ValueError("eval needs --checkpoint (or --identity for the passthrough baseline)")

    model = None
    if not opts["identity"]:
        model, _ = load_checkpoint(opts["checkpoint"])

    if opts["synthetic"] > 0:
        dataset = data_mod.make_synthetic_set(opts["synthetic"], opts["size"], opts["seed"])
        indices = range(len(dataset))
        if opts["holdout_only"]:
            n_holdout = int(round(len(dataset) * opts["holdout_frac"]))
            indices = range(len(dataset) - n_holdout, len(dataset))
    else:
        if not opts["dataset"]:
            raise ValueError("eval needs --dataset or --synthetic")
        dataset = data_mod.load_dataset(opts["dataset"], opts["layout"], split=opts["split"])
        indices = range(len(dataset))

    out = _prepare_out(opts, "eval")
    pred_dir = out / "predictions"
    gt_dir = out / "gt"
    pred_dir.mkdir(exist_ok=True)
    gt_dir.mkdir(exist_ok=True)

    for i in indices:
        sample = dataset[i]
        if opts["identity"]:
            prediction = sample.hazy
        else:
            prediction, _, _ = forward_image(model, sample.hazy)
        save_image(prediction, pred_dir / f"{sample.id}.png")
        save_image(sample.clear, gt_dir / f"{sample.id}.png")

    report = metrics_mod.evaluate_pairs(pred_dir, gt_dir)
    report_path = metrics_mod.write_report(report, out / "report.jsonl")
    print(metrics_mod.format_report(report))
    _write_manifest(out, "eval", [pred_dir, gt_dir, report_path, out / "config.json"])
    return 0


DEHAZE_DEFAULTS = {
    "checkpoint": "", "input": "", "dump_attention": False,
    "device": "cpu", "out": None, "seed": 0,
}


def cmd_dehaze(args):
    opts = resolve_options(args, DEHAZE_DEFAULTS)
    if not opts["checkpoint"]:
        raise ValueError("dehaze needs --checkpoint")
    if not opts["input"]:
        raise ValueError("dehaze needs --input directory")
    in_dir = Path(opts["input"])
    files = sorted(
        p for p in in_dir.iterdir()
        if p.is_file() and p.suffix.lower() in data_mod.IMAGE_SUFFIXES
    ) if in_dir.is_dir() else []
    if not files:
        raise ValueError(f"no input images in {in_dir}")

    model, _ = load_checkpoint(opts["checkpoint"])
    out = _prepare_out(opts, "dehaze")
    written, skipped = [], 0
    for path in files:
        try:
            img = load_image(path)
        except Exception as exc:
            log.warning("unreadable image %s (%s), skipping", path.name, exc)
            skipped += 1
            continue
        dehazed, weights, components = forward_image(model, img)
        target = out / f"{path.stem}.png"
        save_image(dehazed, target)
        written.append(target)
        if opts["dump_attention"]:
            from PIL import Image as PILImage
            for w, kind in zip(weights, model.spec.kinds):
                gray = np.round(np.clip(w, 0, 1) * 255).astype(np.uint8)
                wpath = out / f"{path.stem}_attention_{kind.value}.png"
                PILImage.fromarray(gray, mode="L").save(wpath)
                written.append(wpath)

    print(f"dehazed {len(files) - skipped}/{len(files)} images into {out}"
          + (f" ({skipped} skipped)" if skipped else ""))
    if not written:
        return 1
    _write_manifest(out, "dehaze", written + [out / "config.json"])
    return 0


SYNTH_DEFAULTS = {"n": 64, "size": 128, "seed": 0, "out": None}


def cmd_synth(args):
    opts = resolve_options(args, SYNTH_DEFAULTS)
    dataset = data_mod.make_synthetic_set(opts["n"], opts["size"], opts["seed"])
    out = _prepare_out(opts, "synth")
    data_mod.write_flat_pairs(dataset, out)
    _write_manifest(out, "synth", [out / "hazy", out / "clear", out / "config.json"])
    print(f"wrote {len(dataset)} pairs to {out}")
    return 0


ABLATE_DEFAULTS = dict(TRAIN_DEFAULTS, only="", iters=300)
ABLATE_DEFAULTS.pop("variant")
ABLATE_DEFAULTS.pop("heads")


def cmd_ablate(args):
    opts = resolve_options(args, ABLATE_DEFAULTS)
    presets = parse_variant_list(opts["only"]) if opts["only"] else list(ABLATION_ORDER)
    out = _prepare_out(opts, "ablate")

    rows, failures = [], 0
    for preset in presets:
        cfg = _train_config(opts, preset)
        run_dir = out / preset.replace(",", "_")
        try:
            dataset = data_mod.make_synthetic_set(cfg.synthetic_n, cfg.synthetic_size, cfg.seed) \
                if cfg.synthetic_n > 0 else \
                data_mod.load_dataset(cfg.dataset_root, cfg.dataset_layout, split=cfg.dataset_split)
            result = train(cfg, dataset=dataset, out_dir=run_dir, quiet=True)
            n_holdout = int(round(len(dataset) * cfg.holdout_frac))
            holdout = [dataset[i] for i in range(len(dataset) - n_holdout, len(dataset))]
            if not holdout:
                holdout = [dataset[i] for i in range(len(dataset))]
            psnrs, ssims = [], []
            for s in holdout:
                pred, _, _ = forward_image(result.model, s.hazy)
                pred = quantize_unit(pred)
                psnrs.append(metrics_mod.psnr(pred, s.clear))
                ssims.append(metrics_mod.ssim(pred, s.clear))
            rows.append({"variant": preset, "psnr": float(np.mean(psnrs)),
                         "ssim": float(np.mean(ssims))})
            log.info("%s: PSNR %.2f SSIM %.4f", preset, rows[-1]["psnr"], rows[-1]["ssim"])
        except Exception as exc:
            log.error("variant %s failed: %s", preset, exc)
            rows.append({"variant": preset, "error": str(exc)})
            failures += 1

    report_path = out / "ablation.jsonl"
    with report_path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")

    print(f"{'variant':<10} {'PSNR':>8} {'SSIM':>8}")
    for row in rows:
        if "error" in row:
            print(f"{row['variant']:<10} {'failed: ' + row['error']}")
        else:
            print(f"{row['variant']:<10} {row['psnr']:>8.2f} {row['ssim']:>8.4f}")
    _write_manifest(out, "ablate", [report_path, out / "config.json"])
    return 1 if failures == len(presets) else 0


# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file (flat or dotted keys)")
    p.add_argument("--out", help="output directory (default runs/<command>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--device")


def _add_dataset_flags(p):
    p.add_argument("--dataset", help="dataset root directory")
    p.add_argument("--layout", choices=data_mod.LAYOUTS)
    p.add_argument("--split", choices=("all", "train", "test"))
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="use a seeded synthetic set of N images instead of --dataset")
    p.add_argument("--size", type=int, help="synthetic image size")


def _add_train_flags(p):
    p.add_argument("--backbone", choices=("tiny", "full"))
    p.add_argument("--pretrained", action="store_true", default=None)
    p.add_argument("--divide-by-t", dest="divide_by_t", action="store_true", default=None)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--power", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--aux-weight", dest="aux_weight", type=float)
    p.add_argument("--no-flip", dest="flip", action="store_false", default=None)
    p.add_argument("--init-std", dest="init_std", type=float)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cl2s",
        description="Multi-component dehazing toolkit: training, evaluation, ablation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    _add_common(p)
    _add_dataset_flags(p)
    _add_train_flags(p)
    p.add_argument("--variant", help="preset name (CL2S, DM2F, FDNet, FD-J1, ...)")
    p.add_argument("--heads", help="custom component set, e.g. AS,MUL,SIN")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="dehaze a paired set and report PSNR/SSIM/CIEDE2000")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--identity", action="store_true", default=None,
                   help="score the hazy input itself (no model)")
    p.add_argument("--holdout-only", dest="holdout_only", action="store_true", default=None)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dehaze", help="dehaze arbitrary images (no ground truth)")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="directory of hazy images")
    p.add_argument("--dump-attention", dest="dump_attention", action="store_true", default=None)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("synth", help="write a synthetic FLAT_PAIRS dataset")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="train and score every ablation preset")
    _add_common(p)
    _add_dataset_flags(p)
    _add_train_flags(p)
    p.add_argument("--only", help="comma-separated preset subset")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
