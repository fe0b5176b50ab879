"""Optimization loop: Adam with poly learning-rate decay, checkpoints, logs.

The recipe follows the lineage defaults: initial learning rate 2e-4 decayed
by (1 - iter/max_iters)**0.9, batches of random 256-crops with paired
horizontal flips, Adam betas (0.9, 0.999). The loss is L1 between the fused
output and ground truth, with an optional per-head auxiliary L1 term.

Runs are seeded end to end: the same config and seed reproduce the same
loss trace on the same hardware.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig
from .data import load_dataset, make_synthetic_set, random_crop_pair
from .images import clamp_unit, from_tensor, quantize_unit
from .metrics import psnr
from .variants import DehazeModel, VariantSpec, build_variant

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PROBE_SEED = 0x5EED
PROBE_SIZE = 32


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the dumped batch path."""


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "CL2S"
    backbone: str = "tiny"
    pretrained: bool = False
    divide_by_t: bool = False

    # dataset: either a directory + layout, or a seeded synthetic set
    dataset_root: str = ""
    dataset_layout: str = "FLAT_PAIRS"
    dataset_split: str = "all"
    synthetic_n: int = 0
    synthetic_size: int = 128

    max_iters: int = 40000      # 20000 is the O-HAZE-style budget
    batch_size: int = 16
    crop: int = 256
    lr0: float = 2e-4
    poly_power: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    grad_clip: float = 0.0      # 0 disables; enabled runs clip at this global norm
    aux_loss_weight: float = 0.0
    flip: bool = True
    init_std: float = 0.01
    seed: int = 0

    log_every: int = 50
    checkpoint_every: int = 2000
    eval_every: int = 2000
    holdout_frac: float = 0.1
    device: str = "cpu"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.poly_power <= 0:
            raise ValueError(f"poly power must be > 0, got {self.poly_power}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def poly_lr(iteration, cfg):
    """Learning rate at a given iteration: lr0 * (1 - iter/max_iters)**power."""
    if iteration < 0 or iteration > cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    return cfg.lr0 * (1.0 - iteration / cfg.max_iters) ** cfg.poly_power


def training_loss(pred, components, gt, aux_weight=0.0):
    """L1 on the fused output plus an optional mean per-head L1 term."""
    loss = (pred - gt).abs().mean()
    if aux_weight > 0 and components:
        aux = sum((c.prediction - gt).abs().mean() for c in components) / len(components)
        loss = loss + aux_weight * aux
    return loss


def resolve_dataset(cfg):
    """Build the dataset handle a TrainConfig describes."""
    if cfg.synthetic_n > 0:
        return make_synthetic_set(cfg.synthetic_n, cfg.synthetic_size, cfg.seed)
    if not cfg.dataset_root:
        raise ValueError("zero samples: no dataset_root and no synthetic_n configured")
    return load_dataset(cfg.dataset_root, cfg.dataset_layout, split=cfg.dataset_split)


# ---------------------------------------------------------------------------
# checkpoints

def _probe_input():
    gen = torch.Generator().manual_seed(PROBE_SEED)
    return torch.rand(1, 3, PROBE_SIZE, PROBE_SIZE, generator=gen)


def _probe_output(model):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            fused, _, _ = model(_probe_input())
    finally:
        model.train(was_training)
    return fused


def save_checkpoint(model, cfg, iteration, path, optimizer=None, rng=None):
    """Write model parameters plus everything needed to resume or verify."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "variant": model.spec.name,
        "kinds": ",".join(k.value for k in model.spec.kinds),
        "backbone": json.dumps(asdict(model.backbone_config)),
        "config": json.dumps(asdict(cfg)) if cfg is not None else "",
        "model_state": model.state_dict(),
        "probe_output": _probe_output(model),
        "torch_rng": torch.get_rng_state(),
    }
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    if rng is not None:
        payload["numpy_rng"] = json.dumps(rng.bit_generator.state)
    torch.save(payload, path)
    return path


def load_checkpoint(path, variant=None):
    """Rebuild the saved assembly and verify its forward pass on the probe.

    `variant`, when given, must match the stored variant ("incompatible
    checkpoint" otherwise). Corrupted files raise CheckpointError without
    leaving partial state anywhere.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        version = payload["version"]
        stored_variant = payload["variant"]
        kinds = payload["kinds"]
        backbone = json.loads(payload["backbone"])
        state = payload["model_state"]
    except Exception as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if variant is not None and stored_variant != variant:
        raise CheckpointError(
            f"incompatible checkpoint: trained variant {stored_variant!r}, requested {variant!r}"
        )
    spec = VariantSpec(stored_variant, tuple(kinds.split(",")))
    backbone["strides"] = tuple(backbone["strides"])
    backbone["level_channels"] = tuple(backbone["level_channels"])
    backbone.pop("pretrained", None)  # weights come from the checkpoint
    cfg_json = payload.get("config", "")
    divide_by_t = False
    if cfg_json:
        divide_by_t = json.loads(cfg_json).get("divide_by_t", False)
    model = DehazeModel(spec, BackboneConfig(pretrained=False, **backbone),
                        divide_by_t=divide_by_t)
    model.load_state_dict(state)
    model.eval()
    restored = _probe_output(model)
    if not torch.allclose(restored, payload["probe_output"], atol=1e-6, rtol=0):
        raise CheckpointError(f"probe mismatch after restoring {path}")
    return model, payload


# ---------------------------------------------------------------------------
# the loop

@dataclass
class TrainResult:
    model: DehazeModel
    history: list = field(default_factory=list)
    final_checkpoint: Path = None
    best_checkpoint: Path = None
    best_psnr: float = -math.inf


def _batch_tensor(samples, attr, device):
    arrs = [getattr(s, attr) for s in samples]
    stack = np.stack(arrs).astype(np.float32)
    return torch.from_numpy(stack).permute(0, 3, 1, 2).to(device)


def _holdout_psnr(model, samples, device):
    vals = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for s in samples:
            x = torch.from_numpy(s.hazy.astype(np.float32)).permute(2, 0, 1)[None].to(device)
            fused, _, _ = model(x)
            out = quantize_unit(clamp_unit(from_tensor(fused)))
            vals.append(psnr(out, s.clear))
    model.train(was_training)
    return float(np.mean(vals))


def _dump_batch(out_dir, iteration, hazy, clear):
    dump_dir = Path(out_dir) if out_dir else Path.cwd()
    dump_path = dump_dir / f"diverged_batch_iter{iteration}.npz"
    np.savez(dump_path, hazy=hazy.cpu().numpy(), clear=clear.cpu().numpy())
    return dump_path


def train(cfg, dataset=None, out_dir=None, quiet=False):
    """Run the configured optimization and return the trained model.

    Writes periodic/final/best checkpoints and a structured log under
    out_dir when given. Raises TrainingDiverged on a non-finite loss, after
    dumping the offending batch.
    """
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    dataset = dataset if dataset is not None else resolve_dataset(cfg)
    if len(dataset) == 0:
        raise ValueError("zero samples")

    n_holdout = int(round(len(dataset) * cfg.holdout_frac)) if cfg.eval_every > 0 else 0
    n_train = len(dataset) - n_holdout
    if n_train < 1:
        raise ValueError(f"zero samples left for training after holdout of {n_holdout}")
    holdout = [dataset[i] for i in range(n_train, len(dataset))]

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = build_variant(
        cfg.variant, backbone=cfg.backbone, pretrained=cfg.pretrained,
        divide_by_t=cfg.divide_by_t, init_std=cfg.init_std, seed=cfg.seed,
    ).to(cfg.device)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr0, betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )

    result = TrainResult(model=model)
    log_file = (out_dir / "train_log.jsonl").open("w") if out_dir else None

    def emit(record):
        result.history.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        if not quiet:
            log.info(" ".join(f"{k}={v}" for k, v in record.items()))

    t0 = time.time()
    try:
        for it in range(cfg.max_iters):
            lr = poly_lr(it, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            idx = rng.integers(0, n_train, cfg.batch_size)
            crops = [random_crop_pair(dataset[int(i)], cfg.crop, rng, flip=cfg.flip) for i in idx]
            hazy = _batch_tensor(crops, "hazy", cfg.device)
            clear = _batch_tensor(crops, "clear", cfg.device)

            optimizer.zero_grad()
            fused, _, components = model(hazy)
            loss = training_loss(fused, components, clear, cfg.aux_loss_weight)
            if not torch.isfinite(loss):
                dump = _dump_batch(out_dir, it, hazy, clear)
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at iteration {it}; batch dumped to {dump}"
                )
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()

            step = it + 1
            if step == 1 or step % cfg.log_every == 0 or step == cfg.max_iters:
                emit({"iter": step, "lr": round(lr, 10), "loss": round(loss.item(), 6)})

            if cfg.eval_every > 0 and holdout and step % cfg.eval_every == 0:
                score = _holdout_psnr(model, holdout, cfg.device)
                emit({"iter": step, "holdout_psnr": round(score, 4)})
                if score > result.best_psnr:
                    result.best_psnr = score
                    if out_dir:
                        result.best_checkpoint = save_checkpoint(
                            model, cfg, step, out_dir / "checkpoint_best.pt",
                        )

            if out_dir and cfg.checkpoint_every > 0 and step % cfg.checkpoint_every == 0 \
                    and step != cfg.max_iters:
                save_checkpoint(model, cfg, step, out_dir / f"checkpoint_{step:06d}.pt",
                                optimizer=optimizer, rng=rng)
    finally:
        if log_file:
            log_file.close()

    if out_dir:
        result.final_checkpoint = save_checkpoint(
            model, cfg, cfg.max_iters, out_dir / "checkpoint_final.pt",
            optimizer=optimizer, rng=rng,
        )
    log.info("training done in %.1fs (%d iterations)", time.time() - t0, cfg.max_iters)
    model.eval()
    return result
