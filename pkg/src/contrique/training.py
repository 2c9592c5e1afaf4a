"""Contrastive pretraining loop: SGD with linear warmup + cosine decay,
balanced synthetic/UGC batches, per-epoch checkpoints, JSONL step logs, and
exact resumption.

All randomness flows from the config seed through named substreams keyed by
(epoch, step, record id), so a resumed run replays the interrupted schedule
and augmentations exactly.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .augment import make_views, partition_patches
from .colorspace import COLORSPACES
from .config import config_fingerprint, derive_seed, dump_resolved_config
from .losses import EmbeddingBatch, mixed_loss
from .manifest import load_manifest
from .models import (ContriqueModel, EncoderSpec, ProjectorSpec,
                     load_checkpoint, save_checkpoint)

logger = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 50


@dataclass
class TrainConfig:
    """Desk-scale defaults; the reference full-scale setting is batch 512,
    crop 256, lr 0.6, 25 epochs."""

    n_images: int = 32            # sources per batch (half synthetic, half ugc)
    crop_m: int = 96
    patch_mode: str = "pooled"    # "pooled" | "tile" | "none"
    patch_grid: int = 2           # pooled route: G^2 patch features per crop
    patch_p: int | None = None    # tile route: P x P tiles fed to the encoder
    tau: float = 0.1
    base_lr: float = 0.6          # peak lr at the reference batch size
    base_batch: int = 512
    lr: float | None = None       # explicit peak lr override
    warmup_epochs: int = 2
    total_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-6
    seed: int = 0
    levels_per_type: int = 5
    colorspaces: tuple = COLORSPACES
    flip_prob: float = 0.5
    encoder_widths: tuple = (16, 32, 64, 128)
    projector_hidden: int = 256
    embedding_dim: int = 64

    def __post_init__(self):
        if self.n_images < 2 or self.n_images % 2 != 0:
            raise ValueError(f"n_images must be even and >= 2, got {self.n_images}")
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 < warmup_epochs < total_epochs")
        for name in ("crop_m", "tau", "base_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patch_mode not in ("pooled", "tile", "none"):
            raise ValueError(f"unknown patch_mode {self.patch_mode!r}")
        if self.patch_mode == "tile" and self.patch_p is None:
            raise ValueError("tile patch mode requires patch_p")

    @property
    def peak_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return linear_lr_scaling(self.n_images, self.base_lr, self.base_batch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config fields {sorted(unknown)}")
        obj = dict(obj)
        for key in ("colorspaces", "encoder_widths"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(widths=tuple(self.encoder_widths),
                           patch_grid=self.patch_grid)

    def projector_spec(self) -> ProjectorSpec:
        return ProjectorSpec(hidden_dim=self.projector_hidden,
                             output_dim=self.embedding_dim)


def linear_lr_scaling(batch_images: int, base_lr: float = 0.6,
                      base_batch: int = 512) -> float:
    """Linear batch-size scaling of the peak learning rate."""
    if batch_images < 1:
        raise ValueError(f"batch_images must be >= 1, got {batch_images}")
    return base_lr * batch_images / base_batch


def lr_schedule(step: int, steps_per_epoch: int, config: TrainConfig) -> float:
    """Learning rate at a global step: linear 0 -> peak over the warmup
    epochs, then a single cosine descent peak -> 0 (no restarts)."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if steps_per_epoch < 1:
        raise ValueError("steps_per_epoch must be >= 1")
    peak = config.peak_lr
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.total_epochs * steps_per_epoch
    if step <= warmup:
        return peak * step / warmup
    if step >= total:
        return 0.0
    t = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * t))


def _epoch_order(pool, needed: int, rng: np.random.Generator, name: str):
    """Deterministic source order for one epoch; samples with replacement
    (logged) when the pool cannot supply ``needed`` distinct records."""
    if not pool:
        raise ValueError(f"{name} pool is empty")
    if len(pool) >= needed:
        perm = rng.permutation(len(pool))[:needed]
    else:
        logger.info("%s pool smaller than an epoch (%d < %d); sampling with "
                    "replacement", name, len(pool), needed)
        perm = rng.choice(len(pool), size=needed, replace=True)
    return [pool[int(i)] for i in perm]


def _views_for_sources(sources, config: TrainConfig, epoch: int, step: int,
                       manifest_dir):
    views = []
    for rec in sources:
        rng = np.random.default_rng(
            derive_seed(config.seed, "augment", epoch, step, rec.id))
        pair = make_views(rec, config.crop_m, rng,
                          levels_per_type=config.levels_per_type,
                          colorspaces=config.colorspaces,
                          flip_prob=config.flip_prob,
                          manifest_dir=manifest_dir)
        views.extend(pair)
        if config.patch_mode == "tile":
            for v in pair:
                views.extend(partition_patches(v, config.patch_p))
    return views


def _embedding_batch(model: ContriqueModel, views, config: TrainConfig):
    tensors = torch.from_numpy(np.stack([v.tensor for v in views]))
    with_patches = config.patch_mode == "pooled"
    _, z, _, pz = model(tensors, with_patches=with_patches)
    group, ugc, source = ([v.group_key for v in views],
                          [v.is_ugc for v in views],
                          [v.source_key for v in views])
    if with_patches:
        g2 = config.patch_grid ** 2
        z = torch.cat([z, pz])
        group = group + [k for k in group for _ in range(g2)]
        ugc = ugc + [u for u in ugc for _ in range(g2)]
        source = source + [s for s in source for _ in range(g2)]
    return EmbeddingBatch(z=z, group_key=group, is_ugc=ugc, tau=config.tau,
                          source_key=source)


def train(config: TrainConfig, synthetic_manifest, ugc_manifest, out_dir,
          resume=None) -> Path:
    """Run contrastive pretraining; returns the final checkpoint path.

    Epochs cover the smaller of the two pools once; the larger pool is
    re-subsampled each epoch. Emits checkpoints/epoch_<e>.pt per epoch, a
    final.pt, and train_log.jsonl with one line per optimizer step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synthetic_manifest = Path(synthetic_manifest)
    ugc_manifest = Path(ugc_manifest)
    syn_pool = load_manifest(synthetic_manifest)
    ugc_pool = load_manifest(ugc_manifest)
    if not syn_pool or not ugc_pool:
        raise ValueError("both training pools must be non-empty")

    fingerprint = config_fingerprint(config.to_dict())
    dump_resolved_config(config.to_dict(), out_dir)

    half = config.n_images // 2
    steps_per_epoch = max(1, min(len(syn_pool), len(ugc_pool)) // half)

    torch.manual_seed(derive_seed(config.seed, "init"))
    model = ContriqueModel(config.encoder_spec(), config.projector_spec())
    optimizer = torch.optim.SGD(model.parameters(), lr=0.0,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)

    start_epoch = 0
    if resume is not None:
        model, payload = load_checkpoint(resume)
        if payload["fingerprint"] != fingerprint:
            raise ValueError(
                "checkpoint fingerprint does not match this config "
                f"({payload['fingerprint']} != {fingerprint})"
            )
        optimizer = torch.optim.SGD(model.parameters(), lr=0.0,
                                    momentum=config.momentum,
                                    weight_decay=config.weight_decay)
        optimizer.load_state_dict(payload["optimizer_state"])
        start_epoch = payload["epoch"] + 1
        logger.info("resuming from %s at epoch %d", resume, start_epoch)

    log_path = out_dir / "train_log.jsonl"
    ckpt_dir = out_dir / "checkpoints"
    n_inst_guess = config.n_images * 2 * (
        1 + (config.patch_grid ** 2 if config.patch_mode == "pooled" else 0))
    divergence_bar = 10.0 * math.log(max(3, n_inst_guess))

    model.train()
    mode = "a" if start_epoch > 0 else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        bad_steps = 0
        for epoch in range(start_epoch, config.total_epochs):
            rng = np.random.default_rng(derive_seed(config.seed, "sampling", epoch))
            syn_order = _epoch_order(syn_pool, steps_per_epoch * half, rng, "synthetic")
            ugc_order = _epoch_order(ugc_pool, steps_per_epoch * half, rng, "ugc")
            epoch_losses = []
            for step in range(steps_per_epoch):
                global_step = epoch * steps_per_epoch + step
                lr = lr_schedule(global_step, steps_per_epoch, config)
                for pg in optimizer.param_groups:
                    pg["lr"] = lr

                syn_batch = syn_order[step * half:(step + 1) * half]
                ugc_batch = ugc_order[step * half:(step + 1) * half]
                views = (
                    _views_for_sources(syn_batch, config, epoch, step,
                                       synthetic_manifest.parent)
                    + _views_for_sources(ugc_batch, config, epoch, step,
                                         ugc_manifest.parent)
                )
                batch = _embedding_batch(model, views, config)
                loss = mixed_loss(batch)
                if not torch.isfinite(loss):
                    dump = out_dir / "diverged_batch.json"
                    with open(dump, "w", encoding="utf-8") as f:
                        json.dump({"epoch": epoch, "step": step,
                                   "ids": [r.id for r in syn_batch + ugc_batch]}, f)
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"offending batch ids dumped to {dump}"
                    )
                bad_steps = bad_steps + 1 if float(loss) > divergence_bar else 0
                if bad_steps >= DIVERGENCE_PATIENCE:
                    raise RuntimeError(
                        f"loss above {divergence_bar:.2f} for "
                        f"{DIVERGENCE_PATIENCE} consecutive steps; diverged"
                    )

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

                loss_val = float(loss)
                epoch_losses.append(loss_val)
                log.write(json.dumps({
                    "step": global_step, "epoch": epoch, "lr": lr,
                    "loss": loss_val, "wall_time": time.time(),
                }) + "\n")
            log.write(json.dumps({
                "epoch_summary": epoch, "mean_loss": float(np.mean(epoch_losses)),
            }) + "\n")
            log.flush()
            save_checkpoint(ckpt_dir / f"epoch_{epoch}.pt", model, epoch,
                            fingerprint, optimizer, config.to_dict())
            logger.info("epoch %d mean loss %.4f", epoch, float(np.mean(epoch_losses)))

    final = save_checkpoint(out_dir / "final.pt", model,
                            config.total_epochs - 1, fingerprint, optimizer,
                            config.to_dict())
    return final


def read_epoch_losses(log_path) -> list:
    """Mean loss per epoch from a training log."""
    means = []
    with open(log_path, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            if "epoch_summary" in obj:
                means.append(obj["mean_loss"])
    return means
