"""Masked-autoencoder pre-training for the vision encoder.

A large random subset of patches (default 75%) is hidden from the encoder;
a small decoder rebuilds the pixels of the hidden patches from the encoded
visible tokens plus a shared learnable mask token. The reconstruction loss
reads masked positions only. After pre-training the decoder is dropped and
the encoder seeds the contrastive phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, gather_patches, scatter_patches
from .encoders import VisionEncoder, VisionEncoderConfig
from .imaging import patchify
from .nn import (LayerNorm, Linear, Module, Parameter, TransformerBlock,
                 transformer_stack, trunc_normal)
from .optim import AdamW, cosine_schedule

INIT_STD = 0.02


class MAEError(ValueError):
    pass


@dataclass
class MaskPlan:
    kept: np.ndarray
    masked: np.ndarray
    ratio: float

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=np.int64)
        self.masked = np.asarray(self.masked, dtype=np.int64)
        total = self.kept.size + self.masked.size
        union = np.union1d(self.kept, self.masked)
        if union.size != total or (np.sort(union) != np.arange(total)).any():
            raise MAEError("kept and masked must partition the patch indices")
        if self.kept.size < 1:
            raise MAEError("at least one patch must stay visible")
        if not 0.0 <= self.ratio < 1.0:
            raise MAEError("mask ratio must be in [0, 1)")


def sample_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly random mask plan; keeps floor(L * (1 - ratio)) patches."""
    # tolerance absorbs float residue in expressions like 100 * (1 - 0.9)
    num_keep = math.floor(num_patches * (1.0 - ratio) + 1e-9)
    if num_keep < 1:
        raise MAEError(
            f"ratio {ratio} leaves no visible patches out of {num_patches}"
        )
    perm = rng.permutation(num_patches)
    kept = np.sort(perm[:num_keep])
    masked = np.sort(perm[num_keep:])
    return MaskPlan(kept=kept, masked=masked, ratio=ratio)


@dataclass
class MAEConfig:
    """Mask geometry, decoder shape, and the optimization hyper-parameters."""

    mask_ratio: float = 0.75
    decoder_layers: int = 4
    decoder_width: int = 0          # 0 -> half the encoder width
    decoder_heads: int = 0          # 0 -> encoder heads, capped by width
    norm_pix_loss: bool = False
    optimizer: str = "adamw"
    learning_rate: float = 1.5e-3
    weight_decay: float = 0.5
    batch_size: int = 64
    warmup_steps: int = 1000
    epochs: int = 3

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise MAEError("mask_ratio must be in [0, 1)")
        if self.decoder_layers < 1:
            raise MAEError("decoder needs at least one layer")

    def resolved_decoder_width(self, encoder_width: int) -> int:
        return self.decoder_width or max(8, encoder_width // 2)

    def resolved_decoder_heads(self, encoder_heads: int, decoder_width: int) -> int:
        heads = self.decoder_heads or encoder_heads
        while decoder_width % heads:
            heads -= 1
        return heads


class MAEModel(Module):
    """Vision encoder plus the throwaway pixel decoder.

    The encoder is a complete :class:`VisionEncoder` (its joint-space
    projection simply receives no gradient here), so exporting it for the
    contrastive phase is a plain sub-state extraction.
    """

    def __init__(self, vision_cfg: VisionEncoderConfig, cfg: MAEConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = VisionEncoder(vision_cfg, rng)
        dw = cfg.resolved_decoder_width(vision_cfg.width)
        dh = cfg.resolved_decoder_heads(vision_cfg.heads, dw)
        self.decoder_embed = Linear(vision_cfg.width, dw, rng)
        self.mask_token = Parameter(trunc_normal((dw,), INIT_STD, rng))
        self.decoder_pos = Parameter(
            trunc_normal((1 + vision_cfg.num_patches, dw), INIT_STD, rng))
        self.decoder_blocks = [TransformerBlock(dw, dh, rng)
                               for _ in range(cfg.decoder_layers)]
        self.decoder_ln = LayerNorm(dw)
        self.decoder_head = Linear(dw, vision_cfg.patch_dim, rng)

    def loss(self, images: np.ndarray, plans: list[MaskPlan]) -> Tensor:
        """Mean squared error over masked patches only."""
        vc = self.encoder.cfg
        images = np.asarray(images, dtype=np.float64)
        b = images.shape[0]
        if len(plans) != b:
            raise MAEError("need one mask plan per image")
        num_patches = vc.num_patches
        for plan in plans:
            if plan.kept.size + plan.masked.size != num_patches:
                raise MAEError("mask plan inconsistent with image patch count")
        kept_counts = {plan.kept.size for plan in plans}
        if len(kept_counts) != 1:
            raise MAEError("all plans in a batch must keep the same patch count")

        kept_idx = np.stack([plan.kept for plan in plans])      # (b, k)
        masked_idx = np.stack([plan.masked for plan in plans])  # (b, m)
        if masked_idx.shape[1] == 0:
            raise MAEError("mask plans leave nothing to reconstruct")

        patches = patchify(images, vc.patch_size)               # (b, L, pd)
        x = self.encoder.patch_embed(Tensor(patches)) + self.encoder.pos_embed[1:]
        x = gather_patches(x, kept_idx)
        cls = self.encoder.cls_token + self.encoder.pos_embed[0:1]
        cls = cls + Tensor(np.zeros((b, 1, 1)))
        x = transformer_stack(concat([cls, x], axis=1), self.encoder.blocks)

        y = self.decoder_embed(x)                                # (b, 1+k, dw)
        kept_tokens = y[:, 1:, :]
        full = scatter_patches(kept_tokens, kept_idx, num_patches)
        mask_slots = np.zeros((b, num_patches, 1))
        rows = np.repeat(np.arange(b), masked_idx.shape[1])
        mask_slots[rows, masked_idx.reshape(-1), 0] = 1.0
        full = full + self.mask_token * Tensor(mask_slots)
        y = concat([y[:, 0:1, :], full], axis=1) + self.decoder_pos
        y = transformer_stack(y, self.decoder_blocks)
        pred = self.decoder_head(self.decoder_ln(y))[:, 1:, :]  # (b, L, pd)

        target = patches
        if self.cfg.norm_pix_loss:
            mu = target.mean(axis=-1, keepdims=True)
            var = target.var(axis=-1, keepdims=True)
            target = (target - mu) / np.sqrt(var + 1e-6)
        return masked_patch_mse(pred, target, masked_idx)


def masked_patch_mse(pred, target: np.ndarray, masked_idx: np.ndarray):
    """Mean squared error over the masked patch rows only; reconstruction
    values at kept positions never enter the loss."""
    from .autodiff import as_tensor
    pred = as_tensor(pred)
    masked_idx = np.asarray(masked_idx)
    pred_masked = gather_patches(pred, masked_idx)
    target_masked = np.take_along_axis(np.asarray(target, dtype=np.float64),
                                       masked_idx[:, :, None], axis=1)
    diff = pred_masked - Tensor(target_masked)
    return (diff * diff).sum() * (1.0 / diff.data.size)


def mae_step(model: MAEModel, images: np.ndarray, plans: list[MaskPlan]) -> float:
    """One loss evaluation with gradients left on the parameters."""
    model.zero_grad()
    loss = model.loss(images, plans)
    value = loss.item()
    if not np.isfinite(value):
        raise MAEError(f"non-finite reconstruction loss: {value}")
    loss.backward()
    return value


def export_encoder(model: MAEModel) -> dict[str, np.ndarray]:
    """Encoder-only weights; no key mentions the decoder."""
    return {f"encoder.{k}": v for k, v in model.encoder.state_dict().items()}


def load_exported_encoder(weights: dict[str, np.ndarray],
                          vision_cfg: VisionEncoderConfig, seed: int = 0) -> VisionEncoder:
    encoder = VisionEncoder(vision_cfg, np.random.default_rng(seed))
    encoder.load_state_dict({k.removeprefix("encoder."): v for k, v in weights.items()})
    return encoder


def pretrain(images: np.ndarray, vision_cfg: VisionEncoderConfig, cfg: MAEConfig,
             seed: int, steps: int | None = None, on_step=None,
             augment=None) -> tuple[MAEModel, list[dict]]:
    """Seeded pre-training loop over an in-memory image set.

    ``steps`` overrides the epoch-derived step budget when given. ``on_step``
    receives the metrics dict after every optimizer update. ``augment`` maps
    ``(batch_images, rng)`` to the views actually fed to the model (for
    random-resized-crop pre-training on larger source images).
    """
    rng = np.random.default_rng(seed)
    model = MAEModel(vision_cfg, cfg, rng)
    optimizer = AdamW(list(model.named_parameters()), lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay)
    n = images.shape[0]
    batch = min(cfg.batch_size, n)
    steps_per_epoch = max(1, n // batch)
    total_steps = steps if steps is not None else cfg.epochs * steps_per_epoch
    warmup = min(cfg.warmup_steps, max(total_steps // 10, 1))

    metrics = []
    step = 0
    while step < total_steps:
        order = rng.permutation(n)
        for start in range(0, steps_per_epoch * batch, batch):
            if step >= total_steps:
                break
            idx = order[start:start + batch]
            views = images[idx]
            if augment is not None:
                views = augment(views, rng)
            plans = [sample_mask(vision_cfg.num_patches, cfg.mask_ratio, rng)
                     for _ in idx]
            optimizer.lr = cosine_schedule(cfg.learning_rate, step, total_steps, warmup)
            loss = mae_step(model, views, plans)
            optimizer.step()
            entry = {"step": step, "loss": loss, "lr": optimizer.lr,
                     "grad_norm": optimizer.grad_norm()}
            metrics.append(entry)
            if on_step is not None:
                on_step(entry)
            step += 1
    return model, metrics
