"""Contrastive fine-tuning: symmetric InfoNCE over cosine similarity with a
learnable floored temperature, multi-crop view generation, and the training
loop tying the dual encoders together.

The temperature divides the similarities inside the softmax (it scales the
logits); it is learned as a log-inverse scalar so positivity is structural,
and it is re-clamped to the floor after every optimizer update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, l2_normalize, log_softmax
from .bpe import TokenSequence
from .encoders import TextEncoder, TextEncoderConfig, VisionEncoder, VisionEncoderConfig
from .imaging import random_resized_crop
from .nn import Module, Parameter
from .optim import AdamW, cosine_schedule


class TrainError(ValueError):
    pass


class NumericalError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class SimilarityMatrix:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise TrainError("similarity matrix must be two-dimensional")
        if (np.abs(self.values) > 1.0 + 1e-9).any():
            raise TrainError("cosine similarities must lie in [-1, 1]")


def cosine_similarity_matrix(x, y) -> Tensor:
    """Pairwise cosine similarities: entry (i, j) is the dot product of the
    unit-normalized i-th row of x and j-th row of y."""
    x = as_tensor(x)
    y = as_tensor(y)
    for feats in (x, y):
        norms = np.linalg.norm(feats.data, axis=-1)
        if not np.isfinite(feats.data).all():
            raise TrainError("features must be finite")
        if (norms == 0.0).any():
            raise TrainError("zero-norm feature vector")
    return l2_normalize(x) @ l2_normalize(y).swapaxes(-1, -2)


def _exactify_log_inv(tau: float) -> float:
    """Best-effort one-ulp adjustment of log(1/tau) so exp(-x) == tau."""
    x = math.log(1.0 / tau)
    for k in range(-4, 5):
        cand = x
        for _ in range(abs(k)):
            cand = math.nextafter(cand, math.inf if k > 0 else -math.inf)
        if math.exp(-cand) == tau:
            return cand
    return x


class Temperature(Module):
    """Learnable logit scale with a hard floor on the temperature.

    The parameter is ``log(1/tau)``. The reported ``tau`` is tracked next to
    the parameter so the initial value and the floor are represented exactly
    even when ``exp`` cannot round-trip them (0.01 has no exact preimage in
    float64); the resulting logit-scale discrepancy is below one part in 1e15.
    """

    def __init__(self, initial_tau: float = 0.07, tau_floor: float = 0.01):
        if initial_tau < tau_floor:
            raise TrainError("initial temperature below the floor")
        self.log_inv_tau = Parameter(np.array(_exactify_log_inv(initial_tau)))
        self.tau_floor = tau_floor
        self._tau = initial_tau

    @property
    def tau(self) -> float:
        return self._tau

    def scale(self) -> Tensor:
        """The differentiable multiplier applied to similarities."""
        return self.log_inv_tau.exp()

    def clamp_(self) -> None:
        """Re-derive tau from the parameter; pull back to the floor if the
        last update pushed below it. Call after every optimizer step."""
        value = math.exp(-float(self.log_inv_tau.data))
        if value < self.tau_floor:
            self.log_inv_tau.data = np.array(_exactify_log_inv(self.tau_floor))
            self._tau = self.tau_floor
        else:
            self._tau = value

    def restore(self, tau: float) -> None:
        """Adopt a persisted temperature (the parameter is loaded separately)."""
        if tau < self.tau_floor:
            raise TrainError(f"persisted temperature {tau} below the floor")
        self._tau = float(tau)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}log_inv_tau", self.log_inv_tau


def info_nce(sim, temperature, direction: str = "i2t") -> Tensor:
    """Mean cross-entropy of each row's softmax against the diagonal match.

    ``direction="t2i"`` scores the transposed matrix. ``temperature`` is a
    :class:`Temperature` or a plain float.
    """
    sim = as_tensor(sim.values if isinstance(sim, SimilarityMatrix) else sim)
    n, m = sim.shape
    if n != m:
        raise TrainError(f"similarity matrix must be square, got {sim.shape}")
    if direction == "t2i":
        sim = sim.swapaxes(0, 1)
    elif direction != "i2t":
        raise TrainError(f"unknown direction {direction!r}")
    if isinstance(temperature, Temperature):
        logits = sim * temperature.scale()
    else:
        logits = sim * (1.0 / float(temperature))
    log_probs = log_softmax(logits, axis=-1)
    diag = log_probs[np.arange(n), np.arange(n)]
    return -diag.mean()


def contrastive_loss(img_feats, txt_feats, temperature) -> Tensor:
    """Average of the image-to-text and text-to-image InfoNCE losses."""
    img_feats = as_tensor(img_feats)
    txt_feats = as_tensor(txt_feats)
    if img_feats.shape[0] != txt_feats.shape[0]:
        raise TrainError(
            f"feature counts differ: {img_feats.shape[0]} vs {txt_feats.shape[0]}"
        )
    sim = cosine_similarity_matrix(img_feats, txt_feats)
    return (info_nce(sim, temperature, "i2t") + info_nce(sim, temperature, "t2i")) * 0.5


@dataclass
class CropSet:
    global_view: np.ndarray
    local_views: list[np.ndarray] = field(default_factory=list)


@dataclass
class TrainConfig:
    """Contrastive-phase hyper-parameters; field names follow the run-config
    key spelling (``number_of_multicrop`` counts local views)."""

    optimizer: str = "adamw"
    learning_rate: float = 1.2e-3
    weight_decay: float = 0.2
    batch_size: int = 64
    schedule: str = "cosine"
    warmup_steps: int = 2000
    epochs: int = 32
    number_of_multicrop: int = 1
    global_size: int = 224
    local_size: int = 96
    global_scale: tuple[float, float] = (0.4, 1.0)
    local_scale: tuple[float, float] = (0.05, 0.4)
    local_views_i2t_only: bool = False
    initial_tau: float = 0.07
    tau_floor: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainError("learning rate must be positive")
        if self.batch_size < 2:
            raise TrainError("contrastive learning needs batch size >= 2")
        if self.number_of_multicrop < 0:
            raise TrainError("number_of_multicrop must be >= 0")


def make_crops(image: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> CropSet:
    """One global random-resized crop plus ``number_of_multicrop`` low-resolution
    crops covering small parts of the image."""
    if min(image.shape[0], image.shape[1]) < cfg.local_size:
        raise TrainError(
            f"source image {image.shape[1]}x{image.shape[0]} smaller than the "
            f"local crop size {cfg.local_size}"
        )
    global_view = random_resized_crop(image, cfg.global_size, cfg.global_scale, rng)
    locals_ = [random_resized_crop(image, cfg.local_size, cfg.local_scale, rng)
               for _ in range(cfg.number_of_multicrop)]
    return CropSet(global_view=global_view, local_views=locals_)


class DualEncoderModel(Module):
    """Vision encoder, text encoder, and temperature under one parameter tree."""

    def __init__(self, vision_cfg: VisionEncoderConfig, text_cfg: TextEncoderConfig,
                 rng: np.random.Generator, initial_tau: float = 0.07,
                 tau_floor: float = 0.01):
        self.vision = VisionEncoder(vision_cfg, rng)
        self.text = TextEncoder(text_cfg, rng)
        self.temperature = Temperature(initial_tau, tau_floor)


def view_losses(model: DualEncoderModel, crops: list[CropSet],
                seqs: list[TokenSequence], cfg: TrainConfig) -> Tensor:
    """Mean contrastive loss over the global view and each local view, every
    view paired with the same caption batch."""
    txt = model.text.encode_sequences(seqs)
    views = [np.stack([c.global_view for c in crops])]
    n_local = len(crops[0].local_views)
    for j in range(n_local):
        views.append(np.stack([c.local_views[j] for c in crops]))
    losses = []
    for v, batch in enumerate(views):
        img = model.vision(batch)
        if v > 0 and cfg.local_views_i2t_only:
            sim = cosine_similarity_matrix(img, txt)
            losses.append(info_nce(sim, model.temperature, "i2t"))
        else:
            losses.append(contrastive_loss(img, txt, model.temperature))
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * (1.0 / len(losses))


def train_step(model: DualEncoderModel, optimizer: AdamW, crops: list[CropSet],
               seqs: list[TokenSequence], cfg: TrainConfig, lr: float) -> dict:
    """One optimizer update followed by the temperature clamp."""
    if len(crops) < 2:
        raise TrainError("contrastive learning needs batch size >= 2")
    if len(crops) != len(seqs):
        raise TrainError("crop batch and caption batch sizes differ")
    model.zero_grad()
    try:
        loss = view_losses(model, crops, seqs, cfg)
    except TrainError as exc:
        # mid-training feature blowups (non-finite / zero-norm) are numerical
        # failures, not caller mistakes
        raise NumericalError(str(exc)) from exc
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(f"non-finite contrastive loss: {value}")
    loss.backward()
    optimizer.lr = lr
    optimizer.step()
    model.temperature.clamp_()
    return {
        "loss": value,
        "tau": model.temperature.tau,
        "lr": lr,
        "grad_norm": optimizer.grad_norm(),
    }


def train(model: DualEncoderModel, images: np.ndarray, seqs: list[TokenSequence],
          cfg: TrainConfig, seed: int, steps: int | None = None,
          metrics_path=None, on_step=None) -> list[dict]:
    """Seeded training loop over aligned (image, token sequence) pairs.

    Pairs are reshuffled each epoch; crops are generated per step from the
    same generator, so a fixed seed fixes the whole trajectory. Metrics are
    appended to ``metrics_path`` as JSON lines when given.
    """
    n = images.shape[0]
    if n != len(seqs):
        raise TrainError("images and token sequences must align")
    rng = np.random.default_rng(seed)
    optimizer = AdamW(list(model.named_parameters()), lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay)
    batch = min(cfg.batch_size, n)
    steps_per_epoch = max(1, n // batch)
    total_steps = steps if steps is not None else cfg.epochs * steps_per_epoch
    warmup = min(cfg.warmup_steps, max(total_steps // 10, 1))

    log_fh = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    metrics = []
    try:
        step = 0
        while step < total_steps:
            order = rng.permutation(n)
            for start in range(0, steps_per_epoch * batch, batch):
                if step >= total_steps:
                    break
                idx = order[start:start + batch]
                crops = [make_crops(images[i], cfg, rng) for i in idx]
                batch_seqs = [seqs[i] for i in idx]
                lr = cosine_schedule(cfg.learning_rate, step, total_steps, warmup)
                entry = {"step": step}
                entry.update(train_step(model, optimizer, crops, batch_seqs, cfg, lr))
                metrics.append(entry)
                if log_fh is not None:
                    log_fh.write(json.dumps(entry) + "\n")
                if on_step is not None:
                    on_step(entry)
                step += 1
    finally:
        if log_fh is not None:
            log_fh.close()
    return metrics
