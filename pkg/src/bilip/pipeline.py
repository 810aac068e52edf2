"""Run orchestration shared by the command-line entry points and the test
suite: dataset loading, model construction from run configs, the two training
phases, and checkpoint plumbing between them.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bpe import Vocabulary, encode
from .checkpoint import (PHASE_CONTRASTIVE, PHASE_MAE_EXPORT, Checkpoint,
                         CheckpointError, load_checkpoint, save_checkpoint)
from .config import RunConfig
from .contrastive import DualEncoderModel, TrainConfig, train
from .corpus import PairRecord, read_manifest
from .encoders import TextEncoderConfig, VisionEncoderConfig
from .imaging import bilinear_resize, center_crop, load_image, random_resized_crop
from .mae import MAEConfig, export_encoder, pretrain
from .toydata import ToyDataset, generate_toy_dataset  # noqa: F401  (CLI re-export)


class PipelineError(ValueError):
    pass


def write_run_manifest(path, command: str, config_echo: dict, seed: int) -> None:
    doc = {
        "command": command,
        "config": config_echo,
        "seed": seed,
        "versions": {
            "bilip": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, ensure_ascii=False)
        fh.write("\n")


# -- data loading -----------------------------------------------------------------


@dataclass
class LoadedPairs:
    """Manifest records resolved to in-memory images and aligned captions."""

    records: list[PairRecord]
    images: np.ndarray        # unique images, (M, S, S, 3)
    image_refs: list[str]
    pair_image_idx: np.ndarray  # record -> row in images


def load_pairs(manifest_path, images_dir) -> LoadedPairs:
    records = read_manifest(manifest_path)
    if not records:
        raise PipelineError(f"manifest {manifest_path} has no records")
    images_dir = Path(images_dir)
    refs: list[str] = []
    ref_to_idx: dict[str, int] = {}
    arrays = []
    idx = []
    for rec in records:
        if rec.image_ref not in ref_to_idx:
            ref_to_idx[rec.image_ref] = len(refs)
            refs.append(rec.image_ref)
            arrays.append(load_image(images_dir / rec.image_ref))
        idx.append(ref_to_idx[rec.image_ref])
    return LoadedPairs(records=records, images=np.stack(arrays),
                       image_refs=refs, pair_image_idx=np.asarray(idx))


def load_toy_labels(data_dir):
    """Labels and concept assignments written by ``gen-toy-data``."""
    data_dir = Path(data_dir)
    labels = {}
    for tag in ("A", "B"):
        path = data_dir / f"labels_{tag}.txt"
        labels[tag] = path.read_text("utf-8").splitlines() if path.exists() else []
    concepts = {}
    concepts_path = data_dir / "concepts.tsv"
    if concepts_path.exists():
        for line in concepts_path.read_text("utf-8").splitlines():
            ref, concept = line.split("\t")
            concepts[ref] = int(concept)
    return labels["A"], labels["B"], concepts


def write_toy_dir(dataset: ToyDataset, out_dir) -> None:
    """PNG + manifest output of the generator plus the label/concept side files
    the evaluation commands consume."""
    out_dir = Path(out_dir)
    (out_dir / "labels_A.txt").write_text(
        "\n".join(dataset.labels_a) + "\n", encoding="utf-8")
    (out_dir / "labels_B.txt").write_text(
        "\n".join(dataset.labels_b) + "\n", encoding="utf-8")
    with open(out_dir / "concepts.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for ref, concept in zip(dataset.image_refs, dataset.concept_ids):
            fh.write(f"{ref}\t{int(concept)}\n")


def prepare_eval_image(image: np.ndarray, size: int) -> np.ndarray:
    """Shorter-side resize then center crop, for odd-sized inputs at eval time."""
    h, w = image.shape[:2]
    if h <= w:
        new_h, new_w = size, max(size, int(round(w * size / h)))
    else:
        new_h, new_w = max(size, int(round(h * size / w))), size
    return center_crop(bilinear_resize(image, new_h, new_w), size)


# -- model construction ------------------------------------------------------------


def vision_config(cfg: RunConfig) -> VisionEncoderConfig:
    return VisionEncoderConfig(
        patch_size=cfg.patch_size, image_size=cfg.image_size,
        width=cfg.vision_width, layers=cfg.vision_layers,
        heads=cfg.vision_heads, embed_dim=cfg.embed_dim)


def text_config(cfg: RunConfig, vocab_size: int) -> TextEncoderConfig:
    return TextEncoderConfig(
        vocab_size=vocab_size, layers=cfg.text_layers, width=cfg.text_width,
        heads=cfg.text_heads, max_len=cfg.max_len, embed_dim=cfg.embed_dim)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        optimizer=cfg.optimizer, learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
        warmup_steps=cfg.warmup_steps, epochs=cfg.epochs,
        number_of_multicrop=cfg.number_of_multicrop,
        global_size=cfg.image_size, local_size=cfg.local_size)


def mae_config(cfg: RunConfig) -> MAEConfig:
    return MAEConfig(
        mask_ratio=cfg.mask_ratio, decoder_layers=cfg.decoder_layers,
        optimizer=cfg.optimizer, learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
        warmup_steps=cfg.warmup_steps, epochs=cfg.epochs)


def build_model(cfg: RunConfig, vocab_size: int) -> DualEncoderModel:
    rng = np.random.default_rng(cfg.seed)
    return DualEncoderModel(vision_config(cfg), text_config(cfg, vocab_size), rng)


def model_weights(model: DualEncoderModel) -> dict[str, np.ndarray]:
    return model.state_dict()


def save_contrastive(model: DualEncoderModel, cfg_echo: dict, step: int, path) -> None:
    save_checkpoint(path, Checkpoint(
        phase=PHASE_CONTRASTIVE, step=step, weights=model.state_dict(),
        config=cfg_echo, temperature=model.temperature.tau))


def load_contrastive(path) -> tuple[DualEncoderModel, RunConfig]:
    ckpt = load_checkpoint(path, expected_phase=PHASE_CONTRASTIVE)
    cfg = RunConfig(**ckpt.config)
    vocab_size = ckpt.weights["text.tok_embed"].shape[0]
    model = build_model(cfg, vocab_size)
    model.load_state_dict(dict(ckpt.weights))
    model.temperature.restore(ckpt.temperature)
    return model, cfg


# -- phases -------------------------------------------------------------------------


def run_mae_phase(cfg: RunConfig) -> dict:
    """Phase 1: pre-train the vision encoder, export it decoder-free."""
    pairs = load_pairs(cfg.manifest, cfg.images_dir or Path(cfg.manifest).parent)
    vcfg = vision_config(cfg)
    mcfg = mae_config(cfg)

    def augment(batch, rng):
        out = np.empty((batch.shape[0], cfg.image_size, cfg.image_size, 3))
        for i, img in enumerate(batch):
            out[i] = random_resized_crop(img, cfg.image_size, (0.2, 1.0), rng)
        return out

    log_fh = open(cfg.metrics_log, "a", encoding="utf-8") if cfg.metrics_log else None
    try:
        def log(entry):
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")

        steps = cfg.steps or None
        model, metrics = pretrain(pairs.images, vcfg, mcfg, cfg.seed, steps=steps,
                                  on_step=log, augment=augment)
    finally:
        if log_fh is not None:
            log_fh.close()

    save_checkpoint(cfg.checkpoint_out, Checkpoint(
        phase=PHASE_MAE_EXPORT, step=len(metrics), weights=export_encoder(model),
        config=cfg.echo()))
    return {"steps": len(metrics), "final_loss": metrics[-1]["loss"] if metrics else None}


def run_train_phase(cfg: RunConfig) -> dict:
    """Phase 2: contrastive fine-tuning; optionally seeded from an MAE export."""
    pairs = load_pairs(cfg.manifest, cfg.images_dir or Path(cfg.manifest).parent)
    vocab = Vocabulary.load(cfg.vocab)
    model = build_model(cfg, vocab.vocab_size)

    if cfg.init_checkpoint:
        ckpt = load_checkpoint(cfg.init_checkpoint, expected_phase=PHASE_MAE_EXPORT)
        vision_state = {k.removeprefix("encoder."): v for k, v in ckpt.weights.items()}
        model.vision.load_state_dict(vision_state)

    seqs = [encode(rec.caption, vocab, cfg.max_len) for rec in pairs.records]
    pair_images = pairs.images[pairs.pair_image_idx]
    tcfg = train_config(cfg)
    steps = cfg.steps or None
    metrics = train(model, pair_images, seqs, tcfg, cfg.seed, steps=steps,
                    metrics_path=cfg.metrics_log or None)
    save_contrastive(model, cfg.echo(), len(metrics), cfg.checkpoint_out)
    return {"steps": len(metrics), "final_loss": metrics[-1]["loss"] if metrics else None,
            "tau": model.temperature.tau}
