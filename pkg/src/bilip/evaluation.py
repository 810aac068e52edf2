"""Evaluation battery: zero-shot classification with prompt templates,
cross-modal retrieval with Recall@K, and cross-lingual similarity heatmaps.

Everything here runs on frozen weights and plain numpy feature arrays; the
ranking order is always a stable sort so ties resolve by index and results
can be checked against brute-force oracles exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .bpe import Vocabulary, encode
from .contrastive import DualEncoderModel

DEFAULT_TEMPLATES = {
    "en": ["a photo of a {label}"],
    "ko": ["{label} 사진"],
    "synthetic-A": ["{label}"],
    "synthetic-B": ["{label}"],
}


class EvalError(ValueError):
    pass


def _normalize_rows(feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise EvalError("zero-norm feature vector")
    return feats / norms


def embed_texts(model: DualEncoderModel, vocab: Vocabulary, texts,
                batch_size: int = 256) -> np.ndarray:
    """Unit-normalized text features, one row per input string."""
    texts = list(texts)
    if not texts:
        raise EvalError("no texts to embed")
    max_len = model.text.cfg.max_len
    seqs = [encode(t, vocab, max_len) for t in texts]
    rows = []
    for start in range(0, len(seqs), batch_size):
        rows.append(model.text.encode_sequences(seqs[start:start + batch_size]).data)
    return _normalize_rows(np.concatenate(rows))


def embed_images(model: DualEncoderModel, images: np.ndarray,
                 batch_size: int = 256) -> np.ndarray:
    """Unit-normalized image features, one row per image."""
    if images.shape[0] == 0:
        raise EvalError("no images to embed")
    rows = []
    for start in range(0, images.shape[0], batch_size):
        rows.append(model.vision(images[start:start + batch_size]).data)
    return _normalize_rows(np.concatenate(rows))


@dataclass
class LabelSet:
    """Class names plus prompt templates for one language."""

    class_names: list[str]
    language: str
    templates: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            raise EvalError("label set has no classes")
        if not self.templates:
            self.templates = list(DEFAULT_TEMPLATES.get(self.language, ["{label}"]))
        for template in self.templates:
            if template.count("{label}") != 1:
                raise EvalError(
                    f"template must contain exactly one {{label}} slot: {template!r}"
                )

    def prompts(self, class_index: int) -> list[str]:
        name = self.class_names[class_index]
        return [t.replace("{label}", name) for t in self.templates]


def class_embeddings(model: DualEncoderModel, vocab: Vocabulary,
                     labelset: LabelSet) -> np.ndarray:
    """One unit vector per class: the re-normalized mean of its unit-normalized
    template embeddings."""
    rows = []
    for c in range(len(labelset.class_names)):
        feats = embed_texts(model, vocab, labelset.prompts(c))
        rows.append(feats.mean(axis=0))
    return _normalize_rows(np.stack(rows))


def zeroshot_classify(images: np.ndarray, labelset: LabelSet,
                      model: DualEncoderModel, vocab: Vocabulary):
    """Predict a class index per image by cosine against class embeddings.

    Returns ``(predictions, scores)`` with scores of shape (N, num_classes).
    Ties resolve to the lowest class index.
    """
    class_feats = class_embeddings(model, vocab, labelset)
    img_feats = embed_images(model, images)
    scores = img_feats @ class_feats.T
    return scores.argmax(axis=1), scores


@dataclass
class RetrievalResult:
    recall_at: dict[int, float]
    ranks: np.ndarray  # best ground-truth rank per query, 1-based

    def __post_init__(self):
        for k, value in self.recall_at.items():
            if not 0.0 <= value <= 100.0:
                raise EvalError(f"recall@{k} out of range: {value}")


def _best_ranks(scores: np.ndarray, gt_columns: list[list[int]]) -> np.ndarray:
    """For each row, the 1-based rank of its best ground-truth column under a
    descending stable sort (ties keep ascending column order)."""
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for i, gt in enumerate(gt_columns):
        positions = np.flatnonzero(np.isin(order[i], gt))
        ranks[i] = positions.min() + 1
    return ranks


def retrieval_eval(img_feats: np.ndarray, txt_feats: np.ndarray,
                   gt: dict[int, list[int]], ks=(1, 5, 10)) -> dict[str, RetrievalResult]:
    """Recall@K for both directions.

    ``gt`` maps image index to its ground-truth caption indices; the inverse
    map for text-to-image is derived from it. A query scores a hit at K when
    any of its ground-truth items ranks in the top K by cosine.
    """
    if img_feats.shape[0] == 0 or txt_feats.shape[0] == 0:
        raise EvalError("empty retrieval gallery")
    n_img, n_txt = img_feats.shape[0], txt_feats.shape[0]
    img_gt = [sorted(gt.get(i, [])) for i in range(n_img)]
    if any(not g for g in img_gt):
        raise EvalError("every image needs at least one ground-truth caption")
    txt_gt: list[list[int]] = [[] for _ in range(n_txt)]
    for i, captions in enumerate(img_gt):
        for j in captions:
            if not 0 <= j < n_txt:
                raise EvalError(f"caption index {j} out of range")
            txt_gt[j].append(i)
    if any(not g for g in txt_gt):
        raise EvalError("every caption needs at least one ground-truth image")

    img_unit = _normalize_rows(np.asarray(img_feats, dtype=np.float64))
    txt_unit = _normalize_rows(np.asarray(txt_feats, dtype=np.float64))
    scores = img_unit @ txt_unit.T

    results = {}
    for direction, mat, gt_cols in (("image_to_text", scores, img_gt),
                                    ("text_to_image", scores.T, txt_gt)):
        ranks = _best_ranks(mat, gt_cols)
        recall = {int(k): float(100.0 * (ranks <= k).mean()) for k in ks}
        results[direction] = RetrievalResult(recall_at=recall, ranks=ranks)
    return results


@dataclass
class HeatmapMatrix:
    values: np.ndarray
    row_texts: list[str]
    col_texts: list[str]

    def __post_init__(self):
        if (np.abs(self.values) > 1.0 + 1e-9).any():
            raise EvalError("heatmap entries must be cosines in [-1, 1]")

    @property
    def row_argmax(self) -> np.ndarray:
        return self.values.argmax(axis=1)

    @property
    def diagonal_hit_rate(self) -> float:
        n = min(self.values.shape)
        return float((self.row_argmax[:n] == np.arange(n)).mean())


def crosslingual_heatmap(texts_a, texts_b, model: DualEncoderModel,
                         vocab: Vocabulary) -> HeatmapMatrix:
    """Cosine similarities between two aligned prompt lists (index i of each
    list carries the same meaning in its language)."""
    texts_a, texts_b = list(texts_a), list(texts_b)
    if not texts_a or not texts_b:
        raise EvalError("heatmap needs non-empty text lists")
    feats_a = embed_texts(model, vocab, texts_a)
    feats_b = embed_texts(model, vocab, texts_b)
    return HeatmapMatrix(values=feats_a @ feats_b.T,
                         row_texts=texts_a, col_texts=texts_b)


def export_heatmap_csv(heatmap: HeatmapMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + heatmap.col_texts)
        for text, row in zip(heatmap.row_texts, heatmap.values):
            writer.writerow([text] + [f"{v:.6f}" for v in row])


def render_heatmap(heatmap: HeatmapMatrix, path) -> None:
    """Optional image rendering; needs matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.0 + 0.5 * len(heatmap.col_texts),
                                    1.0 + 0.5 * len(heatmap.row_texts)))
    im = ax.imshow(heatmap.values, vmin=-1.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(heatmap.col_texts)), heatmap.col_texts,
                  rotation=45, ha="right")
    ax.set_yticks(range(len(heatmap.row_texts)), heatmap.row_texts)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def export_metrics(task: str, dataset: str, language: str, metrics: dict, path) -> None:
    doc = {"task": task, "dataset": dataset, "language": language, "metrics": metrics}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, ensure_ascii=False)
        fh.write("\n")
