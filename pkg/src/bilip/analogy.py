"""Multimodal feature analogy: fuse an image feature with a weighted text
feature, re-normalize, and retrieve nearest gallery images by cosine.

The gallery index is exhaustive (flat), so rankings are exact and can be
checked against a brute-force oracle; an approximate backend would slot in
behind the same interface if galleries ever outgrow desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .contrastive import DualEncoderModel
from .evaluation import embed_images

INDEX_FORMAT_VERSION = 1
UNIT_EPS = 1e-9
DEFAULT_W_GRID = (1.0, 2.0, 3.0, 4.0, 5.0)


class AnalogyError(ValueError):
    pass


@dataclass
class GalleryIndex:
    ids: list[str]
    features: np.ndarray  # (N, D), unit rows

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if len(self.ids) != self.features.shape[0]:
            raise AnalogyError("id list and feature matrix disagree on size")
        if len(set(self.ids)) != len(self.ids):
            raise AnalogyError("gallery ids must be unique")
        norms = np.linalg.norm(self.features, axis=1)
        if (np.abs(norms - 1.0) > 1e-6).any():
            raise AnalogyError("gallery rows must be unit-normalized")

    def save(self, path) -> None:
        meta = json.dumps({"format_version": INDEX_FORMAT_VERSION, "ids": self.ids})
        np.savez(path, features=self.features, meta=np.array(meta))

    @classmethod
    def load(cls, path) -> "GalleryIndex":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"][()]))
            if meta.get("format_version") != INDEX_FORMAT_VERSION:
                raise AnalogyError(
                    f"unsupported index format: {meta.get('format_version')}"
                )
            return cls(ids=list(meta["ids"]), features=data["features"])


@dataclass
class AnalogyQuery:
    image_feature: np.ndarray
    text_feature: np.ndarray
    weight: float
    k: int = 10

    def __post_init__(self):
        self.image_feature = np.asarray(self.image_feature, dtype=np.float64)
        self.text_feature = np.asarray(self.text_feature, dtype=np.float64)
        if not np.isfinite(self.weight) or self.weight < 0:
            raise AnalogyError("weight must be a finite non-negative real")
        if self.k < 1:
            raise AnalogyError("k must be at least 1")


def build_gallery(images: np.ndarray, model: DualEncoderModel,
                  ids: list[str] | None = None) -> GalleryIndex:
    """Encode and unit-normalize a stack of images into a flat index."""
    if images.shape[0] == 0:
        raise AnalogyError("cannot build a gallery from zero images")
    feats = embed_images(model, images)
    if ids is None:
        ids = [f"g{i:05d}" for i in range(images.shape[0])]
    return GalleryIndex(ids=list(ids), features=feats)


def fuse_query(x: np.ndarray, y: np.ndarray, w: float) -> np.ndarray:
    """l2(x + w*y); the degenerate all-zero fusion is an error."""
    q = np.asarray(x, dtype=np.float64) + w * np.asarray(y, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm < UNIT_EPS:
        raise AnalogyError("fused query is the zero vector (antipodal inputs)")
    return q / norm


def analogy_query(query: AnalogyQuery, index: GalleryIndex) -> list[tuple[str, float]]:
    """Top-k gallery ids by cosine against the fused query; ties keep id
    (insertion) order via a stable sort."""
    q = fuse_query(query.image_feature, query.text_feature, query.weight)
    scores = index.features @ q
    order = np.argsort(-scores, kind="stable")[:query.k]
    return [(index.ids[i], float(scores[i])) for i in order]


def sweep_weight(x: np.ndarray, y: np.ndarray, w_grid, index: GalleryIndex,
                 k: int = 10) -> list[tuple[float, list[tuple[str, float]]]]:
    """One ranked list per weight, in grid order (duplicates included).
    Picking the best weight is left to the caller."""
    w_grid = list(w_grid)
    if not w_grid:
        raise AnalogyError("weight grid is empty")
    return [(float(w), analogy_query(AnalogyQuery(x, y, float(w), k), index))
            for w in w_grid]
