"""Procedural bilingual toy dataset: colored shapes with captions in two
synthetic languages whose word inventories share no surface forms.

Language A only uses letters ``a``-``m``; language B only ``n``-``z``. Every
rendered image gets exactly two pair records, one per language, so a model
trained on the set sees no cross-lingual supervision at all: any alignment
between the languages has to come through the shared images.

Concepts are (shape, color) combinations; each sample additionally varies a
size attribute and a backdrop attribute, mentioned in the caption on a fixed
cycle so caption lengths vary and the bare concept phrase stays a valid,
in-distribution description.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PairRecord, write_manifest
from .imaging import save_image

SHAPES = ("circle", "square", "triangle", "star", "cross", "diamond", "ring", "hexagon")

COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.90, 0.85, 0.10),
    "magenta": (0.85, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.85),
    "orange": (0.95, 0.55, 0.05),
    "purple": (0.50, 0.15, 0.75),
}

# language A vocabulary (letters a-m only)
SHAPE_WORDS_A = ("bagim", "dilec", "fehma", "gablik", "hecid", "keliba", "limad", "mabef")
COLOR_WORDS_A = ("cadel", "ebik", "fagil", "gemad", "hilef", "iceba", "jamil", "kedim")
SIZE_WORDS_A = {"small": "lica", "large": "mageb"}
BACKDROP_WORDS_A = {"dim": "difel", "lit": "helim"}

# language B vocabulary (letters n-z only)
SHAPE_WORDS_B = ("nortu", "povun", "qusto", "ruvot", "sunpo", "turox", "uvnor", "wotus")
COLOR_WORDS_B = ("xunor", "yotus", "zupor", "nuvot", "oxtun", "pyrus", "qovun", "rotyx")
SIZE_WORDS_B = {"small": "stup", "large": "vorn"}
BACKDROP_WORDS_B = {"dim": "wyx", "lit": "zont"}

MAX_CONCEPTS = len(SHAPES) * len(COLORS)


class ToyDataError(ValueError):
    pass


def concept_table(num_concepts: int) -> list[tuple[int, int]]:
    """Deterministic (shape, color) assignment; the first eight concepts all
    differ in both attributes (latin-square walk of the 8x8 grid)."""
    if num_concepts < 2:
        raise ToyDataError("need at least two concepts")
    if num_concepts > MAX_CONCEPTS:
        raise ToyDataError(
            f"{num_concepts} concepts exceed the {MAX_CONCEPTS} renderable combinations"
        )
    n = len(SHAPES)
    return [(k % n, (k + k // n) % n) for k in range(num_concepts)]


def concept_phrase(shape_idx: int, color_idx: int, language: str) -> str:
    """The bare concept label in one synthetic language."""
    if language == "synthetic-A":
        return f"{COLOR_WORDS_A[color_idx]} {SHAPE_WORDS_A[shape_idx]}"
    if language == "synthetic-B":
        return f"{SHAPE_WORDS_B[shape_idx]} {COLOR_WORDS_B[color_idx]}"
    raise ToyDataError(f"no toy labels for language {language!r}")


def _caption(shape_idx, color_idx, size_attr, backdrop_attr, variant, language) -> str:
    base = concept_phrase(shape_idx, color_idx, language)
    if language == "synthetic-A":
        size_w, bg_w = SIZE_WORDS_A[size_attr], BACKDROP_WORDS_A[backdrop_attr]
    else:
        size_w, bg_w = SIZE_WORDS_B[size_attr], BACKDROP_WORDS_B[backdrop_attr]
    if variant == 0:
        return base
    if variant == 1:
        return f"{base} {size_w}"
    if variant == 2:
        return f"{base} {bg_w}"
    return f"{base} {size_w} {bg_w}"


def _shape_mask(shape: str, yy: np.ndarray, xx: np.ndarray, radius: float) -> np.ndarray:
    r = np.sqrt(xx ** 2 + yy ** 2)
    if shape == "circle":
        return r <= radius
    if shape == "square":
        return np.maximum(np.abs(xx), np.abs(yy)) <= radius * 0.88
    if shape == "triangle":
        # upward triangle: three half-plane constraints
        return (yy <= radius * 0.75) & (yy >= -radius * 0.75 + np.abs(xx) * 1.9)
    if shape == "star":
        theta = np.arctan2(yy, xx)
        rim = radius * (0.55 + 0.45 * np.cos(5.0 * (theta - np.pi / 2)))
        return r <= rim
    if shape == "cross":
        arm = radius * 0.34
        inside = np.maximum(np.abs(xx), np.abs(yy)) <= radius
        return inside & ((np.abs(xx) <= arm) | (np.abs(yy) <= arm))
    if shape == "diamond":
        return np.abs(xx) + np.abs(yy) <= radius * 1.15
    if shape == "ring":
        return (r <= radius) & (r >= radius * 0.55)
    if shape == "hexagon":
        c, s = 0.5, np.sqrt(3.0) / 2.0
        a = np.abs(xx)
        b = np.abs(c * xx + s * yy)
        d = np.abs(c * xx - s * yy)
        return np.maximum(a, np.maximum(b, d)) <= radius * 0.92
    raise ToyDataError(f"unknown shape {shape!r}")


def render_shape(shape: str, color: tuple, size_attr: str, backdrop_attr: str,
                 rng: np.random.Generator, render_size: int = 64) -> np.ndarray:
    """One (render_size, render_size, 3) image with seeded jitter in shape
    placement, scale, backdrop level, and fill color."""
    span = np.linspace(-1.0, 1.0, render_size)
    xx, yy = np.meshgrid(span, span)
    cx = rng.uniform(-0.25, 0.25)
    cy = rng.uniform(-0.25, 0.25)
    base_radius = 0.30 if size_attr == "small" else 0.52
    radius = base_radius * rng.uniform(0.9, 1.1)
    mask = _shape_mask(shape, yy - cy, xx - cx, radius)

    bg_level = (0.18 if backdrop_attr == "dim" else 0.72) + rng.uniform(-0.04, 0.04)
    image = np.full((render_size, render_size, 3), bg_level)
    fill = np.clip(np.asarray(color) + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
    image[mask] = fill
    image += rng.normal(0.0, 0.015, size=image.shape)
    return np.clip(image, 0.0, 1.0)


@dataclass
class ToyDataset:
    records: list[PairRecord]
    images: np.ndarray            # (N, S, S, 3)
    image_refs: list[str]
    concept_ids: np.ndarray       # (N,)
    labels_a: list[str]           # bare concept phrase per concept, language A
    labels_b: list[str]

    @property
    def num_images(self) -> int:
        return int(self.images.shape[0])

    def image_by_ref(self, ref: str) -> np.ndarray:
        return self.images[self.image_refs.index(ref)]


def generate_toy_dataset(num_concepts: int, samples_per_concept: int, seed: int,
                         out_dir=None, render_size: int = 64) -> ToyDataset:
    """Render the dataset deterministically under ``seed``; when ``out_dir``
    is given, also write PNGs plus a ``manifest.tsv``."""
    table = concept_table(num_concepts)
    rng = np.random.default_rng(seed)

    images = []
    records: list[PairRecord] = []
    refs: list[str] = []
    concept_ids = []
    color_names = list(COLORS)
    for c, (shape_idx, color_idx) in enumerate(table):
        shape = SHAPES[shape_idx]
        color = COLORS[color_names[color_idx]]
        for i in range(samples_per_concept):
            size_attr = "small" if i % 2 == 0 else "large"
            backdrop_attr = "dim" if (i // 2) % 2 == 0 else "lit"
            variant = (i // 4) % 4
            image = render_shape(shape, color, size_attr, backdrop_attr, rng,
                                 render_size=render_size)
            ref = f"images/concept{c:02d}_{i:04d}.png"
            images.append(image)
            refs.append(ref)
            concept_ids.append(c)
            for language in ("synthetic-A", "synthetic-B"):
                records.append(PairRecord(
                    image_ref=ref,
                    caption=_caption(shape_idx, color_idx, size_attr,
                                     backdrop_attr, variant, language),
                    language=language,
                    source="toy",
                ))

    labels_a = [concept_phrase(s, col, "synthetic-A") for s, col in table]
    labels_b = [concept_phrase(s, col, "synthetic-B") for s, col in table]
    dataset = ToyDataset(
        records=records,
        images=np.stack(images),
        image_refs=refs,
        concept_ids=np.asarray(concept_ids),
        labels_a=labels_a,
        labels_b=labels_b,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        for ref, image in zip(refs, dataset.images):
            save_image(image, out_dir / ref)
        write_manifest(records, out_dir / "manifest.tsv")
    return dataset
