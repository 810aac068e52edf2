"""Image-caption corpus handling: pair records, filtering rules, manifests.

Manifests are UTF-8 TSV files with LF line endings and four columns:
``image_ref``, ``caption``, ``language``, ``source``. Filter reports are
JSON-lines files with one ``{"image_ref": ..., "reason": ...}`` object per
input record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .imaging import bilinear_resize, center_crop

LANGUAGES = ("en", "ko", "synthetic-A", "synthetic-B")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class PairRecord:
    """One image-caption training pair."""

    image_ref: str
    caption: str
    language: str
    source: str = ""

    def __post_init__(self):
        if not self.caption.strip():
            raise CorpusError("caption is empty after whitespace trim")
        if self.language not in LANGUAGES:
            raise CorpusError(
                f"language {self.language!r} not in {LANGUAGES}"
            )


class FilterReason(str, Enum):
    KEPT = "kept"
    TOO_SMALL = "too_small"
    LOW_SIMILARITY = "low_similarity"
    NSFW = "nsfw"


@dataclass(frozen=True)
class FilterVerdict:
    keep: bool
    reason: FilterReason

    def __post_init__(self):
        if self.keep != (self.reason is FilterReason.KEPT):
            raise CorpusError("keep flag inconsistent with reason")


def default_nsfw_prompts() -> list[str]:
    """The prompt list shipped with the package; one phrase per line."""
    text = resources.files("bilip").joinpath("data/nsfw_prompts_default.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")]


@dataclass
class FilterConfig:
    """Thresholds for the size / caption-similarity / NSFW filter chain.

    ``sim_threshold`` drops strictly below it (a pair at exactly the
    threshold is kept); ``nsfw_threshold`` drops strictly above it.
    """

    min_side: int = 32
    store_size: int = 256
    sim_threshold: float = 0.28
    nsfw_threshold: float = 0.22
    nsfw_prompts: list[str] = field(default_factory=default_nsfw_prompts)

    def __post_init__(self):
        if self.min_side < 1:
            raise CorpusError("min_side must be at least one pixel")
        for name in ("sim_threshold", "nsfw_threshold"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise CorpusError(f"{name} must be a cosine in [-1, 1]")


def filter_pair(record: PairRecord, image_dims: tuple[int, int], sim_score: float,
                nsfw_score: float, cfg: FilterConfig) -> FilterVerdict:
    """Apply the drop rules in order size -> similarity -> NSFW; the first
    failing rule names the reason."""
    w, h = image_dims
    if min(w, h) < cfg.min_side:
        return FilterVerdict(False, FilterReason.TOO_SMALL)
    if sim_score < cfg.sim_threshold:
        return FilterVerdict(False, FilterReason.LOW_SIMILARITY)
    if nsfw_score > cfg.nsfw_threshold:
        return FilterVerdict(False, FilterReason.NSFW)
    return FilterVerdict(True, FilterReason.KEPT)


def resize_for_store(image: np.ndarray, cfg: FilterConfig | None = None) -> np.ndarray:
    """Shorter-side resize to ``store_size`` then center crop to a square."""
    cfg = cfg or FilterConfig()
    h, w = image.shape[:2]
    if min(h, w) < cfg.min_side:
        raise CorpusError(
            f"image {w}x{h} below minimum side {cfg.min_side}"
        )
    size = cfg.store_size
    if h <= w:
        new_h = size
        new_w = max(size, int(round(w * size / h)))
    else:
        new_w = size
        new_h = max(size, int(round(h * size / w)))
    resized = bilinear_resize(image, new_h, new_w)
    return center_crop(resized, size)


# -- manifest and report I/O ----------------------------------------------------


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fields = (rec.image_ref, rec.caption, rec.language, rec.source)
            for value in fields:
                if "\t" in value or "\n" in value:
                    raise CorpusError(
                        f"manifest field contains a tab or newline: {value!r}"
                    )
            fh.write("\t".join(fields) + "\n")


def read_manifest(path) -> list[PairRecord]:
    records = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            records.append(PairRecord(*parts))
    return records


def write_filter_report(entries, path) -> None:
    """``entries`` yields (image_ref, FilterReason) pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for image_ref, reason in entries:
            fh.write(json.dumps({"image_ref": image_ref, "reason": str(reason.value)}))
            fh.write("\n")


def filter_records(records, scorer, cfg: FilterConfig):
    """Run the filter chain over records with an injected scoring function.

    ``scorer(record)`` must return ``((width, height), sim_score, nsfw_score)``.
    Returns ``(kept_records, report_entries)``; report entries cover every
    input record in order.
    """
    kept = []
    report = []
    for rec in records:
        dims, sim, nsfw = scorer(rec)
        verdict = filter_pair(rec, dims, sim, nsfw, cfg)
        report.append((rec.image_ref, verdict.reason))
        if verdict.keep:
            kept.append(rec)
    return kept, report
