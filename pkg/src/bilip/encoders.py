"""Dual-encoder backbone: a causal transformer over token ids read at the
[EOS] slot, and a vision transformer read at the classification token, each
followed by layer normalization and a linear projection into the shared
embedding space. Outputs are pre-normalization; unit-normalization happens
inside similarity computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bpe
from .autodiff import Tensor, concat, embedding, take_token
from .imaging import patchify
from .nn import (LayerNorm, Linear, Module, Parameter, TransformerBlock,
                 causal_mask, transformer_stack, trunc_normal)

INIT_STD = 0.02


class EncoderError(ValueError):
    pass


@dataclass
class TextEncoderConfig:
    vocab_size: int
    layers: int = 12
    width: int = 512
    heads: int = 8
    max_len: int = bpe.DEFAULT_MAX_LEN
    embed_dim: int = 512

    def __post_init__(self):
        if min(self.layers, self.width, self.heads, self.max_len,
               self.vocab_size, self.embed_dim) < 1:
            raise EncoderError("all text encoder dimensions must be >= 1")
        if self.width % self.heads:
            raise EncoderError("width must be divisible by heads")

    def param_count(self) -> int:
        """Closed-form parameter count (kept in sync with the module tree;
        verified against a built model in the test suite)."""
        w, e = self.width, self.embed_dim
        per_block = 12 * w * w + 13 * w
        return (self.vocab_size * w + self.max_len * w
                + self.layers * per_block + 2 * w + w * e)


@dataclass
class VisionEncoderConfig:
    patch_size: int = 32
    image_size: int = 224
    width: int = 768
    layers: int = 12
    heads: int = 12
    embed_dim: int = 512

    def __post_init__(self):
        if min(self.patch_size, self.image_size, self.width, self.layers,
               self.heads, self.embed_dim) < 1:
            raise EncoderError("all vision encoder dimensions must be >= 1")
        if self.image_size % self.patch_size:
            raise EncoderError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise EncoderError("width must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size ** 2


def pos_interp_matrix(from_grid: int, to_grid: int) -> np.ndarray:
    """Sparse-in-spirit (g'^2, g^2) matrix applying bilinear interpolation with
    grid corners mapped to grid corners; identity when the grids match."""
    if from_grid == to_grid:
        return np.eye(from_grid * from_grid)
    if from_grid == 1:
        return np.ones((to_grid * to_grid, 1))
    if to_grid == 1:
        coords = np.array([(from_grid - 1) / 2.0])
    else:
        coords = np.arange(to_grid) * (from_grid - 1) / (to_grid - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, from_grid - 1)
    frac = coords - lo
    mat = np.zeros((to_grid * to_grid, from_grid * from_grid))
    for iy in range(to_grid):
        for ix in range(to_grid):
            out = iy * to_grid + ix
            for sy, wy in ((lo[iy], 1 - frac[iy]), (hi[iy], frac[iy])):
                for sx, wx in ((lo[ix], 1 - frac[ix]), (hi[ix], frac[ix])):
                    mat[out, sy * from_grid + sx] += wy * wx
    return mat


def interpolate_pos_embed(pos: np.ndarray, to_grid: int) -> np.ndarray:
    """Resample a (g, g, D) positional grid to (g', g', D). The caller keeps
    any classification-token entry out of the grid."""
    g = pos.shape[0]
    if pos.ndim != 3 or pos.shape[1] != g:
        raise EncoderError("positional grid must be square with shape (g, g, D)")
    mat = pos_interp_matrix(g, to_grid)
    flat = mat @ pos.reshape(g * g, -1)
    return flat.reshape(to_grid, to_grid, -1)


class TextEncoder(Module):
    """Causal transformer; the feature is read at [EOS], so [PAD] slots can
    never influence the output."""

    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.tok_embed = Parameter(trunc_normal((cfg.vocab_size, cfg.width), INIT_STD, rng))
        self.pos_embed = Parameter(trunc_normal((cfg.max_len, cfg.width), INIT_STD, rng))
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, rng)
                       for _ in range(cfg.layers)]
        self.ln_final = LayerNorm(cfg.width)
        self.proj = Parameter(trunc_normal((cfg.width, cfg.embed_dim), INIT_STD, rng))
        self._mask = causal_mask(cfg.max_len)

    def __call__(self, ids: np.ndarray, eos_positions: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != self.cfg.max_len:
            raise EncoderError(
                f"token batch must be (N, {self.cfg.max_len}), got {ids.shape}"
            )
        x = embedding(self.tok_embed, ids) + self.pos_embed
        x = transformer_stack(x, self.blocks, mask=self._mask)
        x = self.ln_final(x)
        x = take_token(x, np.asarray(eos_positions))
        return x @ self.proj

    def encode_sequences(self, seqs) -> Tensor:
        """Encode a list of :class:`bilip.bpe.TokenSequence`."""
        ids = np.stack([s.ids for s in seqs])
        eos = np.array([s.eos_position for s in seqs])
        return self(ids, eos)


class VisionEncoder(Module):
    """ViT over square patches; positional embeddings are bilinearly resampled
    when the input resolution differs from the configured global size."""

    def __init__(self, cfg: VisionEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_dim, cfg.width, rng)
        self.cls_token = Parameter(trunc_normal((1, 1, cfg.width), INIT_STD, rng))
        self.pos_embed = Parameter(trunc_normal((1 + cfg.num_patches, cfg.width), INIT_STD, rng))
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, rng)
                       for _ in range(cfg.layers)]
        self.ln_post = LayerNorm(cfg.width)
        self.proj = Parameter(trunc_normal((cfg.width, cfg.embed_dim), INIT_STD, rng))

    def _patch_pos(self, grid: int) -> Tensor:
        """Patch-position rows resampled to ``grid`` x ``grid`` (cls row excluded)."""
        patch_pos = self.pos_embed[1:]
        if grid == self.cfg.grid:
            return patch_pos
        mat = pos_interp_matrix(self.cfg.grid, grid)
        return Tensor(mat) @ patch_pos

    def tokens(self, images: np.ndarray) -> Tensor:
        """Embedded [cls] + patch tokens with positions, pre-transformer."""
        b, s = images.shape[0], images.shape[1]
        if images.ndim != 4 or images.shape[2] != s or images.shape[3] != 3:
            raise EncoderError(f"expected (B, S, S, 3) images, got {images.shape}")
        if s % self.cfg.patch_size:
            raise EncoderError(
                f"image size {s} not divisible by patch size {self.cfg.patch_size}"
            )
        grid = s // self.cfg.patch_size
        patches = patchify(images, self.cfg.patch_size)
        x = self.patch_embed(Tensor(patches)) + self._patch_pos(grid)
        cls = self.cls_token + self.pos_embed[0:1]
        cls = cls + Tensor(np.zeros((b, 1, 1)))  # broadcast to (b, 1, w)
        return concat([cls, x], axis=1)

    def __call__(self, images: np.ndarray) -> Tensor:
        x = transformer_stack(self.tokens(images), self.blocks)
        cls_out = x[:, 0, :]
        return self.ln_post(cls_out) @ self.proj


def build_text_encoder(cfg: TextEncoderConfig, seed: int) -> TextEncoder:
    return TextEncoder(cfg, np.random.default_rng(seed))


def build_vision_encoder(cfg: VisionEncoderConfig, seed: int) -> VisionEncoder:
    return VisionEncoder(cfg, np.random.default_rng(seed))
