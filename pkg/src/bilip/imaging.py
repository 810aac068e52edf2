"""Raster utilities: resizing, cropping, patch extraction, PNG I/O.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1] everywhere
inside the library; conversion to uint8 happens only at file boundaries.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(image: np.ndarray, path) -> None:
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int,
                    align_corners: bool = False) -> np.ndarray:
    """Separable bilinear resampling.

    ``align_corners=False`` (half-pixel centers) is used for image content;
    ``align_corners=True`` maps grid corners to grid corners exactly and is
    used for positional-embedding grids.
    """
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    def src_coords(n_out, n_in):
        if align_corners:
            if n_out == 1:
                return np.zeros(1)
            return np.arange(n_out) * (n_in - 1) / (n_out - 1)
        coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        return np.clip(coords, 0.0, n_in - 1)

    ys = src_coords(out_h, in_h)
    xs = src_coords(out_w, in_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).reshape(-1, 1, *([1] * (image.ndim - 2)))
    wx = (xs - x0).reshape(1, -1, *([1] * (image.ndim - 2)))

    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValueError(f"cannot center-crop {h}x{w} image to {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return image[top:top + size, left:left + size]


def random_resized_crop(image: np.ndarray, size: int, scale: tuple[float, float],
                        rng: np.random.Generator,
                        ratio: tuple[float, float] = (3 / 4, 4 / 3)) -> np.ndarray:
    """Sample a crop with area in ``scale`` (fraction of source) and aspect in
    ``ratio``, then resize to ``size`` square. Falls back to a center crop when
    ten samples in a row do not fit."""
    h, w = image.shape[:2]
    area = h * w
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        log_ratio = rng.uniform(np.log(ratio[0]), np.log(ratio[1]))
        aspect = np.exp(log_ratio)
        cw = int(round(np.sqrt(target_area * aspect)))
        ch = int(round(np.sqrt(target_area / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = image[top:top + ch, left:left + cw]
            return bilinear_resize(crop, size, size)
    side = min(h, w)
    return bilinear_resize(center_crop(image, side), size, size)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, S, S, 3) -> (B, L, patch*patch*3) with row-major patch order."""
    b, h, w, c = images.shape
    if h % patch or w % patch:
        raise ValueError(f"image size {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch * patch * c)


def unpatchify(patches: np.ndarray, patch: int, size: int) -> np.ndarray:
    """Inverse of :func:`patchify` for square images."""
    b, n, d = patches.shape
    g = size // patch
    if n != g * g or d != patch * patch * 3:
        raise ValueError("patch array inconsistent with target size")
    x = patches.reshape(b, g, g, patch, patch, 3)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, size, size, 3)
