"""PNG image I/O and procedurally generated reference textures.

Images are (3, H, W) float64 arrays in [0, 1] internally; files are 8-bit
RGB PNG.  Values are clamped to [0, 1] only when writing.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(ValueError):
    """An image file could not be read or has the wrong format."""


def load_image(path) -> np.ndarray:
    """Read an RGB PNG into a (3, H, W) float64 array scaled to [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: cannot read image ({exc})") from exc
    return arr.transpose(2, 0, 1)


def save_image(path, image: np.ndarray) -> None:
    """Write a (3, H, W) array as 8-bit RGB PNG, clamping to [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageError(f"save_image: expected (3, H, W), got {arr.shape}")
    clamped = np.clip(arr, 0.0, 1.0)
    as_bytes = np.rint(clamped * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(as_bytes, mode="RGB").save(path, format="PNG")


def save_grid(path, samples: np.ndarray, cols: int | None = None, pad: int = 2) -> None:
    """Tile a batch of (N, 3, H, W) samples into one PNG, row-major."""
    batch = np.asarray(samples, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ImageError(f"save_grid: expected (N, 3, H, W), got {batch.shape}")
    n, _, h, w = batch.shape
    if cols is None:
        cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.ones((3, rows * (h + pad) - pad, cols * (w + pad) - pad))
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[:, r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = batch[i]
    save_image(path, canvas)


# -- bundled procedural textures ------------------------------------------------
#
# Two 32x32 reference textures generated deterministically so nothing needs
# downloading: a two-tone checker with per-cell color jitter, and diagonal
# stripes with flat lighting plus mild speckle.


def checker_noise(size: int = 32, seed: int = 7, cell: int = 4) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    parity = ((yy // cell) + (xx // cell)) % 2
    dark = np.array([0.20, 0.25, 0.35])[:, None, None]
    light = np.array([0.75, 0.70, 0.55])[:, None, None]
    img = np.where(parity[None] == 0, dark, light)
    cells = size // cell
    jitter = rng.normal(0.0, 0.06, size=(3, cells, cells))
    img = img + np.repeat(np.repeat(jitter, cell, axis=1), cell, axis=2)
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def stripe_noise(size: int = 32, seed: int = 11, period: int = 8) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    phase = 2.0 * np.pi * (yy + xx) / period
    wave = 0.5 + 0.3 * np.sin(phase)
    img = np.stack([wave * 0.9, wave * 0.75, wave * 0.6])
    img += rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def content_images(n: int = 4, size: int = 32, seed: int = 3) -> list[np.ndarray]:
    """Small smooth synthetic content images: a color gradient plus a few
    soft blobs, different per image.  Contrast varies strongly across the
    set, which is what per-instance normalization is meant to absorb."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    out = []
    for i in range(n):
        base = np.empty((3, size, size))
        for c in range(3):
            a, b, bias = rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.3, 0.7)
            base[c] = bias + a * yy + b * xx
        for _ in range(rng.integers(2, 5)):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.08, 0.25)
            blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2)))
            color = rng.uniform(-0.35, 0.35, size=3)
            base += color[:, None, None] * blob[None]
        contrast = 0.4 + 1.2 * ((i * 0.61) % 1.0)
        shift = rng.uniform(-0.1, 0.3)
        out.append(np.clip((base - 0.5) * contrast + 0.5 + shift, 0.0, 1.0))
    return out


FIXTURES = {
    "checker": checker_noise,
    "stripes": stripe_noise,
}


def write_fixture(name: str, path) -> np.ndarray:
    """Write one of the bundled textures as a PNG and return the array that
    round-trips through it (quantized to 8 bits)."""
    if name not in FIXTURES:
        raise ImageError(f"unknown fixture {name!r}; have {sorted(FIXTURES)}")
    img = FIXTURES[name]()
    save_image(path, img)
    return load_image(path)
