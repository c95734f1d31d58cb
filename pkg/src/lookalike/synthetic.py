"""Synthetic digit-image corpus for desk-scale runs and tests.

Renders the ten digits as anti-aliased seven-segment glyphs on a 28x28
canvas with per-sample rotation, shift, blur, intensity and pixel noise,
then quantizes to bytes. The classes share segments (8 vs 0 vs 9 differ by
one or two), which gives the embedding step honest work to do. Everything
is deterministic for a given seed.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy import ndimage

from .data import child_seed

CANVAS = 28

# (row_lo, row_hi, col_lo, col_hi) per segment on the 28x28 canvas.
_SEGMENTS = {
    "A": (4, 7, 9, 20),
    "B": (4, 15, 17, 20),
    "C": (13, 24, 17, 20),
    "D": (21, 24, 9, 20),
    "E": (13, 24, 8, 11),
    "F": (4, 15, 8, 11),
    "G": (13, 16, 9, 20),
}

_DIGITS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def _glyph(digit: int) -> np.ndarray:
    img = np.zeros((CANVAS, CANVAS))
    for name in _DIGITS[digit]:
        r0, r1, c0, c1 = _SEGMENTS[name]
        img[r0:r1, c0:c1] = 1.0
    return img


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered glyph as a uint8 image."""
    img = _glyph(digit)
    angle = rng.uniform(-10.0, 10.0)
    img = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
    shift = rng.uniform(-2.5, 2.5, size=2)
    img = ndimage.shift(img, shift, order=1, mode="constant")
    img = ndimage.gaussian_filter(img, sigma=rng.uniform(0.4, 0.8))
    img *= rng.uniform(0.8, 1.0)
    img += rng.normal(0.0, 0.05, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return np.round(img * 255.0).astype(np.uint8)


def make_corpus(per_class: int, rng_seed: int = 0):
    """(images uint8 [N,28,28], labels int64 [N]) with N = 10 * per_class."""
    rng = np.random.default_rng(child_seed(rng_seed, "synthetic_corpus"))
    images = np.empty((10 * per_class, CANVAS, CANVAS), dtype=np.uint8)
    labels = np.empty(10 * per_class, dtype=np.int64)
    i = 0
    for digit in range(10):
        for _ in range(per_class):
            images[i] = render_digit(digit, rng)
            labels[i] = digit
            i += 1
    return images, labels


def gaussian_cluster(n: int, center, sigma: float, rng_seed: int) -> np.ndarray:
    """n points from an isotropic Gaussian; the standard 2-D seed fixture."""
    rng = np.random.default_rng(child_seed(rng_seed, "gaussian_cluster"))
    center = np.asarray(center, dtype=np.float64)
    return rng.normal(0.0, sigma, size=(n, center.size)) + center


def idx_images_bytes(images: np.ndarray) -> bytes:
    """Serialize a uint8 image stack in the big-endian IDX image layout."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", 0x00000803, n, rows, cols) + images.tobytes()


def idx_labels_bytes(labels) -> bytes:
    labels = np.asarray(labels)
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(
        int(v) & 0xFF for v in labels
    )


def write_corpus_idx(images_path, labels_path, per_class: int, rng_seed: int = 0):
    """Render a corpus and write it as an IDX image/label file pair."""
    images, labels = make_corpus(per_class, rng_seed)
    with open(images_path, "wb") as fh:
        fh.write(idx_images_bytes(images))
    with open(labels_path, "wb") as fh:
        fh.write(idx_labels_bytes(labels))
    return images, labels
