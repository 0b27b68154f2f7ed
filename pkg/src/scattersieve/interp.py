"""Bilinear image sampling shared by the generator and the polar warp."""

from __future__ import annotations

import numpy as np


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Sample img at float pixel coordinates (x, y) with bilinear weights.

    Points outside [0, w-1] x [0, h-1] get `fill`. Exact on constant images
    and at integer coordinates.
    """
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    out = (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
           + v10 * (1 - fx) * fy + v11 * fx * fy)
    return np.where(inside, out, fill)


def nearest_lookup(mask: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Nearest-pixel lookup into a boolean mask; False outside the frame."""
    h, w = mask.shape
    xi = np.clip(np.rint(x).astype(np.int64), 0, w - 1)
    yi = np.clip(np.rint(y).astype(np.int64), 0, h - 1)
    inside = (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
    return mask[yi, xi] & inside
