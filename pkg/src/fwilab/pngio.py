"""Deterministic PNG heatmap export (fixed colormap, Pillow encoder).

Filenames carry the value range so figures are self-describing, e.g.
``recon_min1420.0_max2981.3.png``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

__all__ = ["save_heatmap"]

DEFAULT_CMAP = "viridis"


def save_heatmap(
    directory: str | os.PathLike,
    stem: str,
    values: np.ndarray,
    cmap: str = DEFAULT_CMAP,
    contours: list[np.ndarray] | None = None,
) -> Path:
    """Render a 2-D array to ``<dir>/<stem>_min<lo>_max<hi>.png``.

    Optional contour polylines ((row, col) float arrays, same convention as
    the map) are burned in as white pixels.
    """
    from matplotlib import colormaps
    from PIL import Image

    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("heatmap input must be 2-D")
    lo = float(v.min())
    hi = float(v.max())
    span = hi - lo if hi > lo else 1.0
    norm = (v - lo) / span
    rgba = (colormaps[cmap](norm) * 255.0).astype(np.uint8)
    if contours:
        for curve in contours:
            rows = np.clip(np.round(curve[:, 0]).astype(int), 0, v.shape[0] - 1)
            cols = np.clip(np.round(curve[:, 1]).astype(int), 0, v.shape[1] - 1)
            rgba[rows, cols, :3] = 255
    path = Path(directory) / f"{stem}_min{lo:.1f}_max{hi:.1f}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    # transpose so the first array axis runs horizontally
    Image.fromarray(np.swapaxes(rgba, 0, 1)).save(path)
    return path
