"""Synthetic piecewise-planar test scenes and a reference completion baseline.

The generator cuts the image plane with random lines, assigns every cell
a random depth plane, and renders a flat random color per cell as the
guide. Ground truth is dense and analytic, so experiments need no
external datasets.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt

from .io import DepthGrid


def piecewise_planar_scene(
    height: int,
    width: int,
    seed: int,
    n_cuts: int = 4,
    depth_range: tuple[float, float] = (2.0, 8.0),
    max_slope: float = 2.0,
) -> tuple[DepthGrid, DepthGrid]:
    """Generate (ground truth depth, 3-channel guide) for one scene."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    u = (xx + 0.5) / width
    v = (yy + 0.5) / height

    cell = np.zeros((height, width), dtype=np.int64)
    for _ in range(n_cuts):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        px, py = rng.uniform(0.2, 0.8, size=2)
        side = (np.cos(ang) * (u - px) + np.sin(ang) * (v - py)) > 0
        cell = cell * 2 + side
    _, region = np.unique(cell, return_inverse=True)
    region = region.reshape(height, width)
    n_regions = region.max() + 1

    base = rng.uniform(depth_range[0], depth_range[1], size=n_regions)
    gx = rng.uniform(-max_slope, max_slope, size=n_regions)
    gy = rng.uniform(-max_slope, max_slope, size=n_regions)
    depth = base[region] + gx[region] * (u - 0.5) + gy[region] * (v - 0.5)
    depth = np.maximum(depth, 0.5)

    colors = rng.uniform(0.0, 1.0, size=(n_regions, 3))
    guide = colors[region]
    return DepthGrid(depth), DepthGrid(guide)


def nearest_fill(sparse: DepthGrid) -> DepthGrid:
    """Densify by copying each pixel's nearest valid measurement."""
    if not sparse.valid_mask.any():
        raise ValueError("nearest fill needs at least one valid pixel")
    idx = distance_transform_edt(
        ~sparse.valid_mask, return_distances=False, return_indices=True
    )
    return DepthGrid(sparse.data[tuple(idx)])
