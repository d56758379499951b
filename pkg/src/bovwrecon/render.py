"""Additive patch synthesis: place each word's patch and average overlaps."""

import numpy as np

from .errors import InvalidInputError
from .pipeline import Codebook, Layout

UNCOVERED = 0.5


def render_layout(layout: Layout, cb: Codebook) -> np.ndarray:
    spec = layout.sampling
    p, s = spec.patch_size, spec.stride
    if cb.patch_size != p:
        raise InvalidInputError(f"codebook patch size {cb.patch_size} != layout patch size {p}")
    if layout.n_cells and layout.flat.max() >= cb.K:
        raise InvalidInputError(f"layout label {int(layout.flat.max())} >= codebook K={cb.K}")
    width, height = spec.image_dims(layout.grid_w, layout.grid_h)
    accum = np.zeros((height, width))
    weight = np.zeros((height, width))
    for r in range(layout.grid_h):
        for c in range(layout.grid_w):
            y, x = r * s, c * s
            accum[y:y + p, x:x + p] += cb.mean_patches[layout.labels[r, c]]
            weight[y:y + p, x:x + p] += 1.0
    out = np.full((height, width), UNCOVERED)
    hit = weight > 0
    out[hit] = accum[hit] / weight[hit]
    return np.clip(out, 0.0, 1.0)
