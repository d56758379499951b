"""Seeded procedural grayscale scenes for demos, tests and the acceptance suite.

Scenes have a vertical illumination gradient (position statistics) and a few
hard-edged shapes and stripe patches (adjacency statistics).
"""

from typing import List

import numpy as np


def synthetic_image(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    top, bottom = rng.uniform(0.55, 0.95), rng.uniform(0.05, 0.45)
    img = top + (bottom - top) * yy
    horizon = rng.uniform(0.45, 0.75)
    img = np.where(yy > horizon, img * rng.uniform(0.5, 0.9), img)

    for _ in range(rng.integers(2, 5)):
        kind = rng.integers(3)
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.08, 0.25)
        val = rng.uniform(0.0, 1.0)
        if kind == 0:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        elif kind == 1:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.4, 1.2))
        else:
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(0.04, 0.1)
            phase = (np.cos(theta) * xx + np.sin(theta) * yy) / period
            mask = ((xx - cx) ** 2 + (yy - cy) ** 2 < r * r) & (np.mod(phase, 1.0) < 0.5)
        img = np.where(mask, val, img)
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synthetic_corpus(n: int, seed: int = 0, size: int = 128) -> List[np.ndarray]:
    return [synthetic_image(np.random.default_rng([seed, i]), size) for i in range(n)]
