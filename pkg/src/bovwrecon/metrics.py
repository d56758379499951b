"""Reconstruction quality: pixel correlation (XCORR family) and layout correctness (DC, NC)."""

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .pipeline import Layout, WordGrid

# 4-neighbor directions as (drow, dcol)
_DIRS = ((0, 1), (0, -1), (1, 0), (-1, 0))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    # flat windows: mean rounding would leave correlated residue
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    va = float(np.dot(a.ravel(), a.ravel()))
    vb = float(np.dot(b.ravel(), b.ravel()))
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    r = float(np.dot(a.ravel(), b.ravel())) / np.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def xcorr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of pixel values; 0 when either image is constant."""
    a, b = _same_shape(a, b)
    return _pearson(a, b)


def _shifted_pair(a, b, dx, dy):
    # compare a[y, x] with b[y + dy, x + dx] where both exist
    h, w = a.shape
    ya, yb = max(0, -dy), max(0, dy)
    xa, xb = max(0, -dx), max(0, dx)
    hh, ww = h - abs(dy), w - abs(dx)
    return a[ya:ya + hh, xa:xa + ww], b[yb:yb + hh, xb:xb + ww]


def xcorr_shift(a: np.ndarray, b: np.ndarray, max_shift: int) -> float:
    """Maximum correlation over integer translations within +-max_shift pixels."""
    a, b = _same_shape(a, b)
    if max_shift < 0:
        raise InvalidInputError("max_shift must be >= 0")
    h, w = a.shape
    best = -np.inf
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            if abs(dy) >= h or abs(dx) >= w:
                continue
            sa, sb = _shifted_pair(a, b, dx, dy)
            best = max(best, _pearson(sa, sb))
    return float(best)


def direct_comparison(layout: Layout, truth: WordGrid) -> float:
    """Fraction of cells holding their ground-truth label."""
    if layout.shape != truth.shape:
        raise InvalidInputError(f"layout shape {layout.shape} != truth shape {truth.shape}")
    if truth.n_cells == 0:
        raise InvalidInputError("empty grid")
    return float(np.mean(layout.labels == truth.labels))


def _ordered_pairs(labels: np.ndarray):
    h, w = labels.shape
    for dr, dc in _DIRS:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        src = labels[r0:r1, c0:c1]
        dst = labels[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        yield (dr, dc), src.ravel(), dst.ravel()


def neighbor_comparison(layout: Layout, truth: WordGrid) -> float:
    """Fraction of ordered 4-neighbor pairs whose (label, label, direction) occurs in the truth."""
    if layout.shape != truth.shape:
        raise InvalidInputError(f"layout shape {layout.shape} != truth shape {truth.shape}")
    if truth.grid_h * (truth.grid_w - 1) + truth.grid_w * (truth.grid_h - 1) <= 0:
        raise InvalidInputError("grid has no 4-neighbor pairs; NC is undefined")
    k = int(max(layout.labels.max(), truth.labels.max())) + 1
    hits = total = 0
    for (direction, t_src, t_dst), (_, l_src, l_dst) in zip(_ordered_pairs(truth.labels), _ordered_pairs(layout.labels)):
        seen = np.unique(t_src * k + t_dst)
        hits += int(np.isin(l_src * k + l_dst, seen).sum())
        total += l_src.size
    return hits / total


@dataclass
class MetricReport:
    image_id: str
    xcorr: float
    xcorr4: float
    xcorr8: float
    dc: Optional[float]
    nc: Optional[float]
    objective: float
    wall_time_s: float

    CSV_FIELDS = ("image_id", "xcorr", "xcorr4", "xcorr8", "dc", "nc", "objective", "wall_time_s")

    def row(self):
        fmt = lambda v: "" if v is None else (v if isinstance(v, str) else repr(float(v)))
        return [fmt(getattr(self, f)) for f in self.CSV_FIELDS]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(self.CSV_FIELDS)
        writer.writerow(self.row())
        return buf.getvalue()


def image_metrics(recon: np.ndarray, original: np.ndarray):
    """(xcorr, xcorr4, xcorr8) of a reconstruction against its original."""
    return xcorr(recon, original), xcorr_shift(recon, original, 4), xcorr_shift(recon, original, 8)
