"""Forward BoVW pipeline: dense descriptors, k-means codebook, hard assignment, sum pooling."""

import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .imageio import check_image

PathLike = Union[str, os.PathLike]

N_SPATIAL = 4
N_ORIENT = 8
DESCRIPTOR_DIM = N_SPATIAL * N_SPATIAL * N_ORIENT
CLIP_VALUE = 0.2

CODEBOOK_MAGIC = b"BVWC"

# elements per chunk of the (points, centroids, dim) difference tensor
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class SamplingSpec:
    """Dense sampling geometry: square patches on a regular grid."""

    patch_size: int = 32
    stride: int = 8

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1:
            raise InvalidInputError("patch_size and stride must be >= 1")

    def grid_dims(self, width: int, height: int) -> Tuple[int, int]:
        """Return (grid_w, grid_h) for an image of the given size."""
        dims = []
        for name, size in (("width", width), ("height", height)):
            span = size - self.patch_size
            if span < 0 or span % self.stride:
                raise InvalidInputError(
                    f"image {name} {size} incompatible with patch {self.patch_size} / stride {self.stride}"
                )
            dims.append(span // self.stride + 1)
        return dims[0], dims[1]

    def image_dims(self, grid_w: int, grid_h: int) -> Tuple[int, int]:
        """Inverse of grid_dims: (width, height) covered by a grid."""
        return ((grid_w - 1) * self.stride + self.patch_size,
                (grid_h - 1) * self.stride + self.patch_size)


@dataclass
class WordGrid:
    """Visual-word labels on the sampling grid, shape (grid_h, grid_w).

    The same type serves as the solver's decision variable (a layout): cell
    ``k = row * grid_w + col`` holds the label placed there.
    """

    labels: np.ndarray
    sampling: SamplingSpec = SamplingSpec()

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise InvalidInputError(f"labels must be 2-D, got shape {labels.shape}")
        if labels.size:
            if not np.issubdtype(labels.dtype, np.integer) and np.any(np.mod(labels, 1) != 0):
                raise InvalidInputError("labels must be integers")
            if labels.min() < 0:
                raise InvalidInputError("labels must be non-negative")
        self.labels = labels.astype(np.int64)

    @property
    def grid_h(self) -> int:
        return self.labels.shape[0]

    @property
    def grid_w(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @property
    def n_cells(self) -> int:
        return self.labels.size

    @property
    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def with_labels(self, flat_labels: np.ndarray) -> "WordGrid":
        return WordGrid(np.asarray(flat_labels).reshape(self.shape).copy(), self.sampling)

    def __eq__(self, other):
        if not isinstance(other, WordGrid):
            return NotImplemented
        return self.sampling == other.sampling and np.array_equal(self.labels, other.labels)


Layout = WordGrid


@dataclass
class Codebook:
    """K visual words: descriptor centroids plus a representative patch each."""

    centroids: np.ndarray
    mean_patches: np.ndarray
    train_counts: np.ndarray

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.mean_patches = np.asarray(self.mean_patches, dtype=np.float64)
        self.train_counts = np.asarray(self.train_counts, dtype=np.int64)
        k = self.centroids.shape[0]
        if self.centroids.ndim != 2 or k < 1:
            raise InvalidInputError("codebook needs at least one 2-D centroid row")
        if self.mean_patches.ndim != 3 or self.mean_patches.shape[0] != k \
                or self.mean_patches.shape[1] != self.mean_patches.shape[2]:
            raise InvalidInputError("mean_patches must have shape (K, P, P)")
        if self.train_counts.shape != (k,):
            raise InvalidInputError("train_counts must have shape (K,)")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def patch_size(self) -> int:
        return self.mean_patches.shape[1]


def extract_patches(image: np.ndarray, spec: SamplingSpec) -> np.ndarray:
    """Return the dense patch stack, shape (grid_h, grid_w, P, P)."""
    image = check_image(image)
    h, w = image.shape
    spec.grid_dims(w, h)
    p, s = spec.patch_size, spec.stride
    return sliding_window_view(image, (p, p))[::s, ::s].copy()


def describe_patches(patches: np.ndarray) -> np.ndarray:
    """Gradient-orientation histogram descriptors for a stack of square patches.

    ``patches`` has shape (..., P, P) with P divisible by 4; the result has
    shape (..., 128).
    """
    patches = np.asarray(patches, dtype=np.float64)
    lead = patches.shape[:-2]
    p = patches.shape[-1]
    if patches.shape[-2] != p or p % N_SPATIAL:
        raise InvalidInputError(f"patch size {p} must be square and divisible by {N_SPATIAL}")
    flat = patches.reshape(-1, p, p)
    n = flat.shape[0]
    if n == 0:
        return np.zeros(lead + (DESCRIPTOR_DIM,))
    if p > 1:
        gy, gx = np.gradient(flat, axis=(1, 2))
    else:
        gy = gx = np.zeros_like(flat)
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    obin = np.minimum((angle * (N_ORIENT / (2.0 * np.pi))).astype(np.int64), N_ORIENT - 1)

    cell = p // N_SPATIAL
    sub = np.arange(p) // cell
    spatial = (sub[:, None] * N_SPATIAL + sub[None, :]) * N_ORIENT
    index = spatial[None] + obin + (np.arange(n) * DESCRIPTOR_DIM)[:, None, None]
    hist = np.bincount(index.ravel(), weights=mag.ravel(), minlength=n * DESCRIPTOR_DIM)
    hist = hist.reshape(n, DESCRIPTOR_DIM)

    hist = _l2_normalize(hist)
    np.minimum(hist, CLIP_VALUE, out=hist)
    hist = _l2_normalize(hist)
    return hist.reshape(lead + (DESCRIPTOR_DIM,))


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(v * v, axis=1, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, v / safe, 0.0)


def extract_dense_descriptors(image: np.ndarray, spec: SamplingSpec = SamplingSpec()) -> np.ndarray:
    """Dense descriptor grid of shape (grid_h, grid_w, 128)."""
    return describe_patches(extract_patches(image, spec))


def image_features(image: np.ndarray, spec: SamplingSpec = SamplingSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """Descriptors and source patches for one image, both flattened over cells."""
    patches = extract_patches(image, spec)
    descs = describe_patches(patches)
    p = spec.patch_size
    return descs.reshape(-1, DESCRIPTOR_DIM), patches.reshape(-1, p, p)


# -- k-means -----------------------------------------------------------------

def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances via explicit differences (chunked)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    centroids = np.asarray(centroids, dtype=np.float64)
    n, k = points.shape[0], centroids.shape[0]
    out = np.empty((n, k))
    step = max(1, _CHUNK_ELEMS // max(1, k * centroids.shape[1]))
    for start in range(0, n, step):
        diff = points[start:start + step, None, :] - centroids[None, :, :]
        out[start:start + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def quantize_many(descriptors: np.ndarray, cb: Codebook) -> np.ndarray:
    """Nearest-centroid labels; ties go to the lowest index."""
    descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if descriptors.shape[1] != cb.dim:
        raise InvalidInputError(f"descriptor dimension {descriptors.shape[1]} != codebook {cb.dim}")
    return np.argmin(squared_distances(descriptors, cb.centroids), axis=1).astype(np.int64)


def quantize(d: np.ndarray, cb: Codebook) -> int:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise InvalidInputError("quantize expects a single descriptor vector")
    return int(quantize_many(d[None, :], cb)[0])


def _fast_sq_dist(points, sq_points, centroids):
    sq_c = np.einsum("kd,kd->k", centroids, centroids)
    d = sq_points[:, None] - 2.0 * points @ centroids.T + sq_c[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.einsum("nd,nd->n", points - centers[0], points - centers[0])
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen center
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = points[idx]
        diff = points - centers[c]
        closest = np.minimum(closest, np.einsum("nd,nd->n", diff, diff))
    return centers


def kmeans(points: np.ndarray, k: int, iters: int, seed: int) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns the (k, D) centroids."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k > n:
        raise InvalidInputError(f"K={k} must be between 1 and the descriptor count {n}")
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)
    sq_points = np.einsum("nd,nd->n", points, points)
    labels = None
    for _ in range(iters):
        dist = _fast_sq_dist(points, sq_points, centers)
        new_labels = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            own = dist[np.arange(n), labels].copy()
            for c in empty:
                far = int(np.argmax(own))
                centers[c] = points[far]
                own[far] = -1.0
            # reseeded centers need a fresh assignment round
            labels = None
    return centers


def train_codebook(
    descriptors: np.ndarray,
    patches: np.ndarray,
    K: int,
    iters: int = 50,
    seed: int = 0,
) -> Codebook:
    """Cluster descriptors into K words and attach the mean source patch of each word.

    ``descriptors`` is (n, D); ``patches`` is (n, P, P), row-aligned with the
    descriptors. Words that end up with no training member get a mid-gray patch.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    if descriptors.ndim != 2 or patches.ndim != 3 or patches.shape[0] != descriptors.shape[0]:
        raise InvalidInputError("descriptors (n, D) and patches (n, P, P) must be row-aligned")
    centers = kmeans(descriptors, K, iters, seed)
    cb = Codebook(centers, np.full((K,) + patches.shape[1:], 0.5), np.zeros(K, dtype=np.int64))
    labels = quantize_many(descriptors, cb)
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros((K, patches.shape[1] * patches.shape[2]))
    np.add.at(sums, labels, patches.reshape(patches.shape[0], -1))
    means = np.full_like(sums, 0.5)
    has = counts > 0
    means[has] = sums[has] / counts[has, None]
    return Codebook(centers, means.reshape((K,) + patches.shape[1:]), counts)


def corpus_features(
    images: Iterable[np.ndarray], spec: SamplingSpec = SamplingSpec()
) -> Tuple[np.ndarray, np.ndarray]:
    descs, patches = [], []
    for img in images:
        d, p = image_features(img, spec)
        descs.append(d)
        patches.append(p)
    if not descs:
        raise InvalidInputError("no images supplied")
    return np.concatenate(descs), np.concatenate(patches)


def image_to_grid(image: np.ndarray, cb: Codebook, spec: SamplingSpec = SamplingSpec()) -> WordGrid:
    """Extract, quantize and keep positions: the ground-truth word grid of an image."""
    if cb.patch_size != spec.patch_size:
        raise InvalidInputError(f"codebook patch size {cb.patch_size} != sampling patch size {spec.patch_size}")
    descs = extract_dense_descriptors(image, spec)
    gh, gw = descs.shape[:2]
    labels = quantize_many(descs.reshape(-1, DESCRIPTOR_DIM), cb).reshape(gh, gw)
    return WordGrid(labels, spec)


def pool(grid: WordGrid, K: int) -> np.ndarray:
    """Sum pooling: count of each word label over the grid."""
    flat = grid.flat
    if flat.size and flat.max() >= K:
        raise InvalidInputError(f"label {int(flat.max())} out of range for K={K}")
    return np.bincount(flat, minlength=K).astype(np.int64)


def histogram_to_instances(hist: Sequence[int]) -> np.ndarray:
    """Expand a histogram into the sorted multiset of word labels."""
    hist = np.asarray(hist)
    if hist.ndim != 1 or (hist.size and hist.min() < 0):
        raise InvalidInputError("histogram must be a 1-D vector of non-negative counts")
    return np.repeat(np.arange(hist.size), hist.astype(np.int64))


# -- codebook file -----------------------------------------------------------

def write_codebook(path: PathLike, cb: Codebook) -> None:
    with open(path, "wb") as fh:
        fh.write(codebook_bytes(cb))


def codebook_bytes(cb: Codebook) -> bytes:
    header = CODEBOOK_MAGIC + struct.pack("<3I", cb.K, cb.dim, cb.patch_size)
    return b"".join([
        header,
        cb.centroids.astype("<f4").tobytes(),
        cb.mean_patches.astype("<f4").tobytes(),
        cb.train_counts.astype("<u4").tobytes(),
    ])


def read_codebook(path: PathLike) -> Codebook:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CODEBOOK_MAGIC or len(data) < 16:
        raise InvalidInputError(f"{path}: not a codebook file")
    k, d, p = struct.unpack_from("<3I", data, 4)
    sizes = [k * d, k * p * p, k]
    if len(data) != 16 + 4 * sum(sizes):
        raise InvalidInputError(f"{path}: codebook payload size mismatch")
    off = 16
    cent = np.frombuffer(data, "<f4", sizes[0], off).reshape(k, d)
    off += 4 * sizes[0]
    patches = np.frombuffer(data, "<f4", sizes[1], off).reshape(k, p, p)
    off += 4 * sizes[1]
    counts = np.frombuffer(data, "<u4", sizes[2], off)
    return Codebook(cent.astype(np.float64), patches.astype(np.float64), counts.astype(np.int64))


def round_trip_float32(cb: Codebook) -> Codebook:
    """The codebook as it reads back from disk (float32 storage)."""
    return Codebook(cb.centroids.astype(np.float32).astype(np.float64),
                    cb.mean_patches.astype(np.float32).astype(np.float64),
                    cb.train_counts)
