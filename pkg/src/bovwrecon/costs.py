"""Corpus statistics for layout naturalness.

Local adjacency cost: ``table[i, j, d] = -log P(word j at displacement d | word i)``.
Global position cost: ``table[i, k] = -log P(place k | word i)``.
Both use add-one smoothing, so every entry is finite and non-negative.
"""

import os
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInputError
from .pipeline import WordGrid

PathLike = Union[str, os.PathLike]

ADJACENCY_MAGIC = b"BVWA"
POSITION_MAGIC = b"BVWP"


@dataclass(frozen=True)
class OffsetSet:
    """Relative grid displacements ``(dx, dy)`` considered neighbors (never (0, 0))."""

    offsets: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        offs = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        if (0, 0) in offs:
            raise InvalidInputError("offset (0, 0) is not a neighbor")
        if len(set(offs)) != len(offs):
            raise InvalidInputError("duplicate offsets")
        if any(not -128 <= v <= 127 for o in offs for v in o):
            raise InvalidInputError("offsets must fit in a signed byte")
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def square(cls, radius: int) -> "OffsetSet":
        """All displacements in the (2r+1) x (2r+1) window, row-major, minus the center."""
        if radius < 1:
            raise InvalidInputError("radius must be >= 1")
        rng = range(-radius, radius + 1)
        return cls(tuple((dx, dy) for dy in rng for dx in rng if (dx, dy) != (0, 0)))

    @classmethod
    def from_m(cls, m: int = 48) -> "OffsetSet":
        r = int(round((np.sqrt(m + 1) - 1) / 2))
        if r < 1 or (2 * r + 1) ** 2 - 1 != m:
            raise InvalidInputError(f"m={m} is not of the form (2r+1)^2 - 1")
        return cls.square(r)

    @property
    def m(self) -> int:
        return len(self.offsets)

    def index(self) -> Dict[Tuple[int, int], int]:
        return {o: i for i, o in enumerate(self.offsets)}

    def as_array(self) -> np.ndarray:
        return np.array(self.offsets, dtype=np.int64).reshape(-1, 2)


@dataclass
class AdjacencyCost:
    table: np.ndarray  # (K, K, m)
    offsets: OffsetSet

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 3 or self.table.shape[0] != self.table.shape[1] \
                or self.table.shape[2] != self.offsets.m:
            raise InvalidInputError(f"adjacency table shape {self.table.shape} inconsistent with m={self.offsets.m}")

    @property
    def K(self) -> int:
        return self.table.shape[0]

    @property
    def m(self) -> int:
        return self.offsets.m


@dataclass
class PositionCost:
    table: np.ndarray  # (K, N)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2:
            raise InvalidInputError("position table must be 2-D (K, N)")

    @property
    def K(self) -> int:
        return self.table.shape[0]

    @property
    def N(self) -> int:
        return self.table.shape[1]


def _common_shape(corpus: Sequence[WordGrid], K: int) -> Optional[Tuple[int, int]]:
    shape = None
    for g in corpus:
        if shape is None:
            shape = g.shape
        elif g.shape != shape:
            raise InvalidInputError(f"mixed grid shapes in corpus: {shape} vs {g.shape}")
        if g.n_cells and g.flat.max() >= K:
            raise InvalidInputError(f"label {int(g.flat.max())} out of range for K={K}")
    return shape


def neighbor_pairs(grid_h: int, grid_w: int, dx: int, dy: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat cell indices (src, dst) with dst = src + (dx, dy), both inside the grid."""
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    r2, c2 = rows + dy, cols + dx
    ok = (r2 >= 0) & (r2 < grid_h) & (c2 >= 0) & (c2 < grid_w)
    return np.flatnonzero(ok), (r2 * grid_w + c2)[ok]


def adjacency_counts(corpus: Sequence[WordGrid], K: int, offsets: OffsetSet) -> np.ndarray:
    """Raw co-occurrence counts ``[i, j, d]`` (no smoothing)."""
    corpus = list(corpus)
    shape = _common_shape(corpus, K)
    m = offsets.m
    counts = np.zeros(K * K * m, dtype=np.int64)
    if shape is None:
        return counts.reshape(K, K, m)
    gh, gw = shape
    stack = np.stack([g.flat for g in corpus])
    index = []
    for d, (dx, dy) in enumerate(offsets.offsets):
        src, dst = neighbor_pairs(gh, gw, dx, dy)
        index.append(((stack[:, src] * K + stack[:, dst]) * m + d).ravel())
    counts += np.bincount(np.concatenate(index), minlength=K * K * m)
    return counts.reshape(K, K, m)


def position_counts(corpus: Sequence[WordGrid], K: int, n_places: Optional[int] = None) -> np.ndarray:
    corpus = list(corpus)
    shape = _common_shape(corpus, K)
    if shape is None:
        if n_places is None:
            raise InvalidInputError("empty corpus: the number of places must be given")
        n = n_places
    else:
        n = shape[0] * shape[1]
        if n_places is not None and n_places != n:
            raise InvalidInputError(f"corpus grids have {n} places, expected {n_places}")
    counts = np.zeros(K * n, dtype=np.int64)
    if corpus:
        stack = np.stack([g.flat for g in corpus])
        counts += np.bincount((stack * n + np.arange(n)).ravel(), minlength=K * n)
    return counts.reshape(K, n)


def _neg_log_normalized(counts: np.ndarray, axis: int) -> np.ndarray:
    smoothed = counts.astype(np.float64) + 1.0
    prob = smoothed / smoothed.sum(axis=axis, keepdims=True)
    return -np.log(prob)


def learn_adjacency_cost(corpus: Iterable[WordGrid], K: int, offsets: OffsetSet = OffsetSet.from_m(48)) -> AdjacencyCost:
    """Count ordered word pairs per displacement, add one, normalize over the second word, take -log."""
    counts = adjacency_counts(list(corpus), K, offsets)
    return AdjacencyCost(_neg_log_normalized(counts, axis=1), offsets)


def learn_position_cost(corpus: Iterable[WordGrid], K: int, n_places: Optional[int] = None) -> PositionCost:
    """Count word occurrences per place, add one, normalize each word over places, take -log."""
    counts = position_counts(list(corpus), K, n_places)
    return PositionCost(_neg_log_normalized(counts, axis=1))


# -- files -------------------------------------------------------------------

def adjacency_bytes(ca: AdjacencyCost) -> bytes:
    offs = ca.offsets.as_array().astype(np.int8)
    return b"".join([
        ADJACENCY_MAGIC,
        struct.pack("<2I", ca.K, ca.m),
        offs.tobytes(),
        ca.table.astype("<f4").tobytes(),
    ])


def position_bytes(cp: PositionCost) -> bytes:
    return POSITION_MAGIC + struct.pack("<2I", cp.K, cp.N) + cp.table.astype("<f4").tobytes()


def write_adjacency(path: PathLike, ca: AdjacencyCost) -> None:
    with open(path, "wb") as fh:
        fh.write(adjacency_bytes(ca))


def write_position(path: PathLike, cp: PositionCost) -> None:
    with open(path, "wb") as fh:
        fh.write(position_bytes(cp))


def read_adjacency(path: PathLike) -> AdjacencyCost:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ADJACENCY_MAGIC or len(data) < 12:
        raise InvalidInputError(f"{path}: not an adjacency cost file")
    k, m = struct.unpack_from("<2I", data, 4)
    if len(data) != 12 + 2 * m + 4 * k * k * m:
        raise InvalidInputError(f"{path}: adjacency payload size mismatch")
    offs = np.frombuffer(data, np.int8, 2 * m, 12).reshape(m, 2)
    table = np.frombuffer(data, "<f4", k * k * m, 12 + 2 * m).reshape(k, k, m)
    return AdjacencyCost(table.astype(np.float64), OffsetSet(tuple(map(tuple, offs.tolist()))))


def read_position(path: PathLike) -> PositionCost:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != POSITION_MAGIC or len(data) < 12:
        raise InvalidInputError(f"{path}: not a position cost file")
    k, n = struct.unpack_from("<2I", data, 4)
    if len(data) != 12 + 4 * k * n:
        raise InvalidInputError(f"{path}: position payload size mismatch")
    return PositionCost(np.frombuffer(data, "<f4", k * n, 12).reshape(k, n).astype(np.float64))
