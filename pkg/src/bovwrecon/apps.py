"""Feature-space image generation: morphing, classifier inversion, sentence to BoVW."""

import logging
import os
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import InvalidInputError, NotFoundError

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

_BISECT_STEPS = 200


# -- morphing ----------------------------------------------------------------

def _histogram(counter: Counter, K: int) -> np.ndarray:
    h = np.zeros(K, dtype=np.int64)
    for label, c in counter.items():
        h[label] = c
    return h


def morph_sequence(ws: Sequence[int], wt: Sequence[int], seed: int = 0, K: Optional[int] = None) -> List[np.ndarray]:
    """Histograms walking from word multiset ``ws`` to ``wt`` one swap at a time.

    Each step adds a random word instance still missing from the current set
    and removes a random instance not wanted by the target. The first histogram
    pools ``ws``, the last pools ``wt``.
    """
    ws, wt = [int(w) for w in ws], [int(w) for w in wt]
    if len(ws) != len(wt):
        raise InvalidInputError(f"source has {len(ws)} words, target has {len(wt)}")
    if any(w < 0 for w in ws + wt):
        raise InvalidInputError("word labels must be non-negative")
    if K is None:
        K = max(ws + wt, default=-1) + 1
    elif any(w >= K for w in ws + wt):
        raise InvalidInputError(f"word label out of range for K={K}")
    rng = np.random.default_rng(seed)
    cur, target = Counter(ws), Counter(wt)
    seq = [_histogram(cur, K)]
    while cur != target:
        missing = sorted((target - cur).elements())
        extra = sorted((cur - target).elements())
        cur[missing[rng.integers(len(missing))]] += 1
        cur[extra[rng.integers(len(extra))]] -= 1
        cur = +cur
        seq.append(_histogram(cur, K))
    return seq


def histogram_multiset(hist: Sequence[int]) -> List[int]:
    return np.repeat(np.arange(len(hist)), np.asarray(hist, dtype=np.int64)).tolist()


# -- classifier inversion ----------------------------------------------------

@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.int64)


def integerize(direction: np.ndarray, n: int) -> np.ndarray:
    """Turn a real direction into a count vector with L1 norm as close to ``n`` as possible.

    Negative entries are clipped to zero after unit normalization; the scale
    ``alpha`` of ``round(alpha * x)`` is found by bisection on the
    nondecreasing step function ``alpha -> L1``. When no scale hits ``n``
    exactly, the closer of the two neighboring steps wins (the lower on ties).
    """
    v = np.asarray(direction, dtype=np.float64).reshape(-1)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if not np.all(np.isfinite(v)) or not np.any(v > 0):
        raise InvalidInputError("direction has no positive component")
    x = v / np.linalg.norm(v)
    x = np.maximum(x, 0.0)
    l1 = lambda alpha: int(_round_half_up(alpha * x).sum())
    lo, hi = 0.0, (n + 0.5) / x.max()
    while l1(hi) < n:  # guards float slop at the upper bracket
        hi *= 2.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if l1(mid) >= n:
            hi = mid
        else:
            lo = mid
    h_hi = _round_half_up(hi * x)
    h_lo = _round_half_up(lo * x)
    if abs(int(h_lo.sum()) - n) <= abs(int(h_hi.sum()) - n):
        return h_lo
    return h_hi


def match_total(hist: np.ndarray, direction: np.ndarray, n: int) -> np.ndarray:
    """Adjust an integerized histogram so it sums to exactly ``n``.

    Used when rounding skips ``n``. One word at a time is added where the count
    falls furthest below the ideal real-valued share ``n * x / sum(x)``, or
    removed where it exceeds it most; ties go to the lowest index.
    """
    h = np.asarray(hist, dtype=np.int64).copy()
    v = np.maximum(np.asarray(direction, dtype=np.float64).reshape(-1), 0.0)
    if v.size != h.size or not np.any(v > 0):
        raise InvalidInputError("direction must match the histogram and have a positive component")
    gap = n * v / v.sum() - h
    while h.sum() < n:
        i = int(np.argmax(np.where(v > 0, gap, -np.inf)))
        h[i] += 1
        gap[i] -= 1.0
    while h.sum() > n:
        i = int(np.argmin(np.where(h > 0, gap, np.inf)))
        h[i] -= 1
        gap[i] += 1.0
    return h


def classifier_to_bovw(clf: LinearClassifier, n: int) -> np.ndarray:
    """Integer BoVW maximizing the classifier score under a fixed word count ``n``.

    The bias does not change the maximizing direction and is ignored.
    """
    if not np.any(clf.weights > 0):
        raise InvalidInputError("classifier has no positive weight; nothing to invert")
    return integerize(clf.weights, n)


def read_classifier(path: PathLike) -> LinearClassifier:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise InvalidInputError(f"{path}: empty weight file")
    try:
        w = [float(t) for t in lines[0].split()]
        b = float(lines[1]) if len(lines) > 1 else 0.0
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    return LinearClassifier(np.array(w), b)


# -- sentences ---------------------------------------------------------------

@dataclass
class CaptionCorpus:
    """Paired (visual-word histogram, caption word counts) entries."""

    histograms: np.ndarray  # (n_entries, K)
    captions: List[Dict[str, int]]

    def __post_init__(self):
        self.histograms = np.asarray(self.histograms, dtype=np.int64)
        if self.histograms.ndim != 2 or self.histograms.shape[0] != len(self.captions):
            raise InvalidInputError("one caption per histogram row is required")

    @property
    def K(self) -> int:
        return self.histograms.shape[1]

    @property
    def vocabulary(self) -> List[str]:
        return sorted({w for cap in self.captions for w in cap})

    def word_counts(self, word: str) -> np.ndarray:
        return np.array([cap.get(word, 0) for cap in self.captions], dtype=np.float64)


def word_to_bovw_direction(word: str, corpus: CaptionCorpus) -> np.ndarray:
    """Per-visual-word Pearson correlation with the caption count of ``word``."""
    s = corpus.word_counts(word)
    if not s.any():
        raise NotFoundError(f"word {word!r} not found in the caption corpus")
    s = s - s.mean()
    if not np.any(s != 0):
        raise InvalidInputError(f"word {word!r} has constant count across the corpus; correlation undefined")
    t = corpus.histograms.astype(np.float64)
    t = t - t.mean(axis=0)
    num = s @ t
    den = np.sqrt((s @ s) * np.einsum("ij,ij->j", t, t))
    u = np.zeros(corpus.K)
    ok = den > 0
    u[ok] = num[ok] / den[ok]
    return np.clip(u, -1.0, 1.0)


def sentence_to_bovw(sentence: Sequence[str], corpus: CaptionCorpus, n: int) -> np.ndarray:
    """Average the directions of the known words and integerize to ``n`` words."""
    dirs = []
    for w in sentence:
        try:
            dirs.append(word_to_bovw_direction(w, corpus))
        except NotFoundError:
            log.warning("skipping word %r: not in caption corpus", w)
    if not dirs:
        raise InvalidInputError("no sentence word occurs in the caption corpus")
    return integerize(np.mean(dirs, axis=0), n)


def tokenize(text: str) -> List[str]:
    return text.lower().split()


def read_histogram(path: PathLike) -> np.ndarray:
    """Plain-text histogram: first line K, second line K counts."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        k = int(lines[0])
        counts = np.array([int(t) for t in lines[1].split()] if len(lines) > 1 else [], dtype=np.int64)
    except (ValueError, IndexError):
        raise InvalidInputError(f"{path}: malformed histogram file") from None
    if counts.size != k or (counts.size and counts.min() < 0):
        raise InvalidInputError(f"{path}: expected {k} non-negative counts, got {counts.size}")
    return counts


def format_histogram(hist: Sequence[int]) -> str:
    hist = [int(h) for h in hist]
    return f"{len(hist)}\n{' '.join(map(str, hist))}\n"


def write_histogram(path: PathLike, hist: Sequence[int]) -> None:
    with open(path, "w") as fh:
        fh.write(format_histogram(hist))


def read_caption_corpus(path: PathLike) -> CaptionCorpus:
    """One record per line: histogram file path, a tab, caption tokens."""
    base = os.path.dirname(os.path.abspath(path))
    hists, caps = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected '<histogram path>\\t<caption>'")
            hpath, caption = line.split("\t", 1)
            if not os.path.isabs(hpath):
                hpath = os.path.join(base, hpath)
            hists.append(read_histogram(hpath))
            caps.append(dict(Counter(tokenize(caption))))
    if not hists:
        raise InvalidInputError(f"{path}: empty caption corpus")
    if len({h.size for h in hists}) != 1:
        raise InvalidInputError(f"{path}: histograms have different K")
    return CaptionCorpus(np.array(hists), caps)
