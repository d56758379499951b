import numpy as np
import pytest

from bovwrecon.costs import AdjacencyCost, OffsetSet, PositionCost
from bovwrecon.pipeline import Codebook, SamplingSpec, WordGrid


def random_costs(rng, K, n_places, offsets=None):
    """Arbitrary non-negative cost tables (not learned, not normalized)."""
    offsets = offsets or OffsetSet.from_m(8)
    ca = AdjacencyCost(rng.uniform(0.0, 3.0, size=(K, K, offsets.m)), offsets)
    cp = PositionCost(rng.uniform(0.0, 3.0, size=(K, n_places)))
    return ca, cp


def random_hist(rng, K, n):
    return np.bincount(rng.integers(0, K, size=n), minlength=K)


def grid(rows, spec=SamplingSpec()):
    return WordGrid(np.array(rows, dtype=np.int64), spec)


def toy_codebook(K=2, patch=4, dim=128, values=None):
    values = values if values is not None else np.linspace(0.0, 1.0, K)
    patches = np.stack([np.full((patch, patch), v) for v in values])
    cents = np.eye(K, dim)
    return Codebook(cents, patches, np.ones(K, dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def emit(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else "")
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance gate")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
