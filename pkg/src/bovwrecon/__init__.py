"""Image reconstruction from bag-of-visual-words histograms.

Layout recovery is posed as a quadratic assignment problem over corpus-learned
adjacency and position costs, solved with a genetic algorithm plus hill
climbing, then rendered by additive patch synthesis.
"""

__version__ = "0.1.0"

from .errors import BovwError, InvalidInputError, NotFoundError, SizeError
from .pipeline import (
    Codebook,
    Layout,
    SamplingSpec,
    WordGrid,
    extract_dense_descriptors,
    image_to_grid,
    pool,
    quantize,
    train_codebook,
)
from .costs import OffsetSet, AdjacencyCost, PositionCost, learn_adjacency_cost, learn_position_cost
from .qap import SolverConfig, objective, ga_hc_solve, solve
from .render import render_layout

__all__ = [
    "BovwError", "InvalidInputError", "NotFoundError", "SizeError",
    "Codebook", "Layout", "SamplingSpec", "WordGrid",
    "extract_dense_descriptors", "image_to_grid", "pool", "quantize", "train_codebook",
    "OffsetSet", "AdjacencyCost", "PositionCost", "learn_adjacency_cost", "learn_position_cost",
    "SolverConfig", "objective", "ga_hc_solve", "solve", "render_layout",
]
