"""2-bit random-projection coding, maximum-likelihood similarity estimation and
uniform-quantization LSH with sketch-based re-ranking."""

from .coding import CellCounts, ProjectionSpec, Sketches, encode_2bit, sketch, tally_cells
from .collision_gap import GapQuery, collision_prob_offset, collision_prob_uniform, gap, optimal_gap
from .estimation import (
    ESTIMATORS,
    MleConfig,
    estimate_1bit,
    estimate_2bit_linear,
    estimate_2bit_mle,
    fisher_info_2bit,
    g_function,
)
from .lsh_engine import IndexConfig, LshIndex, build_index, build_two_stage, query, rerank
from .region_model import ProbabilityTable, build_table, region_prob

__version__ = "0.1.0"
