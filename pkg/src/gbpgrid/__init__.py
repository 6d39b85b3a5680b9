"""Gaussian belief propagation on pixel grids.

Builds a scene MRF from a guide image and sparse depth measurements,
infers the dense depth posterior (per-pixel mean and precision) with a
serial & parallel message-passing schedule, and checks itself against
an exact sparse-linear-algebra solve.
"""

from .engine import (
    BeliefMap,
    MessageStore,
    RunResult,
    SolverConfig,
    backend_name,
    run,
)
from .grid import (
    Connectivity,
    GridGraph,
    attach_nonlocal,
    build_local_edges,
    propose_nonlocal_edges,
)
from .io import DepthGrid, sample_sparse
from .metrics import EvalReport, aggregate, evaluate
from .oracle import assemble_system, exact_marginal_precisions, solve_exact
from .potentials import MrfParams, load_params, params_from_guide, save_params

__version__ = "0.1.0"

__all__ = [
    "BeliefMap",
    "Connectivity",
    "DepthGrid",
    "EvalReport",
    "GridGraph",
    "MessageStore",
    "MrfParams",
    "RunResult",
    "SolverConfig",
    "aggregate",
    "assemble_system",
    "attach_nonlocal",
    "backend_name",
    "build_local_edges",
    "evaluate",
    "exact_marginal_precisions",
    "load_params",
    "params_from_guide",
    "propose_nonlocal_edges",
    "run",
    "sample_sparse",
    "save_params",
    "solve_exact",
]
