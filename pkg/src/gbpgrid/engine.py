"""Gaussian message passing with the serial & parallel schedule.

Messages live in canonical form, one (eta, lambda) pair per directed
edge. An outer iteration performs the four directional serial sweeps
(LR, TB, RL, BT) followed by a number of parallel steps over the
non-local edges:

* A serial sweep walks the target lines of its direction in order
  (columns left-to-right for LR, and so on). All messages into one line
  are computed from the current beliefs of the previous line, stored
  with per-pixel damping, and the line's beliefs are refreshed before
  the next line starts. This Gauss-Seidel behaviour is what lets a
  single measurement reach every pixel within one iteration.
* A parallel non-local step is Jacobi style: every non-local message is
  computed from one snapshot of the pre-step state, then all beliefs
  are refreshed once. The result is independent of edge order.

The cavity for an edge (j -> i) is the sender's belief minus the stored
reverse message, eta_bel[j] - eta_msg[i -> j] (and likewise for lambda),
which is an O(1) equivalent of re-summing all other neighbours. A cavity
with precision at or below ``epsilon_cavity`` emits the vacuous message
(0, 0).

The hot loops are implemented twice: a compiled Cython extension and a
vectorized NumPy fallback with identical arithmetic. The extension is
preferred at import; set GBPGRID_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .grid import SWEEP_ORDER, GridGraph
from .potentials import MrfParams

if os.environ.get("GBPGRID_PURE_PYTHON"):
    from . import _sweeps_py as _default_kernels
else:
    try:
        from . import _sweeps as _default_kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _sweeps_py as _default_kernels

DEFAULT_EPSILON_CAVITY = 1e-12


def backend_name() -> str:
    """Name of the kernel backend selected at import ('compiled' or 'python')."""
    return _default_kernels.BACKEND_NAME


def get_kernels(backend: str | None = None):
    """Kernel module for an explicit backend name, or the import-time default."""
    if backend is None:
        return _default_kernels
    if backend == "python":
        from . import _sweeps_py

        return _sweeps_py
    if backend == "compiled":
        from . import _sweeps  # type: ignore[attr-defined]

        return _sweeps
    raise ParameterError(f"unknown backend {backend!r}")


@dataclass
class MessageStore:
    """Canonical-form message (eta, lambda) per directed edge."""

    eta: np.ndarray
    lam: np.ndarray

    @classmethod
    def zeros(cls, graph: GridGraph) -> "MessageStore":
        return cls(
            np.zeros(graph.n_edges, dtype=np.float64),
            np.zeros(graph.n_edges, dtype=np.float64),
        )

    def copy(self) -> "MessageStore":
        return MessageStore(self.eta.copy(), self.lam.copy())


@dataclass
class BeliefMap:
    """Per-pixel posterior in canonical form, flat over row-major pixels."""

    height: int
    width: int
    eta: np.ndarray
    lam: np.ndarray

    def mean(self) -> np.ndarray:
        """Posterior mean, NaN where the belief holds no information."""
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(self.lam > 0, self.eta / self.lam, np.nan)
        return mu.reshape(self.height, self.width)

    def precision(self) -> np.ndarray:
        return self.lam.reshape(self.height, self.width).copy()

    def copy(self) -> "BeliefMap":
        return BeliefMap(self.height, self.width, self.eta.copy(), self.lam.copy())


@dataclass
class SolverConfig:
    iterations: int = 5          # outer iterations T
    nonlocal_steps: int = 1      # parallel steps T_n per outer iteration
    epsilon_cavity: float = DEFAULT_EPSILON_CAVITY
    early_stop_tol: float | None = None
    record_trace: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.nonlocal_steps < 0:
            raise ParameterError("nonlocal_steps must be >= 0")
        if self.epsilon_cavity <= 0:
            raise ParameterError("epsilon_cavity must be > 0")
        if self.early_stop_tol is not None and self.early_stop_tol < 0:
            raise ParameterError("early_stop_tol must be >= 0")


@dataclass
class TraceRow:
    iteration: int
    max_delta_mu: float
    mean_lambda: float
    ms: float

    def format(self) -> str:
        return f"{self.iteration}\t{self.max_delta_mu:.6e}\t{self.mean_lambda:.6e}\t{self.ms:.3f}"


@dataclass
class RunResult:
    beliefs: BeliefMap
    messages: MessageStore
    trace: list[TraceRow] | None = None


# ---------------------------------------------------------------------------
# scalar reference operations

def message_update(
    cavity_eta: float,
    cavity_lambda: float,
    w_ij: float,
    r_ij: float,
    epsilon_cavity: float = DEFAULT_EPSILON_CAVITY,
) -> tuple[float, float]:
    """Single-edge message: cavity marginalized through the pairwise potential.

    The outgoing Gaussian has mean ``cavity mean + r_ij`` and precision
    ``1 / (1/cavity_lambda + 1/w_ij)``; an uninformative cavity yields
    the vacuous message (0, 0).
    """
    if w_ij <= 0:
        raise ParameterError(f"pairwise weight must be positive, got {w_ij}")
    if cavity_lambda <= epsilon_cavity:
        return 0.0, 0.0
    lam = 1.0 / (1.0 / cavity_lambda + 1.0 / w_ij)
    mu = cavity_eta / cavity_lambda + r_ij
    return mu * lam, lam


def belief_update(
    pixel: int, params: MrfParams, store: MessageStore, graph: GridGraph
) -> tuple[float, float]:
    """Canonical belief at one pixel: unary evidence plus incoming messages."""
    w = params.w_unary.ravel()[pixel]
    eta = w * params.s.ravel()[pixel] if params.measurement_mask.ravel()[pixel] else 0.0
    lam = w
    for e in np.flatnonzero(graph.dst == pixel):
        eta += store.eta[e]
        lam += store.lam[e]
    return float(eta), float(lam)


def damp(
    prev: tuple[float, float], fresh: tuple[float, float], beta_i: float
) -> tuple[float, float]:
    """Convex blend of the stored and freshly computed message."""
    if not 0 <= beta_i < 1:
        raise ParameterError(f"damping rate must lie in [0, 1), got {beta_i}")
    return (
        beta_i * prev[0] + (1.0 - beta_i) * fresh[0],
        beta_i * prev[1] + (1.0 - beta_i) * fresh[1],
    )


# ---------------------------------------------------------------------------
# sweep plans: per-direction line structure, precomputed per graph

@dataclass
class _DirPlan:
    line_edge_ptr: np.ndarray   # (n_lines+1,) int64, absolute edge bounds per line
    line_pix: np.ndarray        # int32, pixels of each line, concatenated
    line_pix_ptr: np.ndarray    # (n_lines+1,) int64
    gather: np.ndarray          # int32, in-edge ids of line pixels, concatenated
    gather_line_ptr: np.ndarray  # (n_lines+1,) int64
    owner: np.ndarray           # int64, gather entry -> pixel position within its line


@dataclass
class _Plans:
    in_edge: np.ndarray   # int32, incoming edge ids grouped by pixel (edge order)
    in_ptr: np.ndarray    # (N+1,) int64
    all_owner: np.ndarray  # int64, in_edge entry -> pixel
    dirs: dict[str, _DirPlan] = field(default_factory=dict)


def _ragged_gather(in_ptr, in_edge, pixels):
    counts = (in_ptr[pixels + 1] - in_ptr[pixels]).astype(np.int64)
    seg_ptr = np.zeros(pixels.size + 1, dtype=np.int64)
    np.cumsum(counts, out=seg_ptr[1:])
    total = int(seg_ptr[-1])
    rep_start = np.repeat(in_ptr[pixels], counts)
    rep_seg = np.repeat(seg_ptr[:-1], counts)
    gather = in_edge[rep_start + (np.arange(total, dtype=np.int64) - rep_seg)]
    return gather, seg_ptr, counts


def _build_plans(graph: GridGraph) -> _Plans:
    h, w, n = graph.height, graph.width, graph.n_pixels
    order = np.argsort(graph.dst, kind="stable").astype(np.int64)
    in_edge = order.astype(np.int32)
    sorted_dst = graph.dst[order]
    in_ptr = np.searchsorted(sorted_dst, np.arange(n + 1)).astype(np.int64)
    all_owner = np.repeat(
        np.arange(n, dtype=np.int64), np.diff(in_ptr).astype(np.int64)
    )
    plans = _Plans(in_edge=in_edge, in_ptr=in_ptr, all_owner=all_owner)

    for name in SWEEP_ORDER:
        lo, hi = graph.set_ranges[name]
        d = graph.dst[lo:hi]
        if name in ("LR", "RL"):
            lines = np.arange(1, w) if name == "LR" else np.arange(w - 2, -1, -1)
            keys = d % w
        else:
            lines = np.arange(1, h) if name == "TB" else np.arange(h - 2, -1, -1)
            keys = d // w
        if name in ("RL", "BT"):
            keys = -keys
            bounds = np.searchsorted(keys, -lines)
        else:
            bounds = np.searchsorted(keys, lines)
        line_edge_ptr = np.concatenate([bounds, [hi - lo]]).astype(np.int64) + lo

        if name in ("LR", "RL"):
            pix = (np.arange(h, dtype=np.int64)[:, None] * w + lines[None, :]).T
        else:
            pix = lines[:, None] * w + np.arange(w, dtype=np.int64)[None, :]
        line_pix = np.ascontiguousarray(pix.reshape(-1), dtype=np.int64)
        npix_per_line = pix.shape[1] if pix.size else 0
        line_pix_ptr = (
            np.arange(lines.size + 1, dtype=np.int64) * npix_per_line
        )
        gather, seg_ptr, counts = _ragged_gather(in_ptr, in_edge, line_pix)
        owner_abs = np.repeat(np.arange(line_pix.size, dtype=np.int64), counts)
        owner = owner_abs - np.repeat(
            line_pix_ptr[:-1], seg_ptr[line_pix_ptr[1:]] - seg_ptr[line_pix_ptr[:-1]]
        )
        gather_line_ptr = seg_ptr[line_pix_ptr]
        plans.dirs[name] = _DirPlan(
            line_edge_ptr=line_edge_ptr,
            line_pix=line_pix.astype(np.int32),
            line_pix_ptr=line_pix_ptr,
            gather=gather.astype(np.int32),
            gather_line_ptr=gather_line_ptr,
            owner=owner,
        )
    return plans


def _plans_for(graph: GridGraph) -> _Plans:
    cached = graph.__dict__.get("_sweep_plans")
    if cached is None:
        cached = _build_plans(graph)
        graph.__dict__["_sweep_plans"] = cached
    return cached


def _unary_arrays(params: MrfParams) -> tuple[np.ndarray, np.ndarray]:
    lam_u = np.ascontiguousarray(params.w_unary.ravel(), dtype=np.float64)
    eta_u = lam_u * params.s.ravel()
    return eta_u, lam_u


# ---------------------------------------------------------------------------
# state-level operations

def init_state(params: MrfParams, graph: GridGraph) -> tuple[MessageStore, BeliefMap]:
    """Zero messages and unary-only beliefs (the schedule's starting point)."""
    _check_shapes(params, graph)
    eta_u, lam_u = _unary_arrays(params)
    msgs = MessageStore.zeros(graph)
    beliefs = BeliefMap(graph.height, graph.width, eta_u.copy(), lam_u.copy())
    return msgs, beliefs


def _check_shapes(params: MrfParams, graph: GridGraph) -> None:
    if params.s.shape != (graph.height, graph.width):
        raise DimensionError(
            f"params shape {params.s.shape} does not match graph "
            f"{(graph.height, graph.width)}"
        )
    if params.w_pair.shape != (graph.n_edges,):
        raise DimensionError(
            f"params cover {params.w_pair.shape[0]} edges, graph has {graph.n_edges}"
        )


def serial_sweep(
    direction: str,
    messages: MessageStore,
    beliefs: BeliefMap,
    params: MrfParams,
    graph: GridGraph,
    epsilon_cavity: float = DEFAULT_EPSILON_CAVITY,
    kernels=None,
) -> None:
    """One directional pass, updating messages and beliefs in place."""
    if direction not in SWEEP_ORDER:
        raise ParameterError(f"direction must be one of {SWEEP_ORDER}, got {direction!r}")
    kern = kernels if kernels is not None else _default_kernels
    plans = _plans_for(graph)
    eta_u, lam_u = _unary_arrays(params)
    kern.serial_sweep(
        messages.eta, messages.lam, beliefs.eta, beliefs.lam,
        graph.src, graph.dst, graph.rev,
        params.w_pair, params.r_pair, params.beta.ravel(),
        eta_u, lam_u, plans.in_edge, plans.in_ptr,
        plans.dirs[direction], float(epsilon_cavity),
    )


def parallel_nonlocal_step(
    messages: MessageStore,
    beliefs: BeliefMap,
    params: MrfParams,
    graph: GridGraph,
    epsilon_cavity: float = DEFAULT_EPSILON_CAVITY,
    kernels=None,
) -> None:
    """One Jacobi step over all non-local edges, then a full belief refresh."""
    kern = kernels if kernels is not None else _default_kernels
    plans = _plans_for(graph)
    eta_u, lam_u = _unary_arrays(params)
    lo, hi = graph.set_ranges["NL"]
    if lo == hi:
        return
    kern.nonlocal_step(
        messages.eta, messages.lam, beliefs.eta, beliefs.lam,
        graph.src, graph.dst, graph.rev,
        params.w_pair, params.r_pair, params.beta.ravel(),
        eta_u, lam_u, plans.in_edge, plans.in_ptr, plans.all_owner,
        lo, hi, float(epsilon_cavity),
    )


def run(
    params: MrfParams,
    graph: GridGraph,
    cfg: SolverConfig | None = None,
    param_provider=None,
    backend: str | None = None,
) -> RunResult:
    """Full inference: T outer iterations of four sweeps plus T_n parallel steps.

    ``param_provider``, when given, is called as ``provider(t, params)``
    before outer iteration t (1-based) and may return updated parameters
    for the same graph; this is the hook for schemes that adapt the MRF
    between iterations. The solver never fails on non-convergence; the
    optional trace reports progress instead.
    """
    cfg = cfg or SolverConfig()
    _check_shapes(params, graph)
    kern = get_kernels(backend)
    if not params.measurement_mask.any():
        warnings.warn(
            "no measurements: the posterior is improper and unreached pixels "
            "keep zero precision"
        )
    msgs, beliefs = init_state(params, graph)
    with np.errstate(divide="ignore", invalid="ignore"):
        prev_mu = np.where(beliefs.lam > 0, beliefs.eta / beliefs.lam, np.nan)
    trace: list[TraceRow] | None = [] if cfg.record_trace else None
    delta = np.inf

    for t in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        if param_provider is not None:
            params = param_provider(t, params)
            _check_shapes(params, graph)
        for direction in SWEEP_ORDER:
            serial_sweep(
                direction, msgs, beliefs, params, graph,
                cfg.epsilon_cavity, kernels=kern,
            )
        for _ in range(cfg.nonlocal_steps):
            parallel_nonlocal_step(
                msgs, beliefs, params, graph, cfg.epsilon_cavity, kernels=kern
            )
        informative = beliefs.lam > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(informative, beliefs.eta / beliefs.lam, np.nan)
        newly = informative & ~np.isfinite(prev_mu)
        if np.any(newly):
            delta = np.inf
        else:
            diffs = np.abs(mu[informative] - prev_mu[informative])
            delta = float(np.max(diffs, initial=0.0))
        prev_mu = mu
        if trace is not None:
            trace.append(
                TraceRow(
                    iteration=t,
                    max_delta_mu=delta,
                    mean_lambda=float(beliefs.lam.mean()) if beliefs.lam.size else 0.0,
                    ms=(time.perf_counter() - t0) * 1e3,
                )
            )
        if cfg.early_stop_tol is not None and delta <= cfg.early_stop_tol:
            break

    return RunResult(beliefs=beliefs, messages=msgs, trace=trace)
