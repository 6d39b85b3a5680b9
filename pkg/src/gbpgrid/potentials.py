"""MRF potential parameters: measurement terms, pairwise couplings, damping.

Directed residual convention: ``r_pair[e]`` for a directed edge
(src -> dst) is the expected value of ``x_dst - x_src``, so the pairwise
energy reads ``w/2 * (x_dst - x_src - r)**2`` and a message sent along the
edge is centred at the sender's cavity mean plus ``r_pair[e]``. The two
orientations of one undirected edge therefore carry equal weights and
negated residuals.

The on-disk parameter container stores each undirected edge once, with
(src < dst) in row-major order and the residual expressed for the
``(x_src - x_dst - r)**2`` form, and expands to both directions on load.
This container is the seam where an external parameter predictor can
hand a full scene MRF to the solver.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, FileFormatError, ValidationError
from .grid import Connectivity, GridGraph, build_local_edges, with_nonlocal_pairs
from .io import DepthGrid

MAGIC = b"GBPNPRM1"

DEFAULT_W_MEAS = 1.0
DEFAULT_LAMBDA_SMOOTH = 1.0
DEFAULT_SIGMA_COLOR = 0.1
DEFAULT_W_MIN = 1e-6
DEFAULT_BETA = 0.3


@dataclass
class MrfParams:
    """All potential parameters for one scene MRF.

    Per-pixel arrays are (H, W); per-edge arrays align with the owning
    graph's directed edge layout.
    """

    s: np.ndarray                 # measurement values, meters
    measurement_mask: np.ndarray  # bool, True where s is a real measurement
    w_unary: np.ndarray           # measurement weights, 1/m^2, 0 outside mask
    w_pair: np.ndarray            # (E,) pairwise weights, 1/m^2
    r_pair: np.ndarray            # (E,) directed residuals, meters
    beta: np.ndarray              # per-pixel damping rate in [0, 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.s.shape

    def copy(self) -> "MrfParams":
        return MrfParams(*(np.copy(a) for a in (
            self.s, self.measurement_mask, self.w_unary,
            self.w_pair, self.r_pair, self.beta,
        )))


def validate(params: MrfParams, graph: GridGraph, w_min: float = DEFAULT_W_MIN) -> None:
    """Check every structural invariant; raise ValidationError on the first failure.

    An all-false measurement mask is flagged with a warning rather than an
    error: it round-trips fine but makes the implied system singular.
    """
    hw = (graph.height, graph.width)
    for name in ("s", "measurement_mask", "w_unary", "beta"):
        arr = getattr(params, name)
        if arr.shape != hw:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {hw}")
    e = graph.n_edges
    for name in ("w_pair", "r_pair"):
        arr = getattr(params, name)
        if arr.shape != (e,):
            raise ValidationError(f"{name} has shape {arr.shape}, expected ({e},)")
    if np.any(params.w_unary < 0) or not np.all(np.isfinite(params.w_unary)):
        raise ValidationError("w_unary must be finite and >= 0")
    if np.any((params.w_unary > 0) & ~params.measurement_mask):
        raise ValidationError("w_unary > 0 outside the measurement mask")
    if not np.all(np.isfinite(params.s[params.measurement_mask])):
        raise ValidationError("s must be finite where the mask is set")
    if e:
        if not np.all(np.isfinite(params.w_pair)) or np.any(params.w_pair < w_min):
            bad = int(np.argmin(params.w_pair))
            raise ValidationError(
                f"w_pair[{bad}] = {params.w_pair[bad]} below the floor {w_min} "
                f"(edge {graph.src[bad]} -> {graph.dst[bad]})"
            )
        if not np.array_equal(params.w_pair[graph.rev], params.w_pair):
            raise ValidationError("w_pair is not symmetric across edge directions")
        if not np.array_equal(params.r_pair[graph.rev], -params.r_pair):
            raise ValidationError("r_pair is not antisymmetric across edge directions")
        if not np.all(np.isfinite(params.r_pair)):
            raise ValidationError("r_pair must be finite")
    if np.any(params.beta < 0) or np.any(params.beta >= 1):
        raise ValidationError("beta must lie in [0, 1)")
    if not params.measurement_mask.any():
        warnings.warn(
            "parameter set has no measurements; the implied system is singular"
        )


def params_from_guide(
    guide: DepthGrid,
    sparse: DepthGrid,
    graph: GridGraph,
    w_meas: float = DEFAULT_W_MEAS,
    lambda_smooth: float = DEFAULT_LAMBDA_SMOOTH,
    sigma_color: float = DEFAULT_SIGMA_COLOR,
    w_min: float = DEFAULT_W_MIN,
    beta_const: float = DEFAULT_BETA,
) -> MrfParams:
    """Hand-crafted parameters from image statistics.

    Pairwise weights fall off with the squared color difference across
    the edge, ``lambda_smooth * exp(-|g_i - g_j|^2 / (2 sigma_color^2))``,
    floored at w_min; residuals are zero (plain smoothness).
    """
    hw = (graph.height, graph.width)
    if guide.data.shape[:2] != hw or sparse.data.shape[:2] != hw:
        raise DimensionError(
            f"guide {guide.data.shape[:2]} / sparse {sparse.data.shape[:2]} "
            f"do not match graph {hw}"
        )
    if sparse.channels != 1:
        raise DimensionError("sparse input must be single-channel")
    if min(w_meas, lambda_smooth, sigma_color, w_min) <= 0:
        raise ValidationError("w_meas, lambda_smooth, sigma_color, w_min must be positive")
    if not 0 <= beta_const < 1:
        raise ValidationError("beta_const must lie in [0, 1)")

    g = guide.channel_stack().reshape(-1, guide.channel_stack().shape[2])
    diff = g[graph.dst] - g[graph.src]
    dist2 = np.sum(diff * diff, axis=1)
    w_pair = np.maximum(
        w_min, lambda_smooth * np.exp(-dist2 / (2.0 * sigma_color**2))
    )
    mask = sparse.valid_mask.copy()
    return MrfParams(
        s=np.where(mask, sparse.data, 0.0),
        measurement_mask=mask,
        w_unary=np.where(mask, w_meas, 0.0),
        w_pair=w_pair,
        r_pair=np.zeros(graph.n_edges, dtype=np.float64),
        beta=np.full(hw, float(beta_const)),
    )


def _undirected_mask(graph: GridGraph) -> np.ndarray:
    """Directed edges with src < dst: one representative per undirected edge."""
    return graph.src < graph.dst


def save_params(params: MrfParams, graph: GridGraph, path, w_min: float = DEFAULT_W_MIN) -> None:
    """Write the binary parameter container; load_params inverts it exactly."""
    validate(params, graph, w_min=w_min)
    h, w = graph.height, graph.width
    keep = np.flatnonzero(_undirected_mask(graph))
    order = np.lexsort((graph.dst[keep], graph.src[keep]))
    keep = keep[order]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIB", h, w, graph.connectivity.value))
        pairs = graph.nonlocal_pairs.astype("<u4")
        f.write(struct.pack("<I", pairs.shape[0]))
        f.write(np.ascontiguousarray(pairs).tobytes())
        f.write(params.s.astype("<f8").tobytes())
        f.write(params.measurement_mask.astype(np.uint8).tobytes())
        f.write(params.w_unary.astype("<f8").tobytes())
        f.write(params.beta.astype("<f8").tobytes())
        rec = np.empty(keep.size, dtype=[("src", "<u4"), ("dst", "<u4"), ("w", "<f8"), ("r", "<f8")])
        rec["src"] = graph.src[keep]
        rec["dst"] = graph.dst[keep]
        rec["w"] = params.w_pair[keep]
        # file residual is for the (x_src - x_dst - r)^2 form
        rec["r"] = -params.r_pair[keep]
        f.write(rec.tobytes())


def _exactly(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FileFormatError(f"truncated parameter file while reading {what}")
    return buf


def load_params(path, w_min: float = DEFAULT_W_MIN) -> tuple[MrfParams, GridGraph]:
    """Read a parameter container and rebuild the graph it is keyed to.

    Each undirected record expands to both directed orientations, giving
    antisymmetric residuals by construction. All invariants are validated
    against the reconstructed graph; violations name the offending record.
    """
    with open(path, "rb") as f:
        if _exactly(f, len(MAGIC), "magic") != MAGIC:
            raise FileFormatError(f"{path}: bad magic, not a parameter file")
        h, w, conn = struct.unpack("<IIB", _exactly(f, 9, "header"))
        try:
            connectivity = Connectivity(conn)
        except ValueError as exc:
            raise FileFormatError(f"{path}: unknown connectivity flag {conn}") from exc
        if h < 1 or w < 1:
            raise FileFormatError(f"{path}: invalid dimensions {h}x{w}")
        n = h * w
        (n_nl,) = struct.unpack("<I", _exactly(f, 4, "non-local count"))
        pairs = np.frombuffer(_exactly(f, 8 * n_nl, "non-local table"), dtype="<u4")
        pairs = pairs.reshape(n_nl, 2).astype(np.int32)
        s = np.frombuffer(_exactly(f, 8 * n, "s"), dtype="<f8").reshape(h, w).copy()
        mask = np.frombuffer(_exactly(f, n, "mask"), dtype=np.uint8).reshape(h, w) > 0
        w_unary = np.frombuffer(_exactly(f, 8 * n, "w_unary"), dtype="<f8").reshape(h, w).copy()
        beta = np.frombuffer(_exactly(f, 8 * n, "beta"), dtype="<f8").reshape(h, w).copy()

        graph = build_local_edges(h, w, connectivity)
        if n_nl:
            if np.any(pairs >= n) or np.any(pairs[:, 0] >= pairs[:, 1]):
                raise FileFormatError(f"{path}: malformed non-local pair table")
            graph = with_nonlocal_pairs(graph, pairs)
            if not np.array_equal(graph.nonlocal_pairs, pairs):
                raise FileFormatError(f"{path}: non-local table is not canonical")

        n_rec = int(np.count_nonzero(_undirected_mask(graph)))
        rec_dtype = np.dtype([("src", "<u4"), ("dst", "<u4"), ("w", "<f8"), ("r", "<f8")])
        rec = np.frombuffer(
            _exactly(f, rec_dtype.itemsize * n_rec, "edge records"), dtype=rec_dtype
        )
        if f.read(1):
            raise FileFormatError(f"{path}: trailing bytes after edge records")

    keep = np.flatnonzero(_undirected_mask(graph))
    order = np.lexsort((graph.dst[keep], graph.src[keep]))
    keep = keep[order]
    if not (
        np.array_equal(rec["src"], graph.src[keep].astype(np.uint32))
        and np.array_equal(rec["dst"], graph.dst[keep].astype(np.uint32))
    ):
        mism = np.flatnonzero(
            (rec["src"] != graph.src[keep].astype(np.uint32))
            | (rec["dst"] != graph.dst[keep].astype(np.uint32))
        )
        i = int(mism[0]) if mism.size else 0
        raise ValidationError(
            f"{path}: edge record {i} ({rec['src'][i]} -> {rec['dst'][i]}) "
            "does not match the graph's edge set"
        )

    w_pair = np.empty(graph.n_edges, dtype=np.float64)
    r_pair = np.empty(graph.n_edges, dtype=np.float64)
    w_pair[keep] = rec["w"]
    r_pair[keep] = -rec["r"]
    w_pair[graph.rev[keep]] = rec["w"]
    r_pair[graph.rev[keep]] = rec["r"]

    params = MrfParams(s, mask, w_unary, w_pair, r_pair, beta)
    try:
        validate(params, graph, w_min=w_min)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return params, graph


def scale_weights(params: MrfParams, gamma: float) -> MrfParams:
    """All weights multiplied by gamma; means are invariant, precisions scale."""
    return replace(
        params,
        w_unary=params.w_unary * gamma,
        w_pair=params.w_pair * gamma,
    )
