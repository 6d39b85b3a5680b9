"""Grid MRF structure: directional local edge sets and non-local partners.

Directed edges over the pixel lattice are partitioned into four sweep
sets by the column-first rule (column delta +1 -> LR, -1 -> RL, else row
delta +1 -> TB, -1 -> BT), so diagonal edges ride the horizontal sweeps
and every directed edge is visited exactly once per serial pass. Each
set is stored pre-sorted in its sweep processing order: by target line,
then row-major target within the line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionError, ParameterError
from .io import DepthGrid

SWEEP_ORDER = ("LR", "TB", "RL", "BT")


class Connectivity(Enum):
    FOUR = 4
    EIGHT = 8


@dataclass
class GridGraph:
    """Immutable MRF structure over an H x W pixel lattice.

    All directed edges live in one flat (src, dst) array pair laid out as
    LR | TB | RL | BT | NL; ``set_ranges`` gives each set's slice. ``rev``
    maps every directed edge to its reverse, which always exists.
    """

    height: int
    width: int
    connectivity: Connectivity
    src: np.ndarray  # (E,) int32 flat pixel index of the sender
    dst: np.ndarray  # (E,) int32 flat pixel index of the receiver
    set_ranges: dict[str, tuple[int, int]]
    rev: np.ndarray  # (E,) int32 index of the reverse directed edge
    nonlocal_pairs: np.ndarray = field(
        default_factory=lambda: np.empty((0, 2), dtype=np.int32)
    )  # (M, 2) undirected, a < b, sorted

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    def edge_set(self, name: str) -> np.ndarray:
        """Directed edges of one set as an (K, 2) array of (src, dst)."""
        lo, hi = self.set_ranges[name]
        return np.stack([self.src[lo:hi], self.dst[lo:hi]], axis=1)


def _local_edge_parts(height: int, width: int, connectivity: Connectivity):
    """Return {set name: (src, dst)} int32 arrays in sweep processing order."""
    h, w = height, width
    diag = connectivity is Connectivity.EIGHT
    row_deltas = (-1, 0, 1) if diag else (0,)

    def horizontal(dcol: int):
        parts = []
        tr, tc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tr, tc = tr.ravel(), tc.ravel()
        for dr in row_deltas:
            sr, sc = tr + dr, tc - dcol
            ok = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
            parts.append((sr[ok] * w + sc[ok], tr[ok], tc[ok]))
        s = np.concatenate([p[0] for p in parts])
        trr = np.concatenate([p[1] for p in parts])
        tcc = np.concatenate([p[2] for p in parts])
        line_key = tcc if dcol > 0 else -tcc  # sweep line order
        order = np.lexsort((s, trr, line_key))
        return s[order].astype(np.int32), (trr[order] * w + tcc[order]).astype(np.int32)

    def vertical(drow: int):
        tr, tc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tr, tc = tr.ravel(), tc.ravel()
        sr, sc = tr - drow, tc
        ok = (sr >= 0) & (sr < h)
        sr, tr, tc = sr[ok], tr[ok], tc[ok]
        line_key = tr if drow > 0 else -tr
        order = np.lexsort((tc, line_key))
        return (sr[order] * w + tc[order]).astype(np.int32), (
            tr[order] * w + tc[order]
        ).astype(np.int32)

    return {
        "LR": horizontal(+1),
        "TB": vertical(+1),
        "RL": horizontal(-1),
        "BT": vertical(-1),
    }


def _compute_reverse_index(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = int(max(src.max(initial=0), dst.max(initial=0))) + 1 if src.size else 1
    keys = src.astype(np.int64) * n + dst.astype(np.int64)
    order = np.argsort(keys)
    rev_keys = dst.astype(np.int64) * n + src.astype(np.int64)
    pos = np.searchsorted(keys[order], rev_keys)
    rev = order[pos].astype(np.int32)
    if src.size and not np.array_equal(keys[rev], rev_keys):
        raise ValueError("edge set is not symmetric: some reverse edge is missing")
    return rev


def _assemble(height, width, connectivity, nl_pairs: np.ndarray) -> GridGraph:
    parts = _local_edge_parts(height, width, connectivity)
    srcs, dsts, ranges = [], [], {}
    offset = 0
    for name in SWEEP_ORDER:
        s, d = parts[name]
        ranges[name] = (offset, offset + s.shape[0])
        offset += s.shape[0]
        srcs.append(s)
        dsts.append(d)
    a, b = nl_pairs[:, 0], nl_pairs[:, 1]
    nl_src = np.stack([a, b], axis=1).ravel().astype(np.int32)
    nl_dst = np.stack([b, a], axis=1).ravel().astype(np.int32)
    ranges["NL"] = (offset, offset + nl_src.shape[0])
    srcs.append(nl_src)
    dsts.append(nl_dst)
    src = np.concatenate(srcs) if srcs else np.empty(0, np.int32)
    dst = np.concatenate(dsts) if dsts else np.empty(0, np.int32)
    rev = _compute_reverse_index(src, dst)
    return GridGraph(height, width, connectivity, src, dst, ranges, rev, nl_pairs)


def build_local_edges(
    height: int, width: int, connectivity: Connectivity = Connectivity.FOUR
) -> GridGraph:
    """Construct the lattice graph with the four directional local edge sets."""
    if height < 1 or width < 1:
        raise DimensionError(f"grid dimensions must be positive, got {height}x{width}")
    connectivity = Connectivity(connectivity)
    return _assemble(height, width, connectivity, np.empty((0, 2), dtype=np.int32))


def propose_nonlocal_edges(
    guide: DepthGrid,
    k: int,
    search_radius: int,
    patch_radius: int,
    min_distance: int = 2,
) -> np.ndarray:
    """Pick up to k distant partners per pixel by patch similarity.

    Candidates are the in-bounds pixels of the square search window at
    Chebyshev distance >= min_distance. The score is the mean squared
    difference between the two patches (patch coordinates clamped at the
    image border), smaller is better, ties broken by row-major scan order
    of the candidate. Returns an (N, k) int32 array of flat partner
    indices, -1 where fewer than k candidates exist.
    """
    if k < 0:
        raise ParameterError("k must be >= 0")
    if min_distance < 2:
        raise ParameterError("min_distance must be >= 2 (partners are non-local)")
    if search_radius < min_distance:
        raise ParameterError("search_radius must be >= min_distance")
    if patch_radius < 0:
        raise ParameterError("patch_radius must be >= 0")

    h, w = guide.height, guide.width
    n = h * w
    if k == 0:
        return np.empty((n, 0), dtype=np.int32)

    g = guide.channel_stack()
    rows = np.arange(h)
    cols = np.arange(w)

    def shifted(dr: int, dc: int) -> np.ndarray:
        return g[np.clip(rows + dr, 0, h - 1)][:, np.clip(cols + dc, 0, w - 1)]

    patch_offsets = [
        (du, dv)
        for du in range(-patch_radius, patch_radius + 1)
        for dv in range(-patch_radius, patch_radius + 1)
    ]
    base_patches = {u: shifted(*u) for u in patch_offsets}

    # Candidate offsets in row-major order; for a fixed pixel this equals
    # row-major order of the candidate itself, which settles ties.
    cand_offsets = [
        (dr, dc)
        for dr in range(-search_radius, search_radius + 1)
        for dc in range(-search_radius, search_radius + 1)
        if max(abs(dr), abs(dc)) >= min_distance
    ]

    n_cand = len(cand_offsets)
    scores = np.empty((n_cand, h, w), dtype=np.float64)
    cand_idx = np.empty((n_cand, h, w), dtype=np.int64)
    rr = rows[:, None]
    cc = cols[None, :]
    for ci, (dr, dc) in enumerate(cand_offsets):
        acc = np.zeros((h, w), dtype=np.float64)
        for u in patch_offsets:
            diff = base_patches[u] - shifted(dr + u[0], dc + u[1])
            acc += np.sum(diff * diff, axis=2)
        acc /= len(patch_offsets) * g.shape[2]
        in_bounds = (rr + dr >= 0) & (rr + dr < h) & (cc + dc >= 0) & (cc + dc < w)
        scores[ci] = np.where(in_bounds, acc, np.inf)
        cand_idx[ci] = (rr + dr) * w + (cc + dc)

    scores = scores.reshape(n_cand, n)
    cand_idx = cand_idx.reshape(n_cand, n)
    take = min(k, n_cand)
    order = np.argsort(scores, axis=0, kind="stable")[:take]
    picked = np.take_along_axis(cand_idx, order, axis=0)
    picked_scores = np.take_along_axis(scores, order, axis=0)
    partners = np.where(np.isfinite(picked_scores), picked, -1).T.astype(np.int32)
    if take < k:
        pad = np.full((n, k - take), -1, dtype=np.int32)
        partners = np.concatenate([partners, pad], axis=1)
    return partners


def subset_edges(graph: GridGraph, keep: np.ndarray) -> GridGraph:
    """Graph restricted to a symmetric subset of its directed edges.

    ``keep`` is a boolean mask over directed edges and must select both
    directions of every undirected edge. Relative edge order (and hence
    sweep processing order) is preserved.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (graph.n_edges,):
        raise DimensionError("keep mask must cover every directed edge")
    if not np.array_equal(keep[graph.rev], keep):
        raise ValueError("keep mask must be symmetric across edge directions")
    src, dst = graph.src[keep], graph.dst[keep]
    ranges = {}
    offset = 0
    for name in (*SWEEP_ORDER, "NL"):
        lo, hi = graph.set_ranges[name]
        cnt = int(np.count_nonzero(keep[lo:hi]))
        ranges[name] = (offset, offset + cnt)
        offset += cnt
    nl_lo, nl_hi = graph.set_ranges["NL"]
    nl_keep = keep[nl_lo:nl_hi:2]
    pairs = graph.nonlocal_pairs[nl_keep] if graph.nonlocal_pairs.size else graph.nonlocal_pairs
    return GridGraph(
        graph.height, graph.width, graph.connectivity,
        src, dst, ranges, _compute_reverse_index(src, dst), pairs,
    )


def with_nonlocal_pairs(graph: GridGraph, pairs: np.ndarray) -> GridGraph:
    """Rebuild the graph with the given undirected non-local pairs.

    Pairs may arrive in any orientation; they are canonicalized to
    (min, max), deduplicated and sorted. Each pair yields both directed
    edges.
    """
    h, w = graph.height, graph.width
    n = h * w
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return _assemble(h, w, graph.connectivity, np.empty((0, 2), dtype=np.int32))
    if np.any(pairs < 0) or np.any(pairs >= n):
        raise ValueError("non-local pair index out of bounds")
    a, b = pairs[:, 0], pairs[:, 1]
    cheb = np.maximum(np.abs(a // w - b // w), np.abs(a % w - b % w))
    if np.any(cheb <= 1):
        raise ValueError("non-local partners must be at Chebyshev distance > 1")
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    canon = np.unique(np.stack([lo, hi], axis=1), axis=0).astype(np.int32)
    return _assemble(h, w, graph.connectivity, canon)


def attach_nonlocal(graph: GridGraph, partners: np.ndarray) -> GridGraph:
    """Rebuild the graph with the symmetric closure of the proposed partners.

    Every (pixel, partner) selection becomes an undirected pair carried in
    both directions; duplicate selections collapse.
    """
    n = graph.n_pixels
    if partners.shape[0] != n:
        raise DimensionError("partner table does not match the graph's pixel count")
    pix = np.repeat(np.arange(n, dtype=np.int64), partners.shape[1])
    part = partners.astype(np.int64).ravel()
    ok = part >= 0
    pairs = np.stack([pix[ok], part[ok]], axis=1)
    return with_nonlocal_pairs(graph, pairs)
