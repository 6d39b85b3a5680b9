"""Shared instance generators for the unit and acceptance suites."""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import minimum_spanning_tree

from gbpgrid import engine, grid, potentials
from gbpgrid.io import DepthGrid


def random_chain_graph(rng) -> grid.GridGraph:
    """Random 1xN or Nx1 chain, N in [2, 256]."""
    n = int(rng.integers(2, 257))
    if rng.uniform() < 0.5:
        return grid.build_local_edges(1, n, grid.Connectivity.FOUR)
    return grid.build_local_edges(n, 1, grid.Connectivity.FOUR)


def random_tree_graph(rng, height: int, width: int) -> grid.GridGraph:
    """Random spanning tree drawn from the 4-connected lattice edges."""
    g = grid.build_local_edges(height, width, grid.Connectivity.FOUR)
    und = g.src < g.dst
    s, d = g.src[und], g.dst[und]
    n = height * width
    weights = rng.uniform(0.5, 1.5, s.size)
    mst = minimum_spanning_tree(
        sp.coo_matrix((weights, (s, d)), shape=(n, n))
    ).tocoo()
    tree = set(zip(mst.row.tolist(), mst.col.tolist()))
    tree |= {(b, a) for a, b in tree}
    keep = np.fromiter(
        ((a, b) in tree for a, b in zip(g.src.tolist(), g.dst.tolist())),
        dtype=bool, count=g.n_edges,
    )
    return grid.subset_edges(g, keep)


def random_params(rng, g: grid.GridGraph, meas_frac: float = 0.3,
                  beta: float = 0.0) -> potentials.MrfParams:
    """Random valid parameters: w_unary, w_pair in [0.1, 10], r in [-1, 1]."""
    h, w = g.height, g.width
    mask = rng.uniform(size=(h, w)) < meas_frac
    if not mask.any():
        mask.flat[int(rng.integers(h * w))] = True
    w_unary = np.where(mask, rng.uniform(0.1, 10.0, (h, w)), 0.0)
    s = np.where(mask, rng.uniform(-2.0, 2.0, (h, w)), 0.0)
    und = g.src < g.dst
    w_pair = np.empty(g.n_edges)
    r_pair = np.empty(g.n_edges)
    w_pair[und] = rng.uniform(0.1, 10.0, int(und.sum()))
    r_pair[und] = rng.uniform(-1.0, 1.0, int(und.sum()))
    w_pair[g.rev[und]] = w_pair[und]
    r_pair[g.rev[und]] = -r_pair[und]
    return potentials.MrfParams(
        s=s, measurement_mask=mask, w_unary=w_unary,
        w_pair=w_pair, r_pair=r_pair, beta=np.full((h, w), beta),
    )


def spread_measurement_mask(rng, height: int, width: int, frac: float = 0.10):
    """Measurement mask with a stratified lattice layer plus random extras.

    The lattice layer keeps every pixel close to an anchor, which bounds
    the solver's slowest diffusion mode; the extras keep the draw random.
    """
    mask = np.zeros((height, width), dtype=bool)
    mask[2::4, 2::4] = True
    n_extra = round(height * width * frac) - int(mask.sum())
    free = np.flatnonzero(~mask.ravel())
    mask.flat[rng.choice(free, size=n_extra, replace=False)] = True
    return mask


def loopy_guide_instance(seed: int, height: int = 16, width: int = 16):
    """Well-mixed random scene: low-contrast guide, long-range non-local
    partners, stratified 10% measurements, stiff measurement anchors.

    Built entirely from params_from_guide; converges to oracle means
    well within 100 damped iterations.
    """
    rng = np.random.default_rng(seed)
    g = grid.build_local_edges(height, width, grid.Connectivity.EIGHT)
    guide = DepthGrid(rng.uniform(0.4, 0.6, (height, width, 3)))
    partners = grid.propose_nonlocal_edges(
        guide, k=6, search_radius=14, patch_radius=1, min_distance=6
    )
    g = grid.attach_nonlocal(g, partners)
    mask = spread_measurement_mask(rng, height, width)
    values = rng.uniform(1.0, 5.0, (height, width))
    sparse = DepthGrid(np.where(mask, values, 0.0), mask)
    params = potentials.params_from_guide(
        guide, sparse, g, lambda_smooth=0.02, beta_const=0.3
    )
    return g, params


def run_to_message_fixed_point(params, g, tol: float = 1e-14, max_iters: int = 2000):
    """Iterate undamped sweeps until messages stop moving; returns the state."""
    msgs, beliefs = engine.init_state(params, g)
    for _ in range(max_iters):
        prev_eta = msgs.eta.copy()
        prev_lam = msgs.lam.copy()
        for direction in grid.SWEEP_ORDER:
            engine.serial_sweep(direction, msgs, beliefs, params, g)
        engine.parallel_nonlocal_step(msgs, beliefs, params, g)
        delta = max(
            np.max(np.abs(msgs.eta - prev_eta), initial=0.0),
            np.max(np.abs(msgs.lam - prev_lam), initial=0.0),
        )
        if delta < tol:
            return msgs, beliefs
    raise AssertionError(f"no message fixed point within {max_iters} iterations")
