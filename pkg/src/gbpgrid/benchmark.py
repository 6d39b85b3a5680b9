"""Benchmark the compiled kernels against the pure-Python fallback.

Run with ``python -m gbpgrid.benchmark``. Times full solver runs on
synthetic scenes at a few sizes and reports the speedup; also verifies
that both backends produce identical results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import engine, grid, io, potentials, synth


def _scene(height: int, width: int, seed: int = 7):
    gt, guide = synth.piecewise_planar_scene(height, width, seed)
    sparse = io.sample_sparse(gt, max(50, gt.n_valid // 40), seed)
    g = grid.build_local_edges(height, width, grid.Connectivity.EIGHT)
    partners = grid.propose_nonlocal_edges(
        guide, k=2, search_radius=5, patch_radius=1, min_distance=2
    )
    g = grid.attach_nonlocal(g, partners)
    params = potentials.params_from_guide(guide, sparse, g)
    return g, params


def _time_run(params, g, cfg, backend: str, repeats: int) -> tuple[float, engine.RunResult]:
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = engine.run(params, g, cfg, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="64x80,128x160,256x320")
    parser.add_argument("--iterations", type=int, default=5)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)

    try:
        engine.get_kernels("compiled")
    except ImportError:
        print("compiled backend not built; run pip install -e . --no-build-isolation")
        return 1

    cfg = engine.SolverConfig(iterations=args.iterations, nonlocal_steps=1)
    print(f"{'size':>10} {'edges':>9} {'python (s)':>12} {'compiled (s)':>13} {'speedup':>8}")
    for size in args.sizes.split(","):
        h, w = (int(v) for v in size.split("x"))
        g, params = _scene(h, w)
        t_py, res_py = _time_run(params, g, cfg, "python", args.repeats)
        t_c, res_c = _time_run(params, g, cfg, "compiled", args.repeats)
        identical = np.array_equal(res_py.beliefs.eta, res_c.beliefs.eta) and np.array_equal(
            res_py.beliefs.lam, res_c.beliefs.lam
        )
        mark = "" if identical else "  [MISMATCH]"
        print(
            f"{h}x{w:>5} {g.n_edges:>9} {t_py:>12.4f} {t_c:>13.4f} "
            f"{t_py / t_c:>7.1f}x{mark}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
