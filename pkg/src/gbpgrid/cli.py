"""Command-line front door.

Subcommands: complete, oracle, sample, eval, sweep-density, synth.
Numeric options can come from a flat key=value config file (--config);
explicit flags override file values. ``complete`` and ``oracle`` echo
their effective config to stdout in the same key=value format, so a
captured echo reproduces the run. Exit codes: 0 success, 1 usage,
2 I/O or data error, 3 numerical (singular system).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import engine, grid, io, metrics, oracle, potentials, synth
from .errors import (
    FileFormatError,
    GbpGridError,
    ParameterError,
    SingularSystemError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

GUIDE_PGM_SCALE = 1.0 / 65535.0  # 16-bit guides normalize to [0, 1]


@dataclass
class RunConfig:
    """Every numeric knob of a run; field names double as config-file keys."""

    iterations: int = 5
    nonlocal_steps: int = 1
    epsilon_cavity: float = engine.DEFAULT_EPSILON_CAVITY
    early_stop_tol: float | None = None
    w_meas: float = potentials.DEFAULT_W_MEAS
    lambda_smooth: float = potentials.DEFAULT_LAMBDA_SMOOTH
    sigma_color: float = potentials.DEFAULT_SIGMA_COLOR
    w_min: float = potentials.DEFAULT_W_MIN
    beta_const: float = potentials.DEFAULT_BETA
    connectivity: int = 8
    k_nonlocal: int = 2
    search_radius: int = 5
    patch_radius: int = 1
    min_distance: int = 2
    pgm_scale: float = 1.0 / 256.0
    seed: int = 0

    def solver_config(self, record_trace: bool = False) -> engine.SolverConfig:
        return engine.SolverConfig(
            iterations=self.iterations,
            nonlocal_steps=self.nonlocal_steps,
            epsilon_cavity=self.epsilon_cavity,
            early_stop_tol=self.early_stop_tol,
            record_trace=record_trace,
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}=" + ("none" if v is None else repr(v)))
        return "\n".join(lines) + "\n"


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_config_value(name: str, raw: str):
    if name not in _CONFIG_FIELDS:
        raise ParameterError(f"unknown config key {name!r}")
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if _CONFIG_FIELDS[name].type in ("int", int):
        return int(raw)
    return float(raw)


def read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="ascii") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{ln}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = _parse_config_value(key.strip(), raw)
    return values


def build_run_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _CONFIG_FIELDS:
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            values[name] = cli_val
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# input loading

def load_guide(path) -> io.DepthGrid:
    path = str(path)
    if path.endswith(".pfm"):
        return io.read_pfm(path)
    if path.endswith(".pgm"):
        return io.read_pgm(path, scale=GUIDE_PGM_SCALE)
    raise FileFormatError(f"{path}: guide must be .pfm or .pgm")


def load_depth(path, cfg: RunConfig, height: int | None = None, width: int | None = None) -> io.DepthGrid:
    path = str(path)
    if path.endswith(".csv"):
        if height is None or width is None:
            raise FileFormatError(f"{path}: CSV input needs a guide to fix dimensions")
        return io.read_sparse_csv(path, height, width)
    if path.endswith(".pfm"):
        return io.read_pfm(path)
    if path.endswith(".pgm"):
        return io.read_pgm(path, scale=cfg.pgm_scale)
    raise FileFormatError(f"{path}: depth input must be .csv, .pfm or .pgm")


def build_graph(guide: io.DepthGrid, cfg: RunConfig) -> grid.GridGraph:
    g = grid.build_local_edges(
        guide.height, guide.width, grid.Connectivity(cfg.connectivity)
    )
    if cfg.k_nonlocal > 0:
        partners = grid.propose_nonlocal_edges(
            guide,
            k=cfg.k_nonlocal,
            search_radius=cfg.search_radius,
            patch_radius=cfg.patch_radius,
            min_distance=cfg.min_distance,
        )
        g = grid.attach_nonlocal(g, partners)
    return g


def build_params(guide, sparse, g, cfg: RunConfig) -> potentials.MrfParams:
    return potentials.params_from_guide(
        guide, sparse, g,
        w_meas=cfg.w_meas,
        lambda_smooth=cfg.lambda_smooth,
        sigma_color=cfg.sigma_color,
        w_min=cfg.w_min,
        beta_const=cfg.beta_const,
    )


def build_scene(guide: io.DepthGrid, sparse: io.DepthGrid, cfg: RunConfig):
    g = build_graph(guide, cfg)
    return g, build_params(guide, sparse, g, cfg)


def _belief_grids(beliefs: engine.BeliefMap) -> tuple[io.DepthGrid, io.DepthGrid]:
    lam = beliefs.precision()
    mu = beliefs.mean()
    mask = lam > 0
    mu = np.where(mask, mu, 0.0)
    return io.DepthGrid(mu, mask), io.DepthGrid(lam)


# ---------------------------------------------------------------------------
# subcommands

def cmd_complete(args) -> int:
    cfg = build_run_config(args)
    guide = load_guide(args.guide)
    sparse = load_depth(args.sparse, cfg, guide.height, guide.width)
    g, params = build_scene(guide, sparse, cfg)
    result = engine.run(params, g, cfg.solver_config(record_trace=args.trace))
    mu_grid, lam_grid = _belief_grids(result.beliefs)
    io.write_pfm(mu_grid, args.out_mu)
    if args.out_lambda:
        io.write_pfm(lam_grid, args.out_lambda)
    sys.stdout.write(cfg.to_text())
    if args.dump_config:
        with open(args.dump_config, "w", encoding="ascii") as f:
            f.write(cfg.to_text())
    if result.trace:
        for row in result.trace:
            sys.stderr.write(row.format() + "\n")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = build_run_config(args)
    guide = load_guide(args.guide)
    sparse = load_depth(args.sparse, cfg, guide.height, guide.width)
    g, params = build_scene(guide, sparse, cfg)
    system = oracle.assemble_system(params, g)
    mu = oracle.solve_exact(system)
    io.write_pfm(io.DepthGrid(mu.reshape(guide.height, guide.width)), args.out_mu)
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = build_run_config(args)
    gt = load_depth(args.gt, cfg)
    sampled = io.sample_sparse(gt, args.n_points, cfg.seed)
    io.write_sparse_csv(sampled, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_run_config(args)
    pred = io.read_pfm(args.pred_mu)
    lam = io.read_pfm(args.pred_lambda) if args.pred_lambda else None
    gt = load_depth(args.gt, cfg)
    thetas = tuple(float(t) for t in args.thetas.split(","))
    report = metrics.evaluate(pred, lam, gt, thetas=thetas, alpha=args.alpha)
    print(report.to_json() if args.json else report.to_text())
    return EXIT_OK


def cmd_sweep_density(args) -> int:
    cfg = build_run_config(args)
    guide = load_guide(args.guide)
    gt = load_depth(args.gt, cfg)
    counts = [int(c) for c in args.point_counts.split(",")]
    thetas = tuple(float(t) for t in args.thetas.split(","))

    header = ["points", "rmse", "mae", "irmse", "imae", "rel"]
    header += [f"delta_{t:g}" for t in thetas] + ["nll"]
    print("\t".join(header))
    solver_cfg = cfg.solver_config()
    g = build_graph(guide, cfg)
    for n_points in counts:
        reports = []
        for i in range(args.seeds):
            sparse = io.sample_sparse(gt, n_points, cfg.seed + i)
            params = build_params(guide, sparse, g, cfg)
            result = engine.run(params, g, solver_cfg)
            mu_grid, lam_grid = _belief_grids(result.beliefs)
            reports.append(
                metrics.evaluate(mu_grid, lam_grid, gt, thetas=thetas, alpha=args.alpha)
            )
        agg = metrics.aggregate(reports)
        row = [str(n_points)] + [
            f"{v:.6g}" for v in (agg.rmse, agg.mae, agg.irmse, agg.imae, agg.rel)
        ]
        row += [f"{agg.delta[float(t)]:.6g}" for t in thetas]
        row.append(f"{agg.nll:.6g}" if agg.nll is not None else "nan")
        print("\t".join(row))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = build_run_config(args)
    gt, guide = synth.piecewise_planar_scene(
        args.height, args.width, cfg.seed, n_cuts=args.n_cuts
    )
    io.write_pfm(gt, args.out_gt)
    io.write_pfm(guide, args.out_guide)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    g = p.add_argument_group("run configuration (override config file)")
    g.add_argument("--iterations", type=int)
    g.add_argument("--nonlocal-steps", dest="nonlocal_steps", type=int)
    g.add_argument("--epsilon-cavity", dest="epsilon_cavity", type=float)
    g.add_argument("--early-stop-tol", dest="early_stop_tol", type=float)
    g.add_argument("--w-meas", dest="w_meas", type=float)
    g.add_argument("--lambda-smooth", dest="lambda_smooth", type=float)
    g.add_argument("--sigma-color", dest="sigma_color", type=float)
    g.add_argument("--w-min", dest="w_min", type=float)
    g.add_argument("--beta-const", dest="beta_const", type=float)
    g.add_argument("--connectivity", type=int, choices=(4, 8))
    g.add_argument("--k-nonlocal", dest="k_nonlocal", type=int)
    g.add_argument("--search-radius", dest="search_radius", type=int)
    g.add_argument("--patch-radius", dest="patch_radius", type=int)
    g.add_argument("--min-distance", dest="min_distance", type=int)
    g.add_argument("--pgm-scale", dest="pgm_scale", type=float)
    g.add_argument("--seed", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="gbpgrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="dense depth posterior from guide + sparse depth")
    p.add_argument("--guide", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--out-mu", dest="out_mu", required=True)
    p.add_argument("--out-lambda", dest="out_lambda")
    p.add_argument("--trace", action="store_true", help="per-iteration trace on stderr")
    p.add_argument("--dump-config", dest="dump_config")
    _add_config_options(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("oracle", help="exact posterior mean for the same MRF")
    p.add_argument("--guide", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--out-mu", dest="out_mu", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sample", help="random sparse sample from a dense depth map")
    p.add_argument("--gt", required=True)
    p.add_argument("--n-points", dest="n_points", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a prediction against ground truth")
    p.add_argument("--pred-mu", dest="pred_mu", required=True)
    p.add_argument("--pred-lambda", dest="pred_lambda")
    p.add_argument("--gt", required=True)
    p.add_argument("--thetas", default="1.02,1.05,1.25")
    p.add_argument("--alpha", type=float, default=metrics.DEFAULT_ALPHA)
    p.add_argument("--json", action="store_true")
    _add_config_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-density", help="metrics vs sparsity level table")
    p.add_argument("--gt", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--point-counts", dest="point_counts", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--thetas", default="1.02,1.05,1.25")
    p.add_argument("--alpha", type=float, default=metrics.DEFAULT_ALPHA)
    _add_config_options(p)
    p.set_defaults(func=cmd_sweep_density)

    p = sub.add_parser("synth", help="generate a piecewise-planar test scene")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--n-cuts", dest="n_cuts", type=int, default=4)
    p.add_argument("--out-gt", dest="out_gt", required=True)
    p.add_argument("--out-guide", dest="out_guide", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_thread_cap() -> None:
    cap = os.environ.get("GBPN_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SingularSystemError as exc:
        sys.stderr.write(f"gbpgrid: numerical error: {exc}\n")
        return EXIT_NUMERICAL
    except (OSError, GbpGridError, ValueError) as exc:
        sys.stderr.write(f"gbpgrid: error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
