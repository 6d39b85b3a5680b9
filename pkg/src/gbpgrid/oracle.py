"""Exact inference reference via the information-form linear system.

The scene MRF is a joint Gaussian in canonical form; its mean solves
``J mu = eta`` where J collects measurement weights on the diagonal and
pairwise couplings off-diagonal. This module assembles that system,
solves it directly (sparse factorization at desk scale, preconditioned
conjugate gradients beyond), and exposes exact per-pixel marginal
precisions for small instances.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import SingularSystemError
from .grid import GridGraph
from .potentials import MrfParams

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

DIRECT_SOLVE_MAX = 16384
DENSE_INVERSE_MAX = 4096

# BLAS pools hurt badly on the small dense factorizations used here
_SINGLE_THREAD_MAX = 100_000


def _blas_limit(n: int):
    if threadpool_limits is not None and n * n <= _SINGLE_THREAD_MAX:
        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


@dataclass
class InformationSystem:
    """Sparse SPD system J mu = eta over the flattened pixel grid."""

    J: sp.csr_matrix
    eta_vec: np.ndarray

    @property
    def n(self) -> int:
        return self.eta_vec.shape[0]


def assemble_system(params: MrfParams, graph: GridGraph) -> InformationSystem:
    """Quadratic expansion of the unary and pairwise potentials.

    Each undirected edge contributes one coupling term; the directed
    store is deduplicated by keeping the src < dst orientation. For that
    orientation with residual r = expected(x_dst - x_src), the energy
    ``w/2 (x_dst - x_src - r)^2`` loads +w*r onto dst and -w*r onto src.
    """
    n = graph.n_pixels
    w_unary = params.w_unary.ravel()
    eta = w_unary * params.s.ravel()

    keep = graph.src < graph.dst
    s = graph.src[keep].astype(np.int64)
    d = graph.dst[keep].astype(np.int64)
    w = params.w_pair[keep]
    r = params.r_pair[keep]

    diag = w_unary.copy()
    np.add.at(diag, s, w)
    np.add.at(diag, d, w)
    np.subtract.at(eta, s, w * r)
    np.add.at(eta, d, w * r)

    rows = np.concatenate([np.arange(n), s, d])
    cols = np.concatenate([np.arange(n), d, s])
    vals = np.concatenate([diag, -w, -w])
    J = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return InformationSystem(J, eta)


def _diagnose_unanchored(J: sp.csr_matrix) -> str | None:
    """Find a connected component whose pixels all lack measurement weight.

    The unary weight of pixel i is recoverable as the i-th row sum of J
    (couplings cancel); a component where every row sum vanishes has a
    flat direction.
    """
    n = J.shape[0]
    row_sums = np.asarray(J @ np.ones(n))
    scale = np.maximum(J.diagonal(), 1.0)
    anchored_pix = row_sums > 1e-9 * scale
    off = J - sp.diags(J.diagonal())
    n_comp, labels = connected_components(off, directed=False)
    anchored = np.zeros(n_comp, dtype=bool)
    anchored[labels[anchored_pix]] = True
    if anchored.all():
        return None
    comp = int(np.flatnonzero(~anchored)[0])
    members = np.flatnonzero(labels == comp)
    return (
        f"component of {members.size} pixel(s) starting at flat index "
        f"{int(members[0])} has no measurement anchor"
    )


def solve_exact(sys: InformationSystem, tol: float = 1e-10) -> np.ndarray:
    """Solve J mu = eta with a certified residual.

    Uses a direct sparse LU for n <= 16384 and Jacobi-preconditioned CG
    above. The returned solution satisfies
    ``max|J mu - eta| <= tol * (1 + max|eta|)``; anything else raises a
    singularity error that names an unanchored component when one exists.
    """
    J, eta = sys.J, sys.eta_vec
    n = sys.n

    def fail(detail: str):
        diag = _diagnose_unanchored(J)
        raise SingularSystemError(diag if diag is not None else detail)

    unanchored = _diagnose_unanchored(J)
    if unanchored is not None:
        raise SingularSystemError(unanchored)
    if np.any(J.diagonal() <= 0):
        fail("system has a non-positive diagonal entry")
    mu = None
    if n <= DIRECT_SOLVE_MAX:
        try:
            with _blas_limit(n):
                mu = spla.splu(J.tocsc()).solve(eta)
        except RuntimeError as exc:
            fail(f"sparse factorization failed: {exc}")
    else:
        d = 1.0 / J.diagonal()
        M = spla.LinearOperator((n, n), matvec=lambda x: d * x)
        mu, info = spla.cg(J, eta, rtol=tol / 10, atol=0.0, M=M, maxiter=50 * n)
        if info != 0:
            fail(f"conjugate gradients did not converge (info={info})")
    resid = np.max(np.abs(J @ mu - eta), initial=0.0)
    bound = tol * (1.0 + np.max(np.abs(eta), initial=0.0))
    if not np.isfinite(resid) or resid > bound:
        fail(f"solution residual {resid:.3e} exceeds bound {bound:.3e}")
    return mu


def exact_marginal_precisions(sys: InformationSystem) -> np.ndarray:
    """Per-pixel marginal precision 1 / (J^-1)_ii, dense inverse at desk scale."""
    if sys.n > DENSE_INVERSE_MAX:
        raise ValueError(
            f"exact marginal precisions limited to n <= {DENSE_INVERSE_MAX}, got {sys.n}"
        )
    unanchored = _diagnose_unanchored(sys.J)
    if unanchored is not None:
        raise SingularSystemError(unanchored)
    dense = sys.J.toarray()
    with _blas_limit(sys.n):
        try:
            L = np.linalg.cholesky(dense)
        except np.linalg.LinAlgError:
            raise SingularSystemError("system is not positive definite") from None
        Linv = scipy.linalg.solve_triangular(L, np.eye(sys.n), lower=True)
    return 1.0 / np.sum(Linv * Linv, axis=0)


def energy(sys: InformationSystem, x: np.ndarray) -> float:
    """Quadratic energy 0.5 x'Jx - eta'x whose minimizer is the exact mean."""
    return float(0.5 * x @ (sys.J @ x) - sys.eta_vec @ x)
