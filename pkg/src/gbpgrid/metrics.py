"""Evaluation metrics and the probability-weighted error diagnostic.

All metrics are computed per sample over the pixels that carry valid
ground truth (and a valid prediction), then averaged across samples by
``aggregate`` -- mean of per-sample values, not a pooled recomputation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .io import DepthGrid

DEFAULT_THETAS = (1.02, 1.05, 1.25)
DEFAULT_ALPHA = 0.5


@dataclass
class EvalReport:
    rmse: float
    mae: float
    irmse: float
    imae: float
    rel: float
    delta: dict[float, float] = field(default_factory=dict)
    nll: float | None = None
    n_valid: int = 0

    def to_text(self) -> str:
        lines = [
            f"rmse={self.rmse:.9g}",
            f"mae={self.mae:.9g}",
            f"irmse={self.irmse:.9g}",
            f"imae={self.imae:.9g}",
            f"rel={self.rel:.9g}",
        ]
        for theta in sorted(self.delta):
            lines.append(f"delta_{theta:g}={self.delta[theta]:.9g}")
        if self.nll is not None:
            lines.append(f"nll={self.nll:.9g}")
        lines.append(f"n_valid={self.n_valid}")
        return "\n".join(lines)

    def to_json(self) -> str:
        d = {
            "rmse": self.rmse,
            "mae": self.mae,
            "irmse": self.irmse,
            "imae": self.imae,
            "rel": self.rel,
            "delta": {f"{k:g}": v for k, v in sorted(self.delta.items())},
            "nll": self.nll,
            "n_valid": self.n_valid,
        }
        return json.dumps(d, indent=2)


def evaluate(
    pred_mu: DepthGrid,
    pred_lambda: DepthGrid | None,
    gt: DepthGrid,
    thetas: tuple[float, ...] = DEFAULT_THETAS,
    alpha: float = DEFAULT_ALPHA,
) -> EvalReport:
    """Single-sample evaluation of a depth prediction against ground truth.

    When a precision map is supplied, the report also carries the
    probability-weighted diagnostic
    ``mean(lambda_i * Lx_i - log(lambda_i))`` with the per-pixel error
    ``Lx_i = (err^2 + alpha*|err|) / max|err|`` normalized by the largest
    absolute error of the sample (zero if the prediction is perfect).
    """
    if pred_mu.data.shape != gt.data.shape:
        raise DimensionError(
            f"prediction {pred_mu.data.shape} does not match ground truth {gt.data.shape}"
        )
    ok = gt.valid_mask & pred_mu.valid_mask
    n = int(ok.sum())
    if n == 0:
        raise ValueError("no pixel carries both valid ground truth and prediction")

    x = pred_mu.data[ok]
    g = gt.data[ok]
    err = g - x
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    rel = float(np.mean(np.abs(err) / g))

    pos = (x > 0) & (g > 0)
    if not np.all(pos):
        warnings.warn(
            f"{int((~pos).sum())} pixel(s) with non-positive depth skipped for "
            "inverse metrics"
        )
    if pos.any():
        ierr = 1.0 / g[pos] - 1.0 / x[pos]
        irmse = float(np.sqrt(np.mean(ierr * ierr)))
        imae = float(np.mean(np.abs(ierr)))
    else:
        irmse = imae = float("nan")

    delta = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(g / x, x / g)
    for theta in thetas:
        delta[float(theta)] = float(np.mean(pos & (ratio < theta)))

    nll = None
    if pred_lambda is not None:
        if pred_lambda.data.shape != gt.data.shape:
            raise DimensionError("precision map does not match ground truth shape")
        lam = pred_lambda.data[ok]
        if np.any(lam <= 0):
            raise ValueError("precision must be positive on evaluated pixels")
        max_l1 = float(np.max(np.abs(err)))
        if max_l1 == 0.0:
            lx = np.zeros_like(err)
        else:
            lx = (err * err + alpha * np.abs(err)) / max_l1
        nll = float(np.mean(lam * lx - np.log(lam)))

    return EvalReport(
        rmse=rmse, mae=mae, irmse=irmse, imae=imae, rel=rel,
        delta=delta, nll=nll, n_valid=n,
    )


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Unweighted mean of per-sample reports; valid-pixel counts are summed."""
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    keys = set(reports[0].delta)
    if any(set(r.delta) != keys for r in reports):
        raise ValueError("reports carry different delta thresholds")

    def mean(vals):
        return float(np.mean(vals))

    nlls = [r.nll for r in reports]
    return EvalReport(
        rmse=mean([r.rmse for r in reports]),
        mae=mean([r.mae for r in reports]),
        irmse=mean([r.irmse for r in reports]),
        imae=mean([r.imae for r in reports]),
        rel=mean([r.rel for r in reports]),
        delta={k: mean([r.delta[k] for r in reports]) for k in keys},
        nll=mean(nlls) if all(v is not None for v in nlls) else None,
        n_valid=sum(r.n_valid for r in reports),
    )
