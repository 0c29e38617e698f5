"""
Verification of k-tuples of scalar fields against the master equation

    (h^m_;pj h^n_;ik - h^m_;pk h^n_;ij) (A^-1)_mn = R_pijk,
    A_mn = delta_mn - h^m_;a h^n_;b g^ab,

with f = g - sum_t dh^t (x) dh^t required positive-definite.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chart_core import (
    ChartGrid,
    CurvatureBundle,
    MetricField,
    christoffel_field,
    field_norm,
    gradient,
    riemann,
)
from .errors import GridMismatch, SingularCouplingMatrix

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class KTupleCandidate:
    """k scalar fields on one grid; values has shape (k, *grid.shape)."""
    grid: ChartGrid
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == len(self.grid.shape):
            values = values[None]
        if values.shape[1:] != self.grid.shape or values.shape[0] < 1:
            raise GridMismatch(f"Candidate fields have shape {values.shape}, expected (k, *{self.grid.shape})")
        valid = np.ones(self.grid.shape, dtype=bool) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != self.grid.shape:
            raise GridMismatch("Candidate validity mask does not match the grid")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def k(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class KTupleResult:
    k: int
    residual: float
    relative_residual: float
    f_positive_definite: bool
    max_condition_number: float
    inverse_identity_residual: float
    valid_points: int


@dataclass(frozen=True, eq=False)
class CandidateDerivatives:
    grads: np.ndarray      # (*shape, k, a)
    hessians: np.ndarray   # (*shape, k, a, b)
    valid: np.ndarray


def covariant_hessians(metric: MetricField, candidate: KTupleCandidate, order: int = 2) -> CandidateDerivatives:
    """h^m_;a and h^m_;ab = d_b d_a h^m - Gamma^c_ab d_c h^m by finite differences."""
    grid = metric.grid
    if not grid.same_as(candidate.grid):
        raise GridMismatch("Candidate and metric live on different grids")
    fields = np.moveaxis(candidate.values, 0, -1)
    first, first_valid = gradient(fields, candidate.valid, grid, order)
    grads = np.swapaxes(first, -1, -2)
    second, valid = gradient(grads, first_valid, grid, order)
    gamma, gamma_valid = christoffel_field(metric, order)
    hessians = np.einsum("...bma->...mab", second) - np.einsum("...cab,...mc->...mab", gamma, grads)
    hessians = 0.5 * (hessians + np.swapaxes(hessians, -1, -2))
    return CandidateDerivatives(grads, hessians, valid & gamma_valid)


def verify_k_tuple(
    metric: MetricField,
    candidate: KTupleCandidate,
    order: int = 2,
    curvature: Optional[CurvatureBundle] = None,
    condition_limit: float = CONDITION_LIMIT,
) -> KTupleResult:
    """Residual of the master equation over interior points, plus the f > 0 flag."""
    derivs = covariant_hessians(metric, candidate, order)
    curvature = curvature if curvature is not None else riemann(metric, order)
    valid = derivs.valid & curvature.valid
    if not valid.any():
        raise GridMismatch("Candidate and curvature share no valid interior points")

    k = candidate.k
    ginv = metric.inverse()[valid]
    grads = derivs.grads[valid]
    hess = derivs.hessians[valid]
    coupling = np.eye(k) - np.einsum("pma,pnb,pab->pmn", grads, grads, ginv)
    conditions = np.linalg.cond(coupling)
    worst = float(np.max(conditions))
    if not np.isfinite(worst) or worst > condition_limit:
        raise SingularCouplingMatrix(f"Coupling matrix is singular (condition number {worst:.3g})")
    coupling_inv = np.linalg.inv(coupling)

    lhs = (
        np.einsum("xmpj,xnik,xmn->xpijk", hess, hess, coupling_inv)
        - np.einsum("xmpk,xnij,xmn->xpijk", hess, hess, coupling_inv)
    )
    target = curvature.riemann[valid]
    flat_valid = np.ones(len(lhs), dtype=bool)
    residual = field_norm(lhs - target, flat_valid)
    reference = field_norm(target, flat_valid)
    relative = residual / reference if reference > 0 else residual

    f = metric.values[valid] - np.einsum("pma,pmb->pab", grads, grads)
    positive = bool(np.min(np.linalg.eigvalsh(f)) > 0.0)
    with np.errstate(all="ignore"):
        predicted = np.eye(k) + np.einsum("pma,pab,pnb->pmn", grads, np.linalg.pinv(f), grads)
    identity_residual = float(np.max(np.abs(np.nan_to_num(predicted - coupling_inv, nan=np.inf))))

    logger.info("k = %d candidate: residual %.3g (relative %.3g), f positive %s", k, residual, relative, positive)
    return KTupleResult(k, residual, relative, positive, worst, identity_residual, int(valid.sum()))


def candidate_from_height(height, grid: ChartGrid) -> KTupleCandidate:
    """Wrap a reconstructed height field as a k = 1 candidate."""
    return KTupleCandidate(grid, np.nan_to_num(height.h)[None], height.valid)
