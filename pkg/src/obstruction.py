"""
Immersibility decision: curvature operator positivity, the Weyl part of
its logarithm, recovery of the second fundamental form Pi, and the Gauss
and Codazzi residuals of the recovered field.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .chart_core import (
    CurvatureBundle,
    PiEvaluator,
    MetricField,
    TensorField,
    analytic_curvature,
    covariant_derivative,
    field_norm,
    flatness_ratio,
    frame_components,
    orthonormal_frame,
    pointwise_map,
    relative_norm,
    riemann,
)
from .curvature_operator import (
    CurvatureOperator,
    curvature_part,
    decompose,
    frame_operator,
    sectional_curvature_bounds,
    unpack_operator,
)
from .errors import BoundaryStencil, GridMismatch, NotPositiveOperator, WeylObstruction
from .models import Tolerances, Verdict

logger = logging.getLogger(__name__)


@dataclass
class PiRecovery:
    pi: np.ndarray
    weyl_star_norm: np.ndarray


@dataclass
class ObstructionReport:
    verdict: Verdict
    tolerances: Tolerances
    curvature: CurvatureBundle
    weyl_star_norm: float = 0.0
    gauss_residual: Optional[float] = None
    codazzi_residual: Optional[float] = None
    min_operator_eigenvalue: Optional[float] = None
    conditioning: Optional[float] = None
    flatness: float = 0.0
    pi: Optional[TensorField] = None
    sectional_positive: Optional[bool] = None
    codimension_lower_bound: Optional[int] = None
    non_unique: bool = False
    surface_determinant_residual: Optional[float] = None
    notes: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Pointwise recovery
# ---------------------------------------------------------------------------

def _exp_symmetric(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (matrix + np.swapaxes(matrix, -1, -2)))
    return np.einsum("...ik,...k,...jk->...ij", v, np.exp(w), v)


def _pi_from_operator(op: CurvatureOperator, theta: np.ndarray, positive: np.ndarray):
    """(Pi, Weyl* norm) from the frame operator; zero Pi and nan Weyl* where not positive."""
    n = theta.shape[-1]
    if n == 2:
        curvature = op.matrix[..., 0, 0]
        root = np.sqrt(np.where(positive, curvature, 0.0))
        pi_frame = root[..., None, None] * np.eye(2)
        weyl = np.zeros(curvature.shape)
    else:
        safe = np.where(positive[..., None], op.eigenvalues, 1.0)
        logs = np.log(safe)
        rstar_op = CurvatureOperator(
            op.basis,
            np.einsum("...ik,...k,...jk->...ij", op.eigenvectors, logs, op.eigenvectors),
            logs,
            op.eigenvectors,
        )
        rstar = unpack_operator(rstar_op)
        parts = decompose(rstar)
        rstar_norm = np.sqrt(np.sum(rstar ** 2, axis=(-4, -3, -2, -1)))
        weyl_norm = np.sqrt(np.sum(parts.weyl_star ** 2, axis=(-4, -3, -2, -1)))
        # R* = 0 on unit spheres; below 1 the norm is absolute
        weyl = np.where(positive, weyl_norm / np.maximum(rstar_norm, 1.0), np.nan)
        pi_frame = _exp_symmetric(parts.schouten_star)
        pi_frame = np.where(positive[..., None, None], pi_frame, 0.0)
    pi = np.einsum("...ia,...ij,...jb->...ab", theta, pi_frame, theta)
    return pi, weyl


def _recover_pi_batch(riemann_dddd: np.ndarray, frame: np.ndarray, positivity: float):
    """
    Non-raising recovery over a batch of points.

    Returns (pi, weyl_star_norm, min_eigenvalue, positive, conditioning,
    sectional_min). Entries at non-positive points are zero or nan.
    """
    theta = np.linalg.inv(frame)
    riemann_frame = frame_components(riemann_dddd, frame)
    op = frame_operator(riemann_frame)
    positive = op.is_positive(positivity)
    sectional_min, _ = sectional_curvature_bounds(riemann_frame)
    pi, weyl = _pi_from_operator(op, theta, positive)
    return pi, weyl, op.min_eigenvalue, positive, op.conditioning(), sectional_min


def recover_pi(riemann_dddd: np.ndarray, frame: np.ndarray, tolerances: Optional[Tolerances] = None) -> PiRecovery:
    """
    Pi_ab = theta^i_a theta^j_b exp(P*)_ij, the positive solution of Gauss.

    Accepts one point or a batch. Raises NotPositiveOperator when the
    curvature operator is not positive-definite and WeylObstruction when
    the Weyl part of its logarithm exceeds tolerance.
    """
    tolerances = tolerances or Tolerances()
    pi, weyl, min_eig, positive, _, _ = _recover_pi_batch(
        np.asarray(riemann_dddd, dtype=float), np.asarray(frame, dtype=float), tolerances.positivity
    )
    if not np.all(positive):
        raise NotPositiveOperator(float(np.min(min_eig)), tolerances.positivity)
    worst = float(np.max(weyl))
    if worst > tolerances.weyl:
        raise WeylObstruction(worst, tolerances.weyl)
    return PiRecovery(pi, weyl)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def wedge(pi: np.ndarray) -> np.ndarray:
    """(Pi ^ Pi)_abcd = Pi_ac Pi_bd - Pi_ad Pi_bc."""
    return np.einsum("...ac,...bd->...abcd", pi, pi) - np.einsum("...ad,...bc->...abcd", pi, pi)


def gauss_residual(pi: TensorField, curvature: CurvatureBundle) -> float:
    """Relative RMS of Pi ^ Pi - R over points where both are valid."""
    if not pi.grid.same_as(curvature.grid):
        raise GridMismatch("Pi and curvature live on different grids")
    valid = pi.valid & curvature.valid
    return relative_norm(wedge(pi.values) - curvature.riemann, curvature.riemann, valid)


def codazzi_tensor(
    pi: TensorField,
    metric: MetricField,
    order: int = 2,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> TensorField:
    """Y_abc = (Pi_ab;c - Pi_ac;b) / 2."""
    d_pi = covariant_derivative(metric, pi, order, evaluate=pi_evaluate)
    y = 0.5 * (d_pi.values - np.einsum("...abc->...acb", d_pi.values))
    return TensorField(metric.grid, y, "ddd", d_pi.valid)


def codazzi_residual(
    pi: TensorField,
    metric: MetricField,
    order: int = 2,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> float:
    """
    Norm of Y relative to |grad Pi| + |Pi|, over points where Y is defined.

    With `pi_evaluate` the derivatives of Pi are taken from its exact
    evaluator rather than from grid differences.
    """
    if not pi.grid.same_as(metric.grid):
        raise GridMismatch("Pi and metric live on different grids")
    d_pi = covariant_derivative(metric, pi, order, evaluate=pi_evaluate)
    y = 0.5 * (d_pi.values - np.einsum("...abc->...acb", d_pi.values))
    valid = d_pi.valid
    if not valid.any():
        raise BoundaryStencil("Grid has no interior points for a covariant derivative of Pi")
    scale = field_norm(d_pi.values, valid) + field_norm(pi.values, valid)
    num = field_norm(y, valid)
    return num / scale if scale > 0 else num


def bianchi_codazzi_identity(pi: TensorField, curvature: TensorField, metric: MetricField, order: int = 2) -> float:
    """
    Residual of (n-2)(n-3) Y_bde = [(n-2) T_bde - T_[e Pi_d]b] / 2.

    T_abcde = R_abcd;e + R_abde;c + R_abec;d is traced with Pi^-1 once
    into T_bde and twice into T_e; R must equal Pi ^ Pi for the identity
    to hold.
    """
    n = metric.dim
    d_r = covariant_derivative(metric, curvature, order)
    dr = d_r.values
    cyclic = (
        dr
        + np.einsum("...abdec->...abcde", dr)
        + np.einsum("...abecd->...abcde", dr)
    )
    valid = d_r.valid & pi.valid
    safe_pi = np.where(valid[..., None, None], pi.values, np.eye(n))
    pinv = np.linalg.inv(safe_pi)
    t3 = np.einsum("...abcde,...ac->...bde", cyclic, pinv)
    t1 = np.einsum("...bde,...bd->...e", t3, pinv)
    t_pi = 0.5 * (
        np.einsum("...e,...db->...bde", t1, pi.values) - np.einsum("...d,...eb->...bde", t1, pi.values)
    )

    y = codazzi_tensor(pi, metric, order)
    valid &= y.valid
    lhs = (n - 2) * (n - 3) * y.values
    rhs = 0.5 * ((n - 2) * t3 - t_pi)
    return relative_norm(lhs - rhs, lhs, valid)


def surface_determinant_residual(pi: np.ndarray, riemann_dddd: np.ndarray, g: np.ndarray, valid: np.ndarray) -> float:
    """n = 2: relative RMS of det Pi - K det g, with K det g = R_0101."""
    det_pi = np.linalg.det(pi)
    target = riemann_dddd[..., 0, 1, 0, 1]
    return relative_norm(det_pi - target, target, valid)


# ---------------------------------------------------------------------------
# Decision
# ---------------------------------------------------------------------------

def _scatter(values: np.ndarray, valid: np.ndarray, fill: float = 0.0) -> np.ndarray:
    out = np.full(valid.shape + values.shape[1:], fill, dtype=float)
    out[valid] = values
    return out


def analyze(
    metric: MetricField,
    tolerances: Optional[Tolerances] = None,
    order: int = 2,
    threads: int = 1,
) -> ObstructionReport:
    """Classify a metric chart; failures of the conditions become verdicts."""
    tolerances = tolerances or Tolerances()
    grid = metric.grid
    n = metric.dim
    bundle = riemann(metric, order)
    if metric.analytic is None:
        bundle = replace(bundle, riemann=curvature_part(bundle.riemann))
    valid = bundle.valid
    if not valid.any():
        raise BoundaryStencil(f"Grid {grid.shape} has no interior points at differentiation order {order}")

    flatness = flatness_ratio(bundle)
    logger.info("Analyzing %s metric on grid %s: flatness %.3g", n, grid.shape, flatness)
    if n == 1 or flatness < tolerances.flat:
        zero = TensorField(grid, np.zeros(grid.shape + (n, n)), "dd", valid, ((0, 1),))
        return ObstructionReport(
            verdict="FlatCase",
            tolerances=tolerances,
            curvature=bundle,
            gauss_residual=field_norm(bundle.riemann, valid),
            codazzi_residual=0.0,
            flatness=flatness,
            pi=zero,
            codimension_lower_bound=0,
            notes=["metric is flat: Pi = 0 and h = 0"],
        )

    frame, _ = orthonormal_frame(metric.values)
    evaluate = pi_evaluator(metric, tolerances)
    pi_v, weyl_v, min_v, pos_v, cond_v, sect_v = pointwise_map(
        lambda r, e: _recover_pi_batch(r, e, tolerances.positivity),
        bundle.riemann[valid], frame[valid],
        lead_ndim=1, threads=threads,
    )
    positive = bool(np.all(pos_v))
    min_eig = float(np.min(min_v))
    sectional_positive = bool(np.min(sect_v) > 0)
    report = ObstructionReport(
        verdict="Immersible",
        tolerances=tolerances,
        curvature=bundle,
        min_operator_eigenvalue=min_eig,
        conditioning=float(np.max(cond_v)),
        flatness=flatness,
        sectional_positive=sectional_positive,
    )

    if n == 2:
        report.verdict = "SurfaceCase"
        report.non_unique = True
        report.notes.append("n = 2: Gauss has infinitely many solutions; reporting the umbilic choice sqrt(K) g")
        if not positive:
            report.notes.append("Gaussian curvature is not positive everywhere; no umbilic Pi exists")
            return report
        pi = TensorField(grid, _scatter(pi_v, valid), "dd", valid, ((0, 1),))
        report.pi = pi
        report.gauss_residual = gauss_residual(pi, bundle)
        report.codazzi_residual = codazzi_residual(pi, metric, order, evaluate)
        report.surface_determinant_residual = surface_determinant_residual(
            pi.values, bundle.riemann, metric.values, valid
        )
        return report

    if not positive:
        report.verdict = "NotPositiveOperator"
        report.conditioning = None
        if sectional_positive:
            report.codimension_lower_bound = 2
            report.notes.append("sectional curvature is positive but the operator is not: codimension >= 2")
        logger.info("Curvature operator not positive: min eigenvalue %.6g", min_eig)
        return report

    report.weyl_star_norm = float(np.max(weyl_v))
    pi = TensorField(grid, _scatter(pi_v, valid), "dd", valid, ((0, 1),))
    report.gauss_residual = gauss_residual(pi, bundle)
    if report.weyl_star_norm > tolerances.weyl:
        report.verdict = "WeylObstruction"
        logger.info(
            "Gauss equation unsolvable: Weyl* %.3g, Gauss residual %.3g",
            report.weyl_star_norm, report.gauss_residual,
        )
        return report
    if report.gauss_residual > tolerances.gauss:
        report.notes.append(
            f"Gauss residual {report.gauss_residual:.3g} is above {tolerances.gauss:.3g} with Weyl* within tolerance"
        )

    report.codazzi_residual = codazzi_residual(pi, metric, order, evaluate)
    if report.codazzi_residual > tolerances.codazzi:
        report.verdict = "CodazziObstruction"
        report.pi = pi
        return report

    report.pi = pi
    report.codimension_lower_bound = 1
    logger.info(
        "Immersible: Weyl* %.3g, Gauss %.3g, Codazzi %.3g",
        report.weyl_star_norm, report.gauss_residual, report.codazzi_residual,
    )
    return report


def pi_evaluator(metric: MetricField, tolerances: Optional[Tolerances] = None):
    """
    Exact Pi at arbitrary chart coordinates for metrics with analytic
    evaluators, or None for sampled metrics.
    """
    analytic = metric.analytic
    if analytic is None:
        return None
    positivity = (tolerances or Tolerances()).positivity

    def evaluate(coords: np.ndarray) -> np.ndarray:
        g, riemann_dddd = analytic_curvature(analytic, coords)
        frame, theta = orthonormal_frame(g)
        op = frame_operator(frame_components(riemann_dddd, frame))
        return _pi_from_operator(op, theta, op.is_positive(positivity))[0]

    return evaluate
