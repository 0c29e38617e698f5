"""
From height field to immersion.

f = g - dh (x) dh is flat wherever |grad h| < 1. Parallel-transporting an
f-orthonormal coframe along the sweep paths and integrating it gives flat
coordinates m; the immersion is I = (m, h) in R^(n+1).
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from .chart_core import (
    MetricField,
    PiEvaluator,
    SweepField,
    TensorField,
    analytic_christoffel,
    christoffel_field,
    erode_mask,
    field_norm,
    gradient,
    orthonormal_frame,
    relative_norm,
    riemann,
    sweep_integrate,
)
from .errors import FlatnessViolation, GridMismatch, NotPositiveDefinite
from .height_field import (
    HeightField,
    check_seed,
    clamp_stop,
    guaranteed_radius,
    height_rhs,
    integrate_height,
    path_independence_residual,
    sweep_fields,
)

logger = logging.getLogger(__name__)

# RMS curvature above which a metric is not accepted as flat for coordinates
FLATNESS_LIMIT = 1e-2


@dataclass(frozen=True, eq=False)
class FlatMetric:
    field: MetricField
    valid: np.ndarray
    flatness: float


@dataclass(frozen=True, eq=False)
class FlatCoordinates:
    m: np.ndarray
    coframe: np.ndarray
    valid: np.ndarray
    closure_residual: float
    flatness: float


@dataclass(frozen=True, eq=False)
class ImmersionGrid:
    points: np.ndarray
    tangents: np.ndarray
    normal: np.ndarray
    valid: np.ndarray
    induced_residual: float
    second_form_residual: float
    normal_deviation: float
    normal_norm_deviation: float
    metric: MetricField
    pi: TensorField
    order: int = 2

    @property
    def coordinates(self) -> np.ndarray:
        return self.metric.grid.coordinates()


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float
    max_deviation: float


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    height: HeightField
    flat: FlatMetric
    coordinates: FlatCoordinates
    immersion: ImmersionGrid
    guaranteed_radius: float
    path_independence: float


# ---------------------------------------------------------------------------
# Flat metric and flat coordinates
# ---------------------------------------------------------------------------

def _flatness(field: MetricField, valid: np.ndarray, order: int) -> float:
    bundle = riemann(field, order)
    mask = bundle.valid & valid
    return field_norm(bundle.riemann, mask)


def flat_metric(metric: MetricField, height: HeightField, order: int = 2) -> FlatMetric:
    """f_ab = g_ab - h_a h_b on reconstructed points, g elsewhere."""
    grid = metric.grid
    if height.h.shape != grid.shape:
        raise GridMismatch("Height field and metric live on different grids")
    if not height.valid.any():
        raise ValueError("Height field has no valid points")
    grad = np.nan_to_num(height.grad)
    values = metric.values - np.einsum("...a,...b->...ab", grad, grad)
    values = np.where(height.valid[..., None, None], values, metric.values)
    min_eig = float(np.min(np.linalg.eigvalsh(values[height.valid])))
    if min_eig <= 0.0:
        raise NotPositiveDefinite(
            f"g - dh dh is not positive-definite on the valid region (min eigenvalue {min_eig:.3g})", min_eig
        )
    field = MetricField(grid, values)
    valid = erode_mask(height.valid, grid, order, passes=2)
    flatness = _flatness(field, valid, order)
    logger.debug("Flat metric built on %d points, RMS curvature %.3g", int(valid.sum()), flatness)
    return FlatMetric(field, height.valid.copy(), flatness)


def _coframe_rhs(n):
    def rhs(state, fields, axis):
        theta = state[:, n:].reshape(-1, n, n)
        d_theta = np.einsum("bca,bic->bia", fields["gamma"][..., axis], theta)
        return np.concatenate([theta[:, :, axis], d_theta.reshape(-1, n * n)], axis=1)
    return rhs


def flat_coordinates(
    flat: Union[FlatMetric, MetricField],
    seed: Sequence[int],
    substeps: int = 4,
    order: int = 2,
    max_flatness: float = FLATNESS_LIMIT,
) -> FlatCoordinates:
    """
    Coordinates m with m(seed) = 0 and dm an f-orthonormal coframe.

    The Cholesky coframe at the seed is parallel-transported along the
    sweep paths with f's connection and integrated.
    """
    if isinstance(flat, MetricField):
        full = np.ones(flat.grid.shape, dtype=bool)
        flat = FlatMetric(flat, full, _flatness(flat, full, order))
    if flat.flatness > max_flatness:
        raise FlatnessViolation(f"Metric curvature {flat.flatness:.3g} exceeds flatness limit {max_flatness:.3g}")

    field = flat.field
    grid = field.grid
    n = grid.dim
    seed = tuple(int(i) for i in seed)
    gamma_values, gamma_valid = christoffel_field(field, order)
    if field.analytic is not None:
        analytic = field.analytic
        gamma = SweepField(gamma_values, lambda x: analytic_christoffel(analytic, x))
        valid = flat.valid.copy()
    else:
        gamma = SweepField(gamma_values)
        valid = erode_mask(flat.valid, grid, order) & gamma_valid

    _, theta0 = orthonormal_frame(field.values[seed])
    seed_state = np.concatenate([np.zeros(n), theta0.reshape(-1)])
    states, reached = sweep_integrate(
        grid, seed, seed_state, _coframe_rhs(n), {"gamma": gamma}, valid, substeps=substeps,
    )
    m = np.where(reached[..., None], states[..., :n], np.nan)
    coframe = np.where(reached[..., None, None], states[..., n:].reshape(grid.shape + (n, n)), np.nan)

    jacobian, mask = gradient(np.nan_to_num(m), reached, grid, order)
    induced = np.einsum("...ai,...bi->...ab", jacobian, jacobian)
    closure = relative_norm(induced - field.values, field.values, mask)
    logger.debug("Flat coordinates reached %d nodes, closure residual %.3g", int(reached.sum()), closure)
    return FlatCoordinates(m, coframe, reached, closure, flat.flatness)


def _transport_rhs(n):
    # state: h, h_a, m^i, theta^i_a
    def rhs(state, fields, axis):
        grad = state[:, 1:n + 1]
        theta = state[:, 2 * n + 1:].reshape(-1, n, n)
        up = np.einsum("bmn,bn->bm", fields["ginv"], grad)
        root = np.sqrt(np.maximum(1.0 - np.sum(up * grad, axis=1), 0.0))
        # connection of f = g - dh dh: Gamma_g - (g^-1 dh) Pi / s
        conn = fields["gamma"][..., axis] - np.einsum(
            "bc,ba->bca", up / np.maximum(root, 1e-300)[:, None], fields["pi"][:, :, axis]
        )
        d_theta = np.einsum("bca,bic->bia", conn, theta)
        return np.concatenate(
            [height_rhs(state, fields, axis), theta[:, :, axis], d_theta.reshape(-1, n * n)], axis=1
        )
    return rhs


def transported_coordinates(
    pi: TensorField,
    metric: MetricField,
    height: HeightField,
    flat: FlatMetric,
    substeps: int = 4,
    clamp: float = 1e-6,
    order: int = 2,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> FlatCoordinates:
    """
    Flat coordinates of f = g - dh dh, integrated together with h.

    Along a solution h_;ab = s Pi_ab, so f's connection differs from g's
    by -(g^-1 dh) Pi / s and needs no differentiation of f. The coframe
    then sees the same between-node fields as the height ODE.
    """
    grid = metric.grid
    n = grid.dim
    fields, valid = sweep_fields(pi, metric, order, pi_evaluate)
    seed, grad0 = check_seed(metric, height.seed, height.grad0, clamp)
    _, theta0 = orthonormal_frame(metric.values[seed] - np.outer(grad0, grad0))
    seed_state = np.concatenate([[height.h0], grad0, np.zeros(n), theta0.reshape(-1)])
    states, reached = sweep_integrate(
        grid, seed, seed_state, _transport_rhs(n), fields, valid,
        substeps=substeps, stop=clamp_stop(clamp),
    )
    reached &= height.valid
    m = np.where(reached[..., None], states[..., n + 1:2 * n + 1], np.nan)
    coframe = np.where(
        reached[..., None, None], states[..., 2 * n + 1:].reshape(grid.shape + (n, n)), np.nan
    )

    jacobian, mask = gradient(np.nan_to_num(m), reached, grid, order)
    induced = np.einsum("...ai,...bi->...ab", jacobian, jacobian)
    f = flat.field.values
    closure = relative_norm(induced - f, f, mask)
    logger.debug("Transported coordinates reached %d nodes, closure residual %.3g", int(reached.sum()), closure)
    return FlatCoordinates(m, coframe, reached, closure, flat.flatness)


# ---------------------------------------------------------------------------
# Immersion
# ---------------------------------------------------------------------------

def _tangent_hessian(tangents, valid, metric, order):
    """I_;ab from the exact tangents dI_a: d_b T_a - Gamma^c_ab T_c."""
    d_tangents, mask = gradient(tangents, valid, metric.grid, order)
    gamma, gamma_valid = christoffel_field(metric, order)
    hessian = np.einsum("...bau->...abu", d_tangents) - np.einsum("...cab,...cu->...abu", gamma, tangents)
    return hessian, mask & gamma_valid


def _residuals(map_values, tangents, normal, valid, metric, pi, order):
    grid = metric.grid
    jacobian, jac_valid = gradient(np.nan_to_num(map_values), valid, grid, order)
    induced = np.einsum("...au,...bu->...ab", jacobian, jacobian)
    induced_residual = relative_norm(induced - metric.values, metric.values, jac_valid)

    hessian, hess_valid = _tangent_hessian(np.nan_to_num(tangents), valid, metric, order)
    second_form = np.einsum("...abu,...u->...ab", hessian, np.nan_to_num(normal))
    mask = hess_valid & pi.valid
    second_form_residual = relative_norm(second_form - pi.values, pi.values, mask)
    return induced_residual, second_form_residual


def assemble_immersion(
    coords: FlatCoordinates,
    height: HeightField,
    metric: MetricField,
    pi: TensorField,
    order: int = 2,
) -> ImmersionGrid:
    """I = (m, h) with unit normal s (-theta^-T h, 1), s = (1 - |grad h|^2)^(1/2)."""
    grid = metric.grid
    if coords.m.shape[:-1] != grid.shape or height.h.shape != grid.shape or not pi.grid.same_as(grid):
        raise GridMismatch("Immersion inputs live on different grids")
    n = grid.dim
    valid = coords.valid & height.valid

    map_values = np.full(grid.shape + (n + 1,), np.nan)
    map_values[valid, :n] = coords.m[valid]
    map_values[valid, n] = height.h[valid]

    tangents = np.full(grid.shape + (n, n + 1), np.nan)
    tangents[valid, :, :n] = np.swapaxes(coords.coframe[valid], -1, -2)
    tangents[valid, :, n] = height.grad[valid]

    normal = np.full(grid.shape + (n + 1,), np.nan)
    theta = coords.coframe[valid]
    grad = height.grad[valid]
    root = np.sqrt(np.clip(1.0 - height.grad_norm_sq[valid], 0.0, None))
    horizontal = -np.linalg.solve(np.swapaxes(theta, -1, -2), grad[..., None])[..., 0]
    raw = root[:, None] * np.concatenate([horizontal, np.ones((len(root), 1))], axis=1)
    lengths = np.linalg.norm(raw, axis=1)
    normal_norm_deviation = float(np.max(np.abs(lengths - 1.0), initial=0.0))
    unit = raw / lengths[:, None]
    normal[valid] = unit

    # orthogonal complement of the tangent plane, sign-matched to the closed form
    u, _, _ = np.linalg.svd(np.swapaxes(tangents[valid], -1, -2), full_matrices=True)
    svd_normal = u[..., :, -1]
    signs = np.sign(np.sum(svd_normal * unit, axis=1))
    normal_deviation = float(np.max(np.abs(svd_normal * signs[:, None] - unit), initial=0.0))

    induced_residual, second_form_residual = _residuals(map_values, tangents, normal, valid, metric, pi, order)
    logger.info(
        "Immersion on %d/%d points: induced %.3g, second form %.3g",
        int(valid.sum()), grid.size, induced_residual, second_form_residual,
    )
    return ImmersionGrid(
        map_values, tangents, normal, valid,
        induced_residual, second_form_residual, normal_deviation, normal_norm_deviation,
        metric, pi, order,
    )


def apply_rigid_motion(imm: ImmersionGrid, rotation: np.ndarray, translation: np.ndarray) -> ImmersionGrid:
    """Rotate and translate the immersion, recomputing its residuals."""
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float)
    map_values = imm.points @ rotation.T + translation
    tangents = imm.tangents @ rotation.T
    normal = imm.normal @ rotation.T
    induced_residual, second_form_residual = _residuals(
        map_values, tangents, normal, imm.valid, imm.metric, imm.pi, imm.order
    )
    return replace(
        imm,
        points=map_values,
        tangents=tangents,
        normal=normal,
        induced_residual=induced_residual,
        second_form_residual=second_form_residual,
    )


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def inverse_identity_residual(metric: MetricField, height: HeightField) -> float:
    """max |(1 + h f^-1 h)(1 - g^-1 h h) - 1| over reconstructed points."""
    valid = height.valid
    if not valid.any():
        return 0.0
    grad = height.grad[valid]
    f = metric.values[valid] - np.einsum("pa,pb->pab", grad, grad)
    f_inv_h = np.linalg.solve(f, grad[..., None])[..., 0]
    product = (1.0 + np.sum(grad * f_inv_h, axis=1)) * (1.0 - height.grad_norm_sq[valid])
    return float(np.max(np.abs(product - 1.0)))


def tangency_residual(imm: ImmersionGrid) -> float:
    """Relative size of f^t_;ab f^t_;p + h_;ab h_;p, which vanishes for an immersion."""
    n = imm.metric.dim
    tangents = np.nan_to_num(imm.tangents)
    hessian, mask = _tangent_hessian(tangents, imm.valid, imm.metric, imm.order)
    total = np.einsum("...abu,...pu->...abp", hessian, tangents)
    height_part = np.einsum("...ab,...p->...abp", hessian[..., n], tangents[..., n])
    return relative_norm(total, height_part, mask)


def fit_sphere(points: np.ndarray) -> SphereFit:
    """
    Linear least-squares sphere through points (P, d).

    |x|^2 = 2 c.x + (r^2 - |c|^2) is linear in (c, r^2 - |c|^2).
    """
    points = np.asarray(points, dtype=float)
    points = points[np.all(np.isfinite(points), axis=1)]
    design = np.hstack([2.0 * points, np.ones((len(points), 1))])
    rhs = np.sum(points ** 2, axis=1)
    solution, _, _, _ = sla.lstsq(design, rhs)
    center = solution[:-1]
    radius = float(np.sqrt(solution[-1] + center @ center))
    deviation = float(np.max(np.abs(np.linalg.norm(points - center, axis=1) - radius)))
    return SphereFit(center, radius, deviation)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def build_immersion(
    metric: MetricField,
    pi: TensorField,
    seed: Sequence[int],
    h0: float = 0.0,
    grad0: Optional[Sequence[float]] = None,
    substeps: int = 4,
    clamp: float = 1e-6,
    order: int = 2,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> EmbeddingResult:
    """Height field, flat metric, flat coordinates and immersion from one seed."""
    height = integrate_height(
        pi, metric, seed, h0=h0, grad0=grad0, substeps=substeps, clamp=clamp,
        pi_evaluate=pi_evaluate, order=order,
    )
    path = path_independence_residual(
        pi, metric, seed, h0=h0, grad0=grad0, substeps=substeps, clamp=clamp, pi_evaluate=pi_evaluate,
    )
    radius = guaranteed_radius(pi, metric, seed)
    flat = flat_metric(metric, height, order)
    coords = transported_coordinates(
        pi, metric, height, flat, substeps=substeps, clamp=clamp, order=order, pi_evaluate=pi_evaluate,
    )
    immersion = assemble_immersion(coords, height, metric, pi, order)
    return EmbeddingResult(height, flat, coords, immersion, radius, path)
