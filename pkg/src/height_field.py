"""
Height function reconstruction.

Given Pi_ab, the height h and its gradient h_a solve, along every grid
line x^k,

    d h_a / dx^k = Gamma^c_ak h_c + (1 - g^mn h_m h_n)^(1/2) Pi_ak
    d h   / dx^k = h_k

integrated by RK4 over spine-and-fiber sweeps from a seed node.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .chart_core import (
    MetricField,
    PiEvaluator,
    SweepField,
    TensorField,
    analytic_christoffel,
    christoffel_field,
    covariant_derivative,
    orthonormal_frame,
    relative_norm,
    sweep_integrate,
)
from .errors import GridMismatch, InvalidSeed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HeightField:
    h: np.ndarray
    grad: np.ndarray
    valid: np.ndarray
    grad_norm_sq: np.ndarray
    seed: tuple
    h0: float
    grad0: np.ndarray

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class HessianCheck:
    consistency: float
    asymmetry: float


def _seed_gradient(metric: MetricField, seed: tuple, grad0: Optional[Sequence[float]]) -> np.ndarray:
    n = metric.dim
    grad0 = np.zeros(n) if grad0 is None else np.asarray(grad0, dtype=float).reshape(-1)
    if grad0.size != n:
        raise InvalidSeed(f"Seed gradient has {grad0.size} components, expected {n}")
    return grad0


def height_rhs(state, fields, axis):
    """Right-hand side for the leading (h, h_a) block of a sweep state."""
    n = fields["ginv"].shape[-1]
    grad = state[:, 1:n + 1]
    q = np.einsum("bmn,bm,bn->b", fields["ginv"], grad, grad)
    root = np.sqrt(np.maximum(1.0 - q, 0.0))
    d_grad = (
        np.einsum("bca,bc->ba", fields["gamma"][..., axis], grad)
        + root[:, None] * fields["pi"][:, :, axis]
    )
    return np.concatenate([grad[:, axis:axis + 1], d_grad], axis=1)


def sweep_fields(
    pi: TensorField,
    metric: MetricField,
    order: int = 2,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> Tuple[Dict[str, SweepField], np.ndarray]:
    """Connection, inverse metric and Pi as sweep fields, with the nodes a sweep may enter."""
    if not pi.grid.same_as(metric.grid):
        raise GridMismatch("Pi and metric live on different grids")
    analytic = metric.analytic
    gamma_values, gamma_valid = christoffel_field(metric, order)
    if analytic is not None:
        gamma = SweepField(gamma_values, lambda x: analytic_christoffel(analytic, x))
        ginv = SweepField(metric.inverse(), lambda x: np.linalg.inv(analytic.metric(x)))
        valid = pi.valid.copy()
    else:
        gamma = SweepField(gamma_values)
        ginv = SweepField(metric.inverse())
        valid = pi.valid & gamma_valid
    return {"gamma": gamma, "ginv": ginv, "pi": SweepField(pi.values, pi_evaluate)}, valid


def clamp_stop(clamp: float):
    """Stop rule: a path ends where 1 - |grad h|^2 drops below `clamp`."""
    def stop(state, sampled):
        n = sampled["ginv"].shape[-1]
        grad = state[:, 1:n + 1]
        q = np.einsum("bmn,bm,bn->b", sampled["ginv"], grad, grad)
        return ~(1.0 - q >= clamp)
    return stop


def check_seed(metric: MetricField, seed: Sequence[int], grad0: Optional[Sequence[float]], clamp: float):
    """Validated (seed index, seed gradient)."""
    seed = tuple(int(i) for i in seed)
    if not metric.grid.contains_index(seed):
        raise InvalidSeed(f"Seed {seed} is outside the grid")
    grad0 = _seed_gradient(metric, seed, grad0)
    q0 = float(grad0 @ np.linalg.inv(metric.values[seed]) @ grad0)
    if 1.0 - q0 <= clamp:
        raise InvalidSeed(f"Seed gradient has |grad h|^2 = {q0:.6g}; it must stay below 1")
    return seed, grad0


def integrate_height(
    pi: TensorField,
    metric: MetricField,
    seed: Sequence[int],
    h0: float = 0.0,
    grad0: Optional[Sequence[float]] = None,
    substeps: int = 4,
    clamp: float = 1e-6,
    axis_order: Optional[Sequence[int]] = None,
    pi_evaluate: Optional[PiEvaluator] = None,
    order: int = 2,
) -> HeightField:
    """
    Integrate h and h_a outward from `seed` (a grid index).

    Pi is interpolated linearly between nodes unless `pi_evaluate` gives
    exact values at chart coordinates. Integration stops on each path at
    the first node where 1 - |grad h|^2 < clamp or Pi is not valid.
    """
    fields, valid = sweep_fields(pi, metric, order, pi_evaluate)
    grid = metric.grid
    seed, grad0 = check_seed(metric, seed, grad0, clamp)

    seed_state = np.concatenate([[float(h0)], grad0])
    states, reached = sweep_integrate(
        grid, seed, seed_state, height_rhs, fields, valid,
        axis_order=axis_order, substeps=substeps, stop=clamp_stop(clamp),
    )

    grad = states[..., 1:]
    grad_norm_sq = np.einsum("...mn,...m,...n->...", metric.inverse(), grad, grad)
    grad_norm_sq[~reached] = np.nan
    h = np.where(reached, states[..., 0], np.nan)
    grad = np.where(reached[..., None], grad, np.nan)
    logger.debug("Height integration from %s reached %d/%d nodes", seed, int(reached.sum()), grid.size)
    return HeightField(h, grad, reached, grad_norm_sq, seed, float(h0), grad0)


def path_independence_residual(
    pi: TensorField,
    metric: MetricField,
    seed: Sequence[int],
    h0: float = 0.0,
    grad0: Optional[Sequence[float]] = None,
    substeps: int = 4,
    clamp: float = 1e-6,
    pi_evaluate: Optional[PiEvaluator] = None,
) -> float:
    """max |grad(axis order 0..n-1) - grad(reversed order)| / (max |grad| + 1)."""
    n = metric.dim
    kwargs = dict(h0=h0, grad0=grad0, substeps=substeps, clamp=clamp, pi_evaluate=pi_evaluate)
    forward = integrate_height(pi, metric, seed, axis_order=tuple(range(n)), **kwargs)
    backward = integrate_height(pi, metric, seed, axis_order=tuple(reversed(range(n))), **kwargs)
    both = forward.valid & backward.valid
    if not both.any():
        return 0.0
    diff = np.max(np.abs(forward.grad[both] - backward.grad[both]))
    scale = np.max(np.abs(forward.grad[both]))
    return float(diff / (scale + 1.0))


def guaranteed_radius(pi: TensorField, metric: MetricField, seed: Sequence[int]) -> float:
    """
    pi / (2 r), r the largest |eigenvalue| of Pi in a g-orthonormal frame.

    Returns inf when Pi vanishes.
    """
    seed = tuple(int(i) for i in seed)
    if not metric.grid.contains_index(seed) or not pi.valid[seed]:
        raise InvalidSeed(f"Pi is not defined at seed {seed}")
    frame, _ = orthonormal_frame(metric.values[pi.valid])
    framed = np.einsum("...ai,...ab,...bj->...ij", frame, pi.values[pi.valid], frame)
    r = float(np.max(np.abs(np.linalg.eigvalsh(framed))))
    return float("inf") if r == 0.0 else float(np.pi / (2.0 * r))


def hessian_consistency(
    height: HeightField,
    metric: MetricField,
    pi: TensorField,
    order: int = 2,
) -> HessianCheck:
    """
    Compare h_;ab / (1 - |grad h|^2)^(1/2) with Pi on reconstructed points.

    The Hessian is the covariant derivative of the integrated gradient,
    so its antisymmetric part measures integration error.
    """
    grad = TensorField(metric.grid, np.nan_to_num(height.grad), "d", height.valid)
    hessian = covariant_derivative(metric, grad, order)
    valid = hessian.valid & pi.valid
    root = np.sqrt(np.clip(1.0 - np.nan_to_num(height.grad_norm_sq), 0.0, None))
    safe = np.where(valid, root, 1.0)
    recovered = hessian.values / safe[..., None, None]
    asymmetry = relative_norm(
        hessian.values - np.swapaxes(hessian.values, -1, -2), hessian.values, valid
    )
    return HessianCheck(relative_norm(recovered - pi.values, pi.values, valid), asymmetry)
