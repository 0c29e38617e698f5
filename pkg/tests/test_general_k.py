"""
k-tuple verification against the master curvature equation.
"""

import numpy as np
import pytest

from src.chart_core import ChartGrid, MetricField, erode_mask, field_norm, riemann
from src.errors import GridMismatch, SingularCouplingMatrix
from src.general_k import KTupleCandidate, candidate_from_height, covariant_hessians, verify_k_tuple
from src.height_field import integrate_height
from src.obstruction import wedge

from .conftest import pi_like_metric


@pytest.fixture
def clifford():
    """Half the Euclidean metric with h = (cos x, cos y) / sqrt(2): the Clifford torus."""
    grid = ChartGrid.from_box([-1.2, -1.2], [1.2, 1.2], (25, 25))
    metric = MetricField(grid, np.broadcast_to(0.5 * np.eye(2), grid.shape + (2, 2)))
    x = grid.coordinates()
    values = np.stack([np.cos(x[..., 0]), np.cos(x[..., 1])]) / np.sqrt(2.0)
    return metric, KTupleCandidate(grid, values)


def test_clifford_torus_solves_the_k2_equation(clifford):
    metric, candidate = clifford
    result = verify_k_tuple(metric, candidate)
    assert result.k == 2
    assert result.residual < 1e-8
    assert result.f_positive_definite
    assert result.max_condition_number < 1e3
    assert result.inverse_identity_residual < 1e-10


def test_zero_fields_leave_the_whole_curvature(sphere3):
    candidate = KTupleCandidate(sphere3.grid, np.zeros(sphere3.grid.shape))
    result = verify_k_tuple(sphere3, candidate)
    bundle = riemann(sphere3)
    mask = erode_mask(np.ones(sphere3.grid.shape, dtype=bool), sphere3.grid, 2, passes=2)
    assert result.residual == pytest.approx(field_norm(bundle.riemann, mask), rel=1e-12)
    assert result.relative_residual == pytest.approx(1.0, rel=1e-12)
    assert result.max_condition_number == pytest.approx(1.0)


def test_reconstructed_sphere_height_is_a_k1_solution(sphere2_graph):
    metric = sphere2_graph
    height = integrate_height(
        pi_like_metric(metric), metric, metric.grid.center_index(), pi_evaluate=metric.analytic.metric
    )
    candidate = candidate_from_height(height, metric.grid)
    assert candidate.k == 1
    result = verify_k_tuple(metric, candidate, order=4)
    assert result.residual < 1e-3
    assert result.relative_residual < 1e-3
    assert result.f_positive_definite


def test_k1_residual_is_the_gauss_residual_of_the_rescaled_hessian(sphere2_graph):
    metric = sphere2_graph
    x = metric.grid.coordinates()
    candidate = KTupleCandidate(metric.grid, 0.3 * x[..., 0] ** 2 + 0.2 * x[..., 0] * x[..., 1])
    result = verify_k_tuple(metric, candidate)

    derivs = covariant_hessians(metric, candidate)
    valid = derivs.valid
    q = np.einsum("...a,...b,...ab->...", derivs.grads[..., 0, :], derivs.grads[..., 0, :], metric.inverse())
    safe = np.where(valid, 1.0 - q, 1.0)
    pi_h = derivs.hessians[..., 0, :, :] / np.sqrt(safe)[..., None, None]
    expected = field_norm(wedge(pi_h) - riemann(metric).riemann, valid)
    assert result.residual == pytest.approx(expected, rel=1e-8)


def test_field_order_does_not_matter(sphere3):
    x = sphere3.grid.coordinates()
    first = 0.1 * x[..., 0] + 0.05 * x[..., 1] ** 2
    second = 0.2 * np.sin(x[..., 2])
    forward = verify_k_tuple(sphere3, KTupleCandidate(sphere3.grid, np.stack([first, second])))
    backward = verify_k_tuple(sphere3, KTupleCandidate(sphere3.grid, np.stack([second, first])))
    assert forward.residual == pytest.approx(backward.residual, rel=1e-10)
    assert forward.f_positive_definite == backward.f_positive_definite


def test_singular_coupling_is_rejected(flat_box2):
    x = flat_box2.grid.coordinates()[..., 0]
    candidate = KTupleCandidate(flat_box2.grid, np.stack([0.6 * x, 0.8 * x]))
    with pytest.raises(SingularCouplingMatrix):
        verify_k_tuple(flat_box2, candidate)


def test_candidate_shape_is_checked(flat_box2, sphere3):
    with pytest.raises(GridMismatch):
        KTupleCandidate(flat_box2.grid, np.zeros((2, 5, 5)))
    candidate = KTupleCandidate(sphere3.grid, np.zeros(sphere3.grid.shape))
    with pytest.raises(GridMismatch):
        verify_k_tuple(flat_box2, candidate)
