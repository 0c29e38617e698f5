"""
Shared fixtures: analytic metrics sampled on small grids.
"""

import numpy as np
import pytest

from src.chart_core import ChartGrid, MetricField, TensorField
from src.presets_io import (
    flat_cartesian,
    flat_polar,
    hyperbolic_ball,
    quadratic_graph,
    sphere_graph_cap,
    sphere_polar_cap,
)


def metric_on_box(analytic, lower, upper, shape):
    return MetricField.from_analytic(ChartGrid.from_box(lower, upper, shape), analytic)


def pi_like_metric(metric, scale=1.0):
    """Pi = scale * g as a symmetric TensorField."""
    return TensorField(metric.grid, scale * metric.values, "dd", None, ((0, 1),))


@pytest.fixture
def make_metric():
    return metric_on_box


@pytest.fixture
def sphere2_graph():
    """Unit 2-sphere as a graph over the disc, well inside |x| < 1."""
    return metric_on_box(sphere_graph_cap(2), [-0.5, -0.5], [0.5, 0.5], (41, 41))


@pytest.fixture
def sphere2_polar():
    return metric_on_box(sphere_polar_cap(2), [0.3, -1.7], [2.84, 1.7], (33, 35))


@pytest.fixture
def sphere3():
    return metric_on_box(sphere_graph_cap(3), [-0.5] * 3, [0.5] * 3, (15, 15, 15))


@pytest.fixture
def hyperbolic3():
    return metric_on_box(hyperbolic_ball(3), [-0.4] * 3, [0.4] * 3, (11, 11, 11))


@pytest.fixture
def flat_polar2():
    return metric_on_box(flat_polar(2), [0.5, -1.0], [2.0, 1.0], (21, 21))


@pytest.fixture
def flat_box2():
    return metric_on_box(flat_cartesian(2), [-1.0, -1.0], [1.0, 1.0], (21, 21))


@pytest.fixture
def quadratic3():
    return metric_on_box(quadratic_graph(np.diag([1.0, 2.0, 3.0])), [-0.3] * 3, [0.3] * 3, (13, 13, 13))
