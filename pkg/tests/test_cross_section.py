"""
Level-set curvature of the reconstructed height function.
"""

import numpy as np
import pytest

from src.chart_core import TensorField, riemann
from src.cross_section import cross_section_check, default_band
from src.errors import DegenerateGradient, EmptyLevelBand
from src.height_field import integrate_height
from src.obstruction import analyze, pi_evaluator
from src.presets_io import sphere_graph_cap

from .conftest import metric_on_box


@pytest.fixture(scope="module")
def sphere3_height():
    metric = metric_on_box(sphere_graph_cap(3), [-0.5] * 3, [0.5] * 3, (17, 17, 17))
    report = analyze(metric)
    height = integrate_height(report.pi, metric, metric.grid.center_index(), pi_evaluate=pi_evaluator(metric))
    return metric, report, height


@pytest.mark.parametrize("level", [0.02, 0.05, 0.1])
def test_sphere_level_sets_scale_the_curvature(sphere3_height, level):
    metric, report, height = sphere3_height
    result = cross_section_check(metric, report.curvature, height, report.pi, level)
    assert result.band_points > 0
    assert result.residual < 1e-3
    assert result.min_scaling_factor >= 1.0 - 1e-9
    assert result.max_scaling_factor >= result.min_scaling_factor


def test_level_set_samples_carry_a_projector(sphere3_height):
    metric, report, height = sphere3_height
    result = cross_section_check(metric, report.curvature, height, report.pi, 0.05)
    assert len(result.samples) == result.band_points
    for sample in result.samples[:10]:
        p = sample.tangent_projector
        np.testing.assert_allclose(p @ p, p, atol=1e-12)
        np.testing.assert_allclose(np.einsum("ca,c->a", p, sample.normal_covector), 0.0, atol=1e-12)
        assert sample.level == 0.05


def test_flat_metric_with_affine_height_has_flat_sections(flat_box2):
    n = flat_box2.dim
    pi = TensorField(flat_box2.grid, np.zeros(flat_box2.grid.shape + (n, n)), "dd", None, ((0, 1),))
    height = integrate_height(pi, flat_box2, flat_box2.grid.center_index(), grad0=[0.3, 0.4])
    result = cross_section_check(flat_box2, riemann(flat_box2), height, pi, 0.0)
    assert result.residual == 0.0
    assert result.min_scaling_factor == pytest.approx(4.0)
    assert default_band(flat_box2, height) == pytest.approx(0.5 * 0.4 * 0.1)


def test_level_outside_the_range_is_empty(sphere3_height):
    metric, report, height = sphere3_height
    with pytest.raises(EmptyLevelBand):
        cross_section_check(metric, report.curvature, height, report.pi, 10.0)


def test_constant_height_has_degenerate_gradient(flat_box2):
    n = flat_box2.dim
    pi = TensorField(flat_box2.grid, np.zeros(flat_box2.grid.shape + (n, n)), "dd", None, ((0, 1),))
    height = integrate_height(pi, flat_box2, flat_box2.grid.center_index())
    with pytest.raises(DegenerateGradient):
        cross_section_check(flat_box2, riemann(flat_box2), height, pi, 0.0, band=0.1)
