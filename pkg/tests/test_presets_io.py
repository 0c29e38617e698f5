"""
Analytic fixtures, spec documents, samples files and exports.
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from src.chart_core import MetricField, riemann
from src.curvature_operator import to_operator
from src.errors import IoError, SchemaError, SpecError
from src.flat_immersion import build_immersion
from src.general_k import KTupleCandidate
from src.models import GridSpec, MetricSpec, ReportDocument, Tolerances
from src.presets_io import (
    bundled_presets,
    generate,
    grid_for,
    load_metric,
    read_samples,
    read_spec,
    render_summary,
    seed_index,
    sphere_polar_cap,
    write_embedding,
    write_report,
    write_samples,
)

from .conftest import metric_on_box, pi_like_metric


def _spec(**fields):
    return MetricSpec.model_validate(fields)


@pytest.fixture
def surface_immersion():
    metric = metric_on_box(sphere_polar_cap(2), [1.0, -0.5], [2.1, 0.5], (11, 11))
    result = build_immersion(
        metric, pi_like_metric(metric), metric.grid.center_index(), pi_evaluate=metric.analytic.metric
    )
    return result.immersion


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

def test_quadratic_graph_fixture_at_origin():
    spec = _spec(kind="quadratic_graph", pi0=[[1, 0, 0], [0, 2, 0], [0, 0, 3]],
                 grid={"lower": [-0.3] * 3, "upper": [0.3] * 3, "shape": [7, 7, 7]})
    metric = generate(spec)
    center = metric.grid.center_index()
    np.testing.assert_allclose(metric.values[center], np.eye(3), atol=1e-14)
    op = to_operator(riemann(metric).riemann[center], np.eye(3))
    np.testing.assert_allclose(op.eigenvalues, [2.0, 3.0, 6.0], atol=1e-10)


def test_sphere_polar_cap_metric():
    spec = _spec(kind="sphere", chart="polar_cap", grid={"lower": [0.5, 0.0], "upper": [1.5, 1.0], "shape": [5, 5]})
    metric = generate(spec)
    rho = metric.grid.coordinates()[..., 0]
    np.testing.assert_allclose(metric.values[..., 0, 0], 1.0)
    np.testing.assert_allclose(metric.values[..., 1, 1], np.sin(rho) ** 2)
    np.testing.assert_allclose(metric.values[..., 0, 1], 0.0)
    assert metric.analytic is not None


def test_flat_cartesian_fixture_is_identity():
    metric = generate(_spec(kind="flat_cartesian", grid={"origin": [0, 0, 0], "spacing": [0.1] * 3, "shape": [5, 5, 5]}))
    assert np.array_equal(metric.values, np.broadcast_to(np.eye(3), metric.values.shape))
    assert metric.grid.spacing.tolist() == [0.1, 0.1, 0.1]


def test_hyperbolic_charts_default_to_ball():
    spec = _spec(kind="hyperbolic", grid={"lower": [-0.3] * 3, "upper": [0.3] * 3, "shape": [5, 5, 5]})
    assert spec.chart == "ball"
    assert spec.dimension == 3


def test_grid_spec_resolves_corners():
    layout = GridSpec(lower=[0.0, -1.0], upper=[1.0, 1.0], shape=[11, 5]).resolved()
    assert layout["origin"] == [0.0, -1.0]
    np.testing.assert_allclose(layout["spacing"], [0.1, 0.5])


@pytest.mark.parametrize("fields", [
    {"kind": "sphere", "grid": {"lower": [0, 0], "upper": [1, 1], "shape": [5, 5]}},
    {"kind": "quadratic_graph", "grid": {"lower": [0, 0], "upper": [1, 1], "shape": [5, 5]}},
    {"kind": "flat_cartesian"},
    {"kind": "samples"},
    {"kind": "flat_cartesian", "dimension": 3, "grid": {"lower": [0, 0], "upper": [1, 1], "shape": [5, 5]}},
])
def test_invalid_spec_documents(tmp_path, fields):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(fields))
    with pytest.raises(SpecError):
        read_spec(str(path))


def test_unreadable_spec_documents(tmp_path):
    with pytest.raises(IoError):
        read_spec(str(tmp_path / "missing.json"))
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(SpecError):
        read_spec(str(path))


def test_sphere_graph_beyond_the_equator_is_rejected():
    spec = _spec(kind="sphere", chart="graph_cap", grid={"lower": [-0.8, -0.8], "upper": [0.8, 0.8], "shape": [9, 9]})
    with pytest.raises(SpecError):
        generate(spec)


def test_grid_with_too_few_points_is_rejected():
    spec = _spec(kind="flat_cartesian", grid={"lower": [0, 0], "upper": [1, 1], "shape": [3, 5]})
    with pytest.raises(SpecError):
        grid_for(spec)


def test_seed_index_prefers_explicit_point():
    spec = _spec(kind="flat_cartesian", grid={"lower": [0, 0], "upper": [1, 1], "shape": [11, 11]},
                 seed={"point": [0.2, 0.3]})
    grid = grid_for(spec)
    assert seed_index(spec, grid) == (2, 3)
    assert seed_index(spec, grid, [0.9, 0.1]) == (9, 1)
    assert seed_index(_spec(kind="flat_cartesian", grid=spec.grid), grid) == (5, 5)
    with pytest.raises(SpecError):
        seed_index(spec, grid, [0.1])


def test_bundled_presets_load():
    presets = bundled_presets()
    assert {"sphere2", "sphere3", "hyperbolic3", "flat_polar2", "quadratic_graph4"} <= set(presets)
    spec, metric = load_metric(presets["flat_polar2"])
    assert spec.name == "flat_polar2"
    assert metric.grid.shape == (25, 25)


# ---------------------------------------------------------------------------
# Samples files
# ---------------------------------------------------------------------------

def test_metric_samples_round_trip(tmp_path, sphere3):
    path = str(tmp_path / "sphere3.csv")
    write_samples(sphere3, path)
    loaded = read_samples(path)
    assert isinstance(loaded, MetricField)
    assert loaded.grid.same_as(sphere3.grid)
    assert np.array_equal(loaded.values, sphere3.values)
    assert loaded.analytic is None


def test_candidate_samples_round_trip(tmp_path, flat_box2):
    x = flat_box2.grid.coordinates()
    candidate = KTupleCandidate(flat_box2.grid, np.stack([np.cos(x[..., 0]), x[..., 1] ** 3]))
    path = str(tmp_path / "fields.csv")
    write_samples(candidate, path)
    loaded = read_samples(path)
    assert isinstance(loaded, KTupleCandidate)
    assert loaded.k == 2
    assert np.array_equal(loaded.values, candidate.values)


def test_samples_spec_resolves_relative_path(tmp_path, flat_box2):
    write_samples(flat_box2, str(tmp_path / "flat.csv"))
    (tmp_path / "flat.json").write_text(json.dumps({"kind": "samples", "path": "flat.csv"}))
    spec, metric = load_metric(str(tmp_path / "flat.json"))
    assert spec.name == "flat"
    assert metric.grid.same_as(flat_box2.grid)


def _write_full_matrix_samples(path, off_diagonal):
    lines = ["# kind: metric", "# shape: 5 5", "# origin: 0 0", "# spacing: 1 1", "# i_1,i_2,g_11,g_12,g_21,g_22"]
    for i in range(5):
        for j in range(5):
            upper, lower = off_diagonal(i, j)
            lines.append(f"{i},{j},2,{upper},{lower},2")
    path.write_text("\n".join(lines) + "\n")


def test_full_matrix_samples_are_accepted_when_symmetric(tmp_path):
    path = tmp_path / "full.csv"
    _write_full_matrix_samples(path, lambda i, j: (0.5, 0.5))
    metric = read_samples(str(path))
    np.testing.assert_allclose(metric.values[..., 0, 1], 0.5)


def test_non_symmetric_samples_row_is_a_schema_error(tmp_path):
    path = tmp_path / "asym.csv"
    _write_full_matrix_samples(path, lambda i, j: (0.5, 0.4) if (i, j) == (2, 3) else (0.5, 0.5))
    with pytest.raises(SchemaError):
        read_samples(str(path))


def test_malformed_samples_files(tmp_path, flat_box2):
    path = tmp_path / "flat.csv"
    write_samples(flat_box2, str(path))
    lines = path.read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(SchemaError):
        read_samples(str(tmp_path / "short.csv"))
    (tmp_path / "noheader.csv").write_text("\n".join(line for line in lines if not line.startswith("#")) + "\n")
    with pytest.raises(SchemaError):
        read_samples(str(tmp_path / "noheader.csv"))
    with pytest.raises(IoError):
        read_samples(str(tmp_path / "missing.csv"))


# ---------------------------------------------------------------------------
# Reports and exports
# ---------------------------------------------------------------------------

def test_obj_export_has_one_vertex_per_node(tmp_path, surface_immersion):
    path = tmp_path / "cap.obj"
    write_embedding(surface_immersion, str(path), "obj")
    lines = path.read_text().splitlines()
    vertices = [line for line in lines if line.startswith("v ")]
    faces = [line for line in lines if line.startswith("f ")]
    assert len(vertices) == 11 * 11
    assert len(faces) > 0
    assert max(int(i) for line in faces for i in line.split()[1:]) <= len(vertices)


def test_csv_export_columns(tmp_path, surface_immersion):
    path = tmp_path / "cap.csv"
    write_embedding(surface_immersion, str(path), "csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "x_1,x_2,X_1,X_2,X_3,valid"
    assert len(lines) == 1 + 11 * 11


def test_obj_export_needs_a_surface(tmp_path, surface_immersion, sphere3):
    volume = replace(surface_immersion, metric=sphere3)
    with pytest.raises(SpecError):
        write_embedding(volume, str(tmp_path / "x.obj"), "obj")
    with pytest.raises(SpecError):
        write_embedding(surface_immersion, str(tmp_path / "x.ply"), "ply")


def test_report_writes_json_and_summary(tmp_path):
    doc = ReportDocument(
        command="analyze",
        metric="sphere3",
        verdict="Immersible",
        grid={"dimension": 2, "origin": [0.0, 0.0], "spacing": [0.1, 0.1], "shape": [5, 5]},
        tolerances=Tolerances(),
        notes=["example note"],
    )
    path = tmp_path / "out" / "report.json"
    write_report(doc, str(path))
    loaded = ReportDocument.model_validate_json(path.read_text())
    assert loaded == doc
    summary = (tmp_path / "out" / "report.txt").read_text()
    assert summary == render_summary(doc)
    assert "Immersible" in summary
