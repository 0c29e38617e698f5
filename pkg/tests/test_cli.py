"""
End-to-end runs of the command line: exit codes, reports and output files.
"""

import json
import os
import time

import numpy as np
import pytest

from src.chart_core import ChartGrid, MetricField
from src.general_k import KTupleCandidate
from src.main import EXIT_INPUT, EXIT_OBSTRUCTION, EXIT_OK, main, parse_invocation
from src.presets_io import PRESET_DIR, sphere_graph_cap, write_samples

from .conftest import metric_on_box


def _preset(name):
    return os.path.join(str(PRESET_DIR), f"{name}.json")


def _load(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(autouse=True)
def _work_in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def test_analyze_sphere_preset(tmp_path):
    report = tmp_path / "sphere3.json"
    assert main(["analyze", "--metric", _preset("sphere3"), "--report", str(report)]) == EXIT_OK
    doc = _load(report)
    assert doc["verdict"] == "Immersible"
    assert doc["pi_present"]
    assert doc["codimension_lower_bound"] == 1
    assert doc["residuals"]["weyl_star"] < 1e-6
    assert (tmp_path / "sphere3.txt").exists()


def test_analyze_hyperbolic_preset_reports_obstruction(tmp_path):
    report = tmp_path / "hyp.json"
    assert main(["analyze", "--metric", _preset("hyperbolic3"), "--report", str(report)]) == EXIT_OBSTRUCTION
    doc = _load(report)
    assert doc["verdict"] == "NotPositiveOperator"
    assert doc["residuals"]["min_operator_eigenvalue"] < 0
    assert doc["residuals"]["conditioning"] is None


def test_analyze_writes_to_output_dir_by_default(tmp_path):
    assert main(["analyze", "--metric", _preset("flat_polar2")]) == EXIT_OK
    assert (tmp_path / "output" / "flat_polar2_analyze.json").exists()


@pytest.mark.slow
def test_embed_sphere_cap(tmp_path):
    out = tmp_path / "cap.obj"
    report = tmp_path / "cap.json"
    start = time.perf_counter()
    code = main(["embed", "--metric", _preset("sphere2"), "--out", str(out), "--report", str(report)])
    elapsed = time.perf_counter() - start
    assert code == EXIT_OK
    assert elapsed < 10.0
    vertices = [line for line in out.read_text().splitlines() if line.startswith("v ")]
    assert len(vertices) == 65 * 65
    doc = _load(report)
    assert doc["verdict"] == "SurfaceCase"
    assert doc["differentiation_order"] == 2
    assert doc["embedding"]["induced_residual"] < 1e-3
    assert doc["embedding"]["valid_points"] > 0


def test_embed_refuses_obstructed_metric(tmp_path):
    report = tmp_path / "hyp.json"
    assert main(["embed", "--metric", _preset("hyperbolic3"), "--report", str(report)]) == EXIT_OBSTRUCTION
    doc = _load(report)
    assert doc["embedding"] is None
    assert any("no immersion" in note for note in doc["notes"])


def test_verify_k_with_clifford_torus(tmp_path):
    grid = ChartGrid.from_box([-1.2, -1.2], [1.2, 1.2], (25, 25))
    write_samples(MetricField(grid, np.broadcast_to(0.5 * np.eye(2), grid.shape + (2, 2))), str(tmp_path / "g.csv"))
    x = grid.coordinates()
    fields = np.stack([np.cos(x[..., 0]), np.cos(x[..., 1])]) / np.sqrt(2.0)
    write_samples(KTupleCandidate(grid, fields), str(tmp_path / "h.csv"))
    (tmp_path / "half.json").write_text(json.dumps({"kind": "samples", "path": "g.csv"}))

    report = tmp_path / "k.json"
    code = main([
        "verify-k", "--metric", str(tmp_path / "half.json"), "--candidate", str(tmp_path / "h.csv"),
        "--report", str(report),
    ])
    assert code == EXIT_OK
    k_tuple = _load(report)["k_tuple"]
    assert k_tuple["k"] == 2
    assert k_tuple["residual"] < 1e-8
    assert k_tuple["f_positive_definite"]


def test_cross_section_levels(tmp_path):
    spec = {
        "kind": "sphere",
        "chart": "graph_cap",
        "grid": {"lower": [-0.5] * 3, "upper": [0.5] * 3, "shape": [13, 13, 13]},
    }
    (tmp_path / "s3.json").write_text(json.dumps(spec))
    report = tmp_path / "cs.json"
    argv = ["cross-section", "--metric", str(tmp_path / "s3.json"), "--report", str(report)]
    for level in ("0.02", "0.05", "0.1"):
        argv += ["--level", level]
    assert main(argv) == EXIT_OK
    sections = _load(report)["cross_sections"]
    assert [s["level"] for s in sections] == [0.02, 0.05, 0.1]
    for section in sections:
        assert section["residual"] < 1e-3
        assert section["min_scaling_factor"] >= 1.0 - 1e-9


def test_presets_are_listed_and_copied(tmp_path, capsys):
    assert main(["presets", "--out", str(tmp_path / "copied")]) == EXIT_OK
    assert "sphere3" in capsys.readouterr().out
    assert (tmp_path / "copied" / "sphere2.json").exists()


def test_reports_are_deterministic_apart_from_run_info(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    for path in (first, second):
        assert main(["analyze", "--metric", _preset("flat_polar2"), "--report", str(path)]) == EXIT_OK
    docs = [_load(path) for path in (first, second)]
    for doc in docs:
        assert "timestamp" in doc.pop("run")
    assert docs[0] == docs[1]


@pytest.mark.parametrize("argv", [
    ["analyze"],
    ["analyze", "--metric", "missing.json"],
    ["analyze", "--metric", "x.json", "--bogus"],
    ["analyze", "--metric", "x.json", "--order", "3"],
    ["embed", "--metric", "x.json", "--substeps", "0"],
    ["analyze", "--metric", "x.json", "--tol-weyl", "-1"],
    ["transmogrify"],
    [],
])
def test_input_errors_exit_with_code_three(argv):
    assert main(argv) == EXIT_INPUT


def test_parse_invocation_applies_flags():
    inv = parse_invocation([
        "embed", "--metric", "m.json", "--order", "4", "--seed-point", "0.1", "0.2", "--tol-codazzi", "1e-3",
        "--format", "csv",
    ])
    assert inv.order == 4
    assert inv.seed_point == [0.1, 0.2]
    assert inv.tolerances.codazzi == 1e-3
    assert inv.tolerances.clamp == 1e-6
    assert inv.format == "csv"


def test_analyze_sampled_sphere(tmp_path):
    metric = metric_on_box(sphere_graph_cap(3), [-0.3] * 3, [0.3] * 3, (17, 17, 17)).sampled()
    write_samples(metric, str(tmp_path / "s3.csv"))
    (tmp_path / "s3.json").write_text(json.dumps({"kind": "samples", "path": "s3.csv"}))

    report = tmp_path / "s3_report.json"
    argv = ["analyze", "--metric", str(tmp_path / "s3.json"), "--report", str(report), "--tol-codazzi", "5e-2"]
    assert main(argv) == EXIT_OK
    doc = _load(report)
    assert doc["verdict"] == "Immersible"
    assert doc["residuals"]["weyl_star"] < 1e-10
    assert doc["residuals"]["gauss"] < 1e-8


def test_cross_section_records_failed_levels(tmp_path):
    spec = {
        "kind": "sphere",
        "chart": "graph_cap",
        "grid": {"lower": [-0.5] * 3, "upper": [0.5] * 3, "shape": [13, 13, 13]},
    }
    (tmp_path / "s3.json").write_text(json.dumps(spec))
    report = tmp_path / "cs.json"
    argv = ["cross-section", "--metric", str(tmp_path / "s3.json"), "--report", str(report)]

    assert main(argv + ["--level", "0.05", "--level", "50"]) == EXIT_OK
    ok, missed = _load(report)["cross_sections"]
    assert ok["error"] is None and ok["residual"] < 1e-3
    assert missed["level"] == 50.0
    assert missed["residual"] is None
    assert "No valid points" in missed["error"]
    assert "level 50" in (tmp_path / "cs.txt").read_text()

    assert main(argv + ["--level", "50"]) == EXIT_INPUT
    assert _load(report)["cross_sections"][0]["error"]
