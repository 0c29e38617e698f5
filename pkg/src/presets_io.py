"""
Metric fixtures with exact derivatives, metric spec documents, sampled
field files, and report / embedding writers.
"""

import logging
import os
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .chart_core import AnalyticMetric, ChartGrid, MetricField
from .errors import IoError, NotPositiveDefinite, SchemaError, SpecError
from .flat_immersion import ImmersionGrid
from .general_k import KTupleCandidate
from .models import MetricSpec, ReportDocument
from .utils import REPO_ROOT, ensure_parent_dir, load_json, render_template

logger = logging.getLogger(__name__)

PRESET_DIR = REPO_ROOT / "data"


# ---------------------------------------------------------------------------
# Analytic metrics
# ---------------------------------------------------------------------------

def flat_cartesian(n: int) -> AnalyticMetric:
    def metric(x):
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    return AnalyticMetric(
        metric,
        lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
        lambda x: np.zeros(x.shape[:-1] + (n, n, n, n)),
    )


def quadratic_graph(pi0: np.ndarray) -> AnalyticMetric:
    """Induced metric of the graph v -> (v, Pi0(v, v) / 2): g = I + u u^T, u = Pi0 v."""
    pi0 = np.asarray(pi0, dtype=float)
    n = pi0.shape[0]

    def metric(x):
        u = x @ pi0
        return np.eye(n) + np.einsum("...a,...b->...ab", u, u)

    def first(x):
        u = x @ pi0
        return np.einsum("ac,...b->...cab", pi0, u) + np.einsum("...a,bc->...cab", u, pi0)

    def second(x):
        ddg = np.einsum("ac,bd->dcab", pi0, pi0) + np.einsum("ad,bc->dcab", pi0, pi0)
        return np.broadcast_to(ddg, x.shape[:-1] + (n, n, n, n)).copy()

    return AnalyticMetric(metric, first, second)


# (F, F'/F, F''/F) for the warping factors of diagonal metrics
Warp = Tuple[Callable, Callable, Callable]
SIN: Warp = (np.sin, lambda t: np.cos(t) / np.sin(t), lambda t: -np.ones_like(t))
SINH: Warp = (np.sinh, lambda t: np.cosh(t) / np.sinh(t), lambda t: np.ones_like(t))
LINEAR: Warp = (lambda t: t, lambda t: 1.0 / t, lambda t: np.zeros_like(t))


def warped_diagonal(scale: float, warps: Sequence[Warp]) -> AnalyticMetric:
    """
    g = diag(D_0, ..., D_{n-1}), D_a = scale * prod_{k<a} F_k(x_k)^2.

    `warps` has one entry per axis; the last axis never warps anything.
    """
    n = len(warps)
    below = np.tri(n, n, -1, dtype=bool).T  # below[c, a] = c < a

    def _factors(x):
        squares = np.stack([warps[k][0](x[..., k]) ** 2 for k in range(n)], axis=-1)
        diag = np.empty(x.shape[:-1] + (n,))
        for a in range(n):
            diag[..., a] = scale * np.prod(squares[..., :a], axis=-1)
        ratio = np.zeros(x.shape[:-1] + (n,))
        curve = np.zeros(x.shape[:-1] + (n,))
        for k in range(n - 1):
            ratio[..., k] = warps[k][1](x[..., k])
            curve[..., k] = warps[k][2](x[..., k])
        return diag, ratio, curve

    def metric(x):
        diag = _factors(x)[0]
        return np.einsum("...a,ab->...ab", diag, np.eye(n))

    def first(x):
        diag, ratio, _ = _factors(x)
        d_diag = 2.0 * ratio[..., :, None] * diag[..., None, :] * below
        return np.einsum("...ca,ab->...cab", d_diag, np.eye(n))

    def second(x):
        diag, ratio, curve = _factors(x)
        mixed = 4.0 * ratio[..., :, None] * ratio[..., None, :]
        mixed = mixed + np.einsum("...c,dc->...dc", 2.0 * curve - 2.0 * ratio ** 2, np.eye(n))
        mask = below[:, None, :] & below[None, :, :]
        dd_diag = mixed[..., :, :, None] * diag[..., None, None, :] * mask
        return np.einsum("...dca,ab->...dcab", dd_diag, np.eye(n))

    return AnalyticMetric(metric, first, second)


def sphere_polar_cap(n: int, radius: float = 1.0) -> AnalyticMetric:
    """r^2 (d rho^2 + sin^2 rho dOmega^2) in hyperspherical angles."""
    return warped_diagonal(radius ** 2, [SIN] * n)


def flat_polar(n: int) -> AnalyticMetric:
    """d rho^2 + rho^2 dOmega^2 in hyperspherical coordinates."""
    return warped_diagonal(1.0, [LINEAR] + [SIN] * (n - 1))


def hyperbolic_polar(n: int, radius: float = 1.0) -> AnalyticMetric:
    return warped_diagonal(radius ** 2, [SINH] + [SIN] * (n - 1))


def sphere_graph_cap(n: int, radius: float = 1.0) -> AnalyticMetric:
    """Upper hemisphere as a graph over |x| < r: g = I + x x^T / (r^2 - |x|^2)."""
    r2 = radius ** 2
    eye = np.eye(n)

    def _w(x):
        return 1.0 / (r2 - np.sum(x ** 2, axis=-1))

    def metric(x):
        return eye + np.einsum("...a,...b->...ab", x, x) * _w(x)[..., None, None]

    def first(x):
        w = _w(x)[..., None, None, None]
        lin = np.einsum("ac,...b->...cab", eye, x) + np.einsum("...a,bc->...cab", x, eye)
        cubic = 2.0 * np.einsum("...a,...b,...c->...cab", x, x, x)
        return lin * w + cubic * w ** 2

    def second(x):
        w = _w(x)[..., None, None, None, None]
        const = np.einsum("ac,bd->dcab", eye, eye) + np.einsum("ad,bc->dcab", eye, eye)
        lin_c = np.einsum("ac,...b->...cab", eye, x) + np.einsum("...a,bc->...cab", x, eye)
        term2 = 2.0 * np.einsum("...cab,...d->...dcab", lin_c, x)
        term3 = 2.0 * np.einsum("...dab,...c->...dcab", lin_c, x)
        xx = np.einsum("...a,...b->...ab", x, x)
        term4 = 2.0 * np.einsum("...ab,dc->...dcab", xx, eye)
        term5 = 8.0 * np.einsum("...ab,...c,...d->...dcab", xx, x, x)
        return const * w + (term2 + term3 + term4) * w ** 2 + term5 * w ** 3

    return AnalyticMetric(metric, first, second)


def hyperbolic_ball(n: int, radius: float = 1.0) -> AnalyticMetric:
    """Poincare ball: g = phi I, phi = 4 r^2 / (1 - |x|^2)^2, curvature -1/r^2."""
    r2 = radius ** 2
    eye = np.eye(n)

    def _q(x):
        return 1.0 - np.sum(x ** 2, axis=-1)

    def metric(x):
        return (4.0 * r2 / _q(x) ** 2)[..., None, None] * eye

    def first(x):
        d_phi = 16.0 * r2 * x / (_q(x) ** 3)[..., None]
        return np.einsum("...c,ab->...cab", d_phi, eye)

    def second(x):
        q = _q(x)[..., None, None]
        dd_phi = 16.0 * r2 * (eye / q ** 3 + 6.0 * np.einsum("...c,...d->...dc", x, x) / q ** 4)
        return np.einsum("...dc,ab->...dcab", dd_phi, eye)

    return AnalyticMetric(metric, first, second)


def analytic_for(spec: MetricSpec) -> AnalyticMetric:
    n = spec.dimension
    if spec.kind == "flat_cartesian":
        return flat_cartesian(n)
    if spec.kind == "flat_polar":
        return flat_polar(n)
    if spec.kind == "quadratic_graph":
        return quadratic_graph(np.asarray(spec.pi0, dtype=float))
    if spec.kind == "sphere":
        if spec.chart == "polar_cap":
            return sphere_polar_cap(n, spec.radius)
        return sphere_graph_cap(n, spec.radius)
    if spec.kind == "hyperbolic":
        if spec.chart == "polar":
            return hyperbolic_polar(n, spec.radius)
        return hyperbolic_ball(n, spec.radius)
    raise SpecError(f"No analytic metric for kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Spec documents
# ---------------------------------------------------------------------------

def read_spec(path: str) -> MetricSpec:
    """Parse and validate a metric spec document (JSON)."""
    try:
        raw = load_json(path)
    except FileNotFoundError as exc:
        raise IoError(f"Spec file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"Cannot read spec file {path}: {exc}") from exc
    except ValueError as exc:
        raise SpecError(f"Spec file {path} is not valid JSON: {exc}") from exc
    try:
        spec = MetricSpec.model_validate(raw)
    except ValidationError as exc:
        raise SpecError(f"Invalid metric spec {path}: {exc}") from exc
    if spec.kind == "samples" and not os.path.isabs(spec.path):
        spec.path = os.path.join(os.path.dirname(os.path.abspath(path)), spec.path)
    if spec.name is None:
        spec.name = Path(path).stem
    return spec


def grid_for(spec: MetricSpec) -> ChartGrid:
    layout = spec.grid.resolved()
    try:
        return ChartGrid(np.asarray(layout["origin"]), np.asarray(layout["spacing"]), tuple(layout["shape"]))
    except ValueError as exc:
        raise SpecError(f"Invalid grid: {exc}") from exc


def generate(spec: MetricSpec) -> MetricField:
    """Sample the spec's metric on its grid, keeping exact evaluators when available."""
    if spec.kind == "samples":
        loaded = read_samples(spec.path)
        if not isinstance(loaded, MetricField):
            raise SpecError(f"Samples file {spec.path} holds candidate fields, not a metric")
        return loaded
    grid = grid_for(spec)
    analytic = analytic_for(spec)
    coords = grid.coordinates()
    values = analytic.metric(coords)
    if not np.all(np.isfinite(values)):
        raise SpecError(f"{spec.kind} metric is singular somewhere on the grid; shrink the box")
    try:
        field = MetricField(grid, values, analytic)
    except NotPositiveDefinite as exc:
        raise SpecError(f"{spec.kind} metric is degenerate on the grid: {exc}") from exc
    logger.info("Generated %s metric (%s) on grid %s", spec.kind, spec.chart or "-", grid.shape)
    return field


def load_metric(path: str) -> Tuple[MetricSpec, MetricField]:
    spec = read_spec(path)
    return spec, generate(spec)


def seed_index(spec: MetricSpec, grid: ChartGrid, point: Optional[Sequence[float]] = None) -> Tuple[int, ...]:
    """Grid node nearest to the requested seed point, else the spec's seed, else the centre."""
    if point is None and spec.seed is not None:
        point = spec.seed.point
    if point is None:
        return grid.center_index()
    if len(point) != grid.dim:
        raise SpecError(f"Seed point has {len(point)} coordinates, expected {grid.dim}")
    return grid.nearest_index(point)


def bundled_presets(preset_dir: Optional[Union[str, Path]] = None) -> Dict[str, str]:
    """Names and paths of the shipped spec documents."""
    directory = Path(preset_dir) if preset_dir is not None else PRESET_DIR
    return {p.stem: str(p) for p in sorted(directory.glob("*.json"))}


# ---------------------------------------------------------------------------
# Samples files
# ---------------------------------------------------------------------------

def _upper_pairs(n: int) -> List[Tuple[int, int]]:
    return [(a, b) for a in range(n) for b in range(a, n)]


def write_samples(obj: Union[MetricField, KTupleCandidate], path: str) -> None:
    """
    CSV with '# key: value' header lines, a commented column line, then one
    row per node: grid index, then g upper triangle or candidate fields.
    """
    grid = obj.grid
    n = grid.dim
    index = np.indices(grid.shape).reshape(n, -1).T
    if isinstance(obj, MetricField):
        kind = "metric"
        pairs = _upper_pairs(n)
        columns = [f"g_{a + 1}{b + 1}" for a, b in pairs]
        flat = obj.values.reshape(-1, n, n)
        data = np.stack([flat[:, a, b] for a, b in pairs], axis=1)
    else:
        kind = "candidate"
        columns = [f"h_{t + 1}" for t in range(obj.k)]
        data = obj.values.reshape(obj.k, -1).T

    header = "\n".join([
        f"kind: {kind}",
        "shape: " + " ".join(str(s) for s in grid.shape),
        "origin: " + " ".join(f"{v:.17g}" for v in grid.origin),
        "spacing: " + " ".join(f"{v:.17g}" for v in grid.spacing),
        ",".join([f"i_{k + 1}" for k in range(n)] + columns),
    ])
    rows = np.hstack([index.astype(float), data])
    ensure_parent_dir(path)
    try:
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header, comments="# ")
    except OSError as exc:
        raise IoError(f"Cannot write samples file {path}: {exc}") from exc


def _read_header(path: str) -> Tuple[Dict[str, str], List[str]]:
    meta: Dict[str, str] = {}
    columns: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if ":" in body:
                key, value = body.split(":", 1)
                meta[key.strip()] = value.strip()
            elif body:
                columns = [c.strip() for c in body.split(",")]
    return meta, columns


def read_samples(path: str) -> Union[MetricField, KTupleCandidate]:
    """Load a samples CSV written by write_samples (or by hand, in the same schema)."""
    try:
        meta, columns = _read_header(path)
        rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except FileNotFoundError as exc:
        raise IoError(f"Samples file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"Cannot read samples file {path}: {exc}") from exc
    except ValueError as exc:
        raise SchemaError(f"Samples file {path} has non-numeric entries: {exc}") from exc

    try:
        shape = tuple(int(s) for s in meta["shape"].split())
        origin = np.array([float(v) for v in meta["origin"].split()])
        spacing = np.array([float(v) for v in meta["spacing"].split()])
        kind = meta.get("kind", "metric")
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"Samples file {path} needs shape, origin and spacing header lines") from exc
    try:
        grid = ChartGrid(origin, spacing, shape)
    except ValueError as exc:
        raise SchemaError(f"Samples file {path}: {exc}") from exc

    n = grid.dim
    if rows.shape[0] != grid.size:
        raise SchemaError(f"Samples file {path} has {rows.shape[0]} rows, expected {grid.size}")
    if columns and len(columns) != rows.shape[1]:
        raise SchemaError(f"Samples file {path} declares {len(columns)} columns but rows have {rows.shape[1]}")
    index = rows[:, :n].astype(int)
    if np.any(index < 0) or np.any(index >= np.asarray(shape)):
        raise SchemaError(f"Samples file {path} has grid indices outside shape {shape}")
    flat_index = np.ravel_multi_index(tuple(index.T), shape)
    if len(np.unique(flat_index)) != grid.size:
        raise SchemaError(f"Samples file {path} repeats grid points")
    order = np.argsort(flat_index)
    data = rows[order, n:]

    if kind == "candidate":
        return KTupleCandidate(grid, data.T.reshape((data.shape[1],) + shape))
    if kind != "metric":
        raise SchemaError(f"Unknown samples kind {kind!r}")

    names = columns[n:] if columns else []
    values = np.empty((grid.size, n, n))
    if data.shape[1] == n * n:
        values[:] = data.reshape(-1, n, n)
        if not np.array_equal(values, np.swapaxes(values, -1, -2)):
            raise SchemaError(f"Samples file {path} has a non-symmetric metric row")
    elif data.shape[1] == n * (n + 1) // 2:
        pairs = _upper_pairs(n)
        if names and names != [f"g_{a + 1}{b + 1}" for a, b in pairs]:
            raise SchemaError(f"Samples file {path} metric columns must be the upper triangle g_ab, a <= b")
        for col, (a, b) in enumerate(pairs):
            values[:, a, b] = data[:, col]
            values[:, b, a] = data[:, col]
    else:
        raise SchemaError(f"Samples file {path} has {data.shape[1]} metric columns for dimension {n}")
    try:
        return MetricField(grid, values.reshape(shape + (n, n)))
    except (NotPositiveDefinite, ValueError) as exc:
        raise SchemaError(f"Samples file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Reports and embeddings
# ---------------------------------------------------------------------------

def render_summary(document: ReportDocument) -> str:
    return render_template("report_summary.txt.j2", report=document.model_dump())


def write_report(document: ReportDocument, path: str) -> None:
    """JSON report at `path` plus a plain-text summary next to it (.txt)."""
    ensure_parent_dir(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(document.model_dump_json(indent=2))
            f.write("\n")
        with open(str(Path(path).with_suffix(".txt")), "w", encoding="utf-8") as f:
            f.write(render_summary(document))
    except OSError as exc:
        raise IoError(f"Cannot write report {path}: {exc}") from exc
    logger.info("Report written to %s", path)


def write_embedding(imm: ImmersionGrid, path: str, fmt: str = "csv") -> None:
    """CSV of chart and immersion coordinates, or an OBJ triangle mesh for surfaces."""
    grid = imm.metric.grid
    n = grid.dim
    ensure_parent_dir(path)
    if fmt == "csv":
        coords = grid.coordinates().reshape(-1, n)
        mapped = imm.points.reshape(-1, n + 1)
        flags = imm.valid.reshape(-1, 1).astype(float)
        header = ",".join([f"x_{k + 1}" for k in range(n)] + [f"X_{k + 1}" for k in range(n + 1)] + ["valid"])
        try:
            np.savetxt(path, np.hstack([coords, mapped, flags]), fmt="%.17g", delimiter=",", header=header, comments="")
        except OSError as exc:
            raise IoError(f"Cannot write embedding {path}: {exc}") from exc
    elif fmt == "obj":
        if n != 2:
            raise SpecError(f"OBJ export needs a surface (n = 2), got n = {n}")
        rows, cols = grid.shape
        vertices = np.where(imm.valid[..., None], np.nan_to_num(imm.points), 0.0).reshape(-1, 3)
        valid = imm.valid
        quads = valid[:-1, :-1] & valid[1:, :-1] & valid[1:, 1:] & valid[:-1, 1:]
        faces = []
        for i, j in np.argwhere(quads):
            a = i * cols + j + 1
            b = (i + 1) * cols + j + 1
            c = (i + 1) * cols + j + 2
            d = i * cols + j + 2
            faces.append((a, b, c))
            faces.append((a, c, d))
        text = render_template(
            "embedding.obj.j2",
            vertices=[tuple(f"{v:.10g}" for v in vertex) for vertex in vertices],
            faces=faces,
            shape=(rows, cols),
            valid_points=int(valid.sum()),
        )
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as exc:
            raise IoError(f"Cannot write embedding {path}: {exc}") from exc
    else:
        raise SpecError(f"Unknown embedding format {fmt!r}; use csv or obj")
    logger.info("Embedding written to %s (%s)", path, fmt)
