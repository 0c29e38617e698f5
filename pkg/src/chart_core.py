"""
Chart, field and curvature core.

Everything here works on a single rectangular box chart sampled on a
ChartGrid. Fields store their grid axes first, then their tensor slots:
a metric is an array of shape (*grid.shape, n, n). Derivatives are central
finite differences (order 2 or 4) unless the metric carries analytic
evaluators, in which case those are used instead.

Index conventions:
- partial derivatives put the derivative index first: dg[..., c, a, b] = d_c g_ab
- gamma[..., a, b, c] = Gamma^a_bc
- riemann[..., a, b, c, d] = R_abcd with R_abab > 0 on a round sphere
- covariant derivatives append the derivative slot last: T_ab;c
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import BoundaryStencil, GridMismatch, InvalidSeed, NotPositiveDefinite

logger = logging.getLogger(__name__)

# (offset, weight) pairs of the first-derivative central stencils
STENCILS = {
    2: ((-1, -0.5), (1, 0.5)),
    4: ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)),
}

SYMMETRY_RTOL = 1e-12

# step of the exact-evaluator stencil, as a fraction of the grid spacing
EVALUATOR_STEP = 0.02


def _check_order(order: int) -> int:
    if order not in STENCILS:
        raise ValueError(f"Unsupported differentiation order {order}; use 2 or 4")
    return order


@dataclass(frozen=True, eq=False)
class ChartGrid:
    """Rectangular sample lattice over a box in R^n."""
    origin: np.ndarray
    spacing: np.ndarray
    shape: Tuple[int, ...]

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        spacing = np.asarray(self.spacing, dtype=float).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        if len(shape) < 1:
            raise ValueError("ChartGrid needs at least one axis")
        if origin.size != len(shape) or spacing.size != len(shape):
            raise ValueError("origin, spacing and shape must have one entry per axis")
        if np.any(spacing <= 0):
            raise ValueError(f"Grid spacing must be positive, got {spacing.tolist()}")
        if any(s < 5 for s in shape):
            raise ValueError(f"Every axis needs at least 5 points, got shape {shape}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_box(cls, lower: Sequence[float], upper: Sequence[float], shape: Sequence[int]) -> "ChartGrid":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        counts = np.asarray(shape, dtype=float)
        return cls(origin=lower, spacing=(upper - lower) / (counts - 1.0), shape=tuple(shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def coordinates(self) -> np.ndarray:
        """Chart coordinates of every node, shape (*shape, n)."""
        axes = [self.axis_coordinates(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def point(self, index: Sequence[int]) -> np.ndarray:
        return self.origin + self.spacing * np.asarray(index, dtype=float)

    def nearest_index(self, coords: Sequence[float]) -> Tuple[int, ...]:
        raw = np.rint((np.asarray(coords, dtype=float) - self.origin) / self.spacing).astype(int)
        return tuple(int(np.clip(raw[k], 0, self.shape[k] - 1)) for k in range(self.dim))

    def center_index(self) -> Tuple[int, ...]:
        return tuple(s // 2 for s in self.shape)

    def contains_index(self, index: Sequence[int]) -> bool:
        return len(index) == self.dim and all(0 <= i < s for i, s in zip(index, self.shape))

    def refined(self) -> "ChartGrid":
        """Same box with half the spacing; every old node stays a node."""
        return ChartGrid(self.origin, self.spacing / 2.0, tuple(2 * s - 1 for s in self.shape))

    def same_as(self, other: "ChartGrid") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.spacing, other.spacing)
        )

    def summary(self) -> Dict[str, list]:
        return {
            "dimension": self.dim,
            "origin": self.origin.tolist(),
            "spacing": self.spacing.tolist(),
            "shape": list(self.shape),
        }


@dataclass(frozen=True)
class AnalyticMetric:
    """Exact evaluators of g, dg and ddg at chart coordinates of shape (..., n)."""
    metric: Callable[[np.ndarray], np.ndarray]
    first: Callable[[np.ndarray], np.ndarray]
    second: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric positive-definite g_ab sampled on a grid."""
    grid: ChartGrid
    values: np.ndarray
    analytic: Optional[AnalyticMetric] = None

    def __post_init__(self):
        n = self.grid.dim
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape + (n, n):
            raise GridMismatch(f"Metric values have shape {values.shape}, expected {self.grid.shape + (n, n)}")
        scale = max(float(np.max(np.abs(values))), 1.0)
        if np.max(np.abs(values - np.swapaxes(values, -1, -2))) > SYMMETRY_RTOL * scale:
            raise ValueError("Metric is not symmetric")
        min_eig = float(np.min(np.linalg.eigvalsh(values)))
        if min_eig <= 0.0:
            raise NotPositiveDefinite(f"Metric is not positive-definite (min eigenvalue {min_eig:.3g})", min_eig)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_analytic(cls, grid: ChartGrid, analytic: AnalyticMetric) -> "MetricField":
        return cls(grid, analytic.metric(grid.coordinates()), analytic)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def sampled(self) -> "MetricField":
        """Copy without analytic evaluators, forcing finite differences."""
        return MetricField(self.grid, self.values)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.values)


@dataclass(frozen=True, eq=False)
class TensorField:
    """
    Tensor field on a grid.

    `indices` has one character per slot: 'd' for covariant, 'u' for
    contravariant. `symmetries` lists slot pairs that must be symmetric.
    """
    grid: ChartGrid
    values: np.ndarray
    indices: str = ""
    valid: Optional[np.ndarray] = None
    symmetries: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        n = self.grid.dim
        expected = self.grid.shape + (n,) * len(self.indices)
        if values.shape != expected:
            raise GridMismatch(f"Field values have shape {values.shape}, expected {expected}")
        if set(self.indices) - {"u", "d"}:
            raise ValueError(f"Slot types must be 'u' or 'd', got {self.indices!r}")
        valid = np.ones(self.grid.shape, dtype=bool) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != self.grid.shape:
            raise GridMismatch("Validity mask does not match the grid")
        offset = self.grid.dim
        scale = max(float(np.max(np.abs(values[valid]))) if valid.any() else 0.0, 1.0)
        for a, b in self.symmetries:
            swapped = np.swapaxes(values, offset + a, offset + b)
            if np.max(np.abs((values - swapped)[valid]), initial=0.0) > SYMMETRY_RTOL * scale:
                raise ValueError(f"Declared symmetry of slots {a},{b} does not hold")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def valence(self) -> Tuple[int, int]:
        return self.indices.count("d"), self.indices.count("u")

    @property
    def rank(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """Connection and curvature of a metric, valid where `valid` is set."""
    grid: ChartGrid
    gamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    valid: np.ndarray
    flatness: Optional[np.ndarray] = None

    def __post_init__(self):
        # without the term sizes, any nonzero curvature counts as fully curved
        if self.flatness is None:
            nonzero = np.any(self.riemann != 0.0, axis=(-4, -3, -2, -1))
            object.__setattr__(self, "flatness", nonzero.astype(float))

    def at(self, index: Sequence[int]) -> np.ndarray:
        index = tuple(index)
        if not self.valid[index]:
            raise BoundaryStencil(f"Curvature is not available at boundary point {index}")
        return self.riemann[index]


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def _slab(ndim: int, axis: int, slc: slice) -> Tuple[slice, ...]:
    index = [slice(None)] * ndim
    index[axis] = slc
    return tuple(index)


def partial_derivative(
    values: np.ndarray,
    valid: np.ndarray,
    grid: ChartGrid,
    axis: int,
    order: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central difference along one grid axis; returns (derivative, validity)."""
    reach = _check_order(order) // 2
    count = grid.shape[axis]
    ndim = values.ndim
    inner = slice(reach, count - reach)
    result = np.zeros_like(values, dtype=float)
    for offset, weight in STENCILS[order]:
        shifted = slice(reach + offset, count - reach + offset)
        result[_slab(ndim, axis, inner)] += weight * values[_slab(ndim, axis, shifted)]
    result /= grid.spacing[axis]

    ok = np.zeros(grid.shape, dtype=bool)
    ok[_slab(grid.dim, axis, inner)] = True
    for offset in range(-reach, reach + 1):
        shifted = slice(reach + offset, count - reach + offset)
        ok[_slab(grid.dim, axis, inner)] &= valid[_slab(grid.dim, axis, shifted)]
    return result, ok


def gradient(
    values: np.ndarray,
    valid: np.ndarray,
    grid: ChartGrid,
    order: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """All partial derivatives, derivative index inserted right after the grid axes."""
    parts = []
    ok = np.array(valid, dtype=bool)
    for axis in range(grid.dim):
        d, v = partial_derivative(values, valid, grid, axis, order)
        parts.append(d)
        ok &= v
    return np.stack(parts, axis=grid.dim), ok


def evaluator_gradient(
    evaluate: Callable[[np.ndarray], np.ndarray],
    grid: ChartGrid,
    step: float = EVALUATOR_STEP,
) -> np.ndarray:
    """
    Partial derivatives of an exact evaluator at every node.

    Uses the fourth-order stencil with a sub-grid step, so the only grid
    dependence left is roundoff. Same layout as gradient().
    """
    coords = grid.coordinates()
    parts = []
    for axis in range(grid.dim):
        delta = step * grid.spacing[axis]
        acc = 0.0
        for offset, weight in STENCILS[4]:
            shifted = coords.copy()
            shifted[..., axis] += offset * delta
            acc = acc + weight * evaluate(shifted)
        parts.append(acc / delta)
    return np.stack(parts, axis=grid.dim)


def erode_mask(valid: np.ndarray, grid: ChartGrid, order: int = 2, passes: int = 1) -> np.ndarray:
    """Shrink a validity mask by the reach of `passes` derivative stencils."""
    mask = np.asarray(valid, dtype=bool)
    zeros = np.zeros(grid.shape)
    for _ in range(passes):
        mask = gradient(zeros, mask, grid, order)[1]
    return mask


def _point_gradient(values: np.ndarray, grid: ChartGrid, index: Tuple[int, ...], order: int) -> np.ndarray:
    reach = _check_order(order) // 2
    parts = []
    for axis in range(grid.dim):
        if index[axis] < reach or index[axis] >= grid.shape[axis] - reach:
            raise BoundaryStencil(f"Point {index} is within {reach} nodes of the boundary along axis {axis}")
        acc = 0.0
        for offset, weight in STENCILS[order]:
            neighbour = list(index)
            neighbour[axis] += offset
            acc = acc + weight * values[tuple(neighbour)]
        parts.append(acc / grid.spacing[axis])
    return np.stack(parts, axis=0)


# ---------------------------------------------------------------------------
# Connection and curvature
# ---------------------------------------------------------------------------

def _christoffel_from(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # lowered[d, b, c] = d_b g_dc + d_c g_db - d_d g_bc
    lowered = (
        np.einsum("...bdc->...dbc", dg)
        + np.einsum("...cdb->...dbc", dg)
        - dg
    )
    return 0.5 * np.einsum("...ad,...dbc->...abc", ginv, lowered)


def _christoffel_derivative(ginv: np.ndarray, dg: np.ndarray, ddg: np.ndarray) -> np.ndarray:
    lowered = np.einsum("...bdc->...dbc", dg) + np.einsum("...cdb->...dbc", dg) - dg
    dlowered = (
        np.einsum("...ebdc->...edbc", ddg)
        + np.einsum("...ecdb->...edbc", ddg)
        - ddg
    )
    dginv = -np.einsum("...ap,...epq,...qd->...ead", ginv, dg, ginv)
    return 0.5 * (
        np.einsum("...ead,...dbc->...eabc", dginv, lowered)
        + np.einsum("...ad,...edbc->...eabc", ginv, dlowered)
    )


def christoffel_field(metric: MetricField, order: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Gamma^a_bc at every node, with the validity mask of the stencil."""
    grid = metric.grid
    ginv = metric.inverse()
    if metric.analytic is not None:
        dg = metric.analytic.first(grid.coordinates())
        valid = np.ones(grid.shape, dtype=bool)
    else:
        dg, valid = gradient(metric.values, np.ones(grid.shape, dtype=bool), grid, order)
    return _christoffel_from(ginv, dg), valid


def christoffel(metric: MetricField, point: Sequence[int], order: int = 2) -> np.ndarray:
    """Gamma^a_bc at one grid node."""
    index = tuple(int(i) for i in point)
    grid = metric.grid
    if not grid.contains_index(index):
        raise BoundaryStencil(f"Point {index} is outside the grid")
    g = metric.values[index]
    if metric.analytic is not None:
        dg = metric.analytic.first(grid.point(index))
    else:
        dg = _point_gradient(metric.values, grid, index, order)
    return _christoffel_from(np.linalg.inv(g), dg)


def _curvature_from(g, ginv, gamma, dgamma):
    linear = np.einsum("...cadb->...abcd", dgamma) - np.einsum("...dacb->...abcd", dgamma)
    quadratic = (
        np.einsum("...ace,...edb->...abcd", gamma, gamma)
        - np.einsum("...ade,...ecb->...abcd", gamma, gamma)
    )
    rup = linear + quadratic
    riemann = np.einsum("...ae,...ebcd->...abcd", g, rup)
    ricci = np.einsum("...ac,...abcd->...bd", ginv, riemann)
    scalar = np.einsum("...bd,...bd->...", ginv, ricci)
    scale = (
        np.sqrt(np.sum(linear ** 2, axis=(-4, -3, -2, -1)))
        + np.sqrt(np.sum(quadratic ** 2, axis=(-4, -3, -2, -1)))
    )
    return riemann, ricci, scalar, rup, scale


def analytic_christoffel(analytic: AnalyticMetric, coords: np.ndarray) -> np.ndarray:
    """Gamma^a_bc at arbitrary chart coordinates (..., n)."""
    return _christoffel_from(np.linalg.inv(analytic.metric(coords)), analytic.first(coords))


def analytic_curvature(analytic: AnalyticMetric, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(g_ab, R_abcd) at arbitrary chart coordinates (..., n)."""
    g = analytic.metric(coords)
    dg = analytic.first(coords)
    ddg = analytic.second(coords)
    ginv = np.linalg.inv(g)
    gamma = _christoffel_from(ginv, dg)
    dgamma = _christoffel_derivative(ginv, dg, ddg)
    riemann_dddd = _curvature_from(g, ginv, gamma, dgamma)[0]
    return g, riemann_dddd


def riemann(metric: MetricField, order: int = 2) -> CurvatureBundle:
    """Christoffel symbols, R_abcd, Ricci and scalar curvature on the grid."""
    grid = metric.grid
    g = metric.values
    ginv = metric.inverse()
    if metric.analytic is not None:
        coords = grid.coordinates()
        dg = metric.analytic.first(coords)
        ddg = metric.analytic.second(coords)
        gamma = _christoffel_from(ginv, dg)
        dgamma = _christoffel_derivative(ginv, dg, ddg)
        valid = np.ones(grid.shape, dtype=bool)
    else:
        gamma, gamma_valid = christoffel_field(metric, order)
        dgamma, valid = gradient(gamma, gamma_valid, grid, order)

    riemann_dddd, ricci, scalar, rup, scale = _curvature_from(g, ginv, gamma, dgamma)
    riemann_dddd[~valid] = 0.0
    ricci[~valid] = 0.0
    scalar[~valid] = 0.0
    logger.debug(
        "Curvature on %s grid: %d/%d valid points, analytic=%s",
        grid.shape, int(valid.sum()), grid.size, metric.analytic is not None,
    )
    rup_norm = np.sqrt(np.sum(rup ** 2, axis=(-4, -3, -2, -1)))
    flatness = np.where(scale > 0, rup_norm / np.where(scale > 0, scale, 1.0), 0.0)
    return CurvatureBundle(grid, gamma, riemann_dddd, ricci, scalar, valid, flatness)


def flatness_ratio(bundle: CurvatureBundle) -> float:
    """
    Largest |R^a_bcd| relative to the size of the terms that build it.

    The ratio is ~1 for a curved metric and ~0 when the derivative and
    quadratic Christoffel terms cancel, independent of the chart's scale.
    """
    if not bundle.valid.any():
        return 0.0
    return float(np.max(bundle.flatness[bundle.valid]))


def riemann_symmetry_residuals(bundle: CurvatureBundle) -> Dict[str, float]:
    """Relative violations of the algebraic curvature symmetries."""
    r = bundle.riemann
    valid = bundle.valid
    return {
        "antisymmetry_ab": relative_norm(r + np.einsum("...bacd->...abcd", r), r, valid),
        "antisymmetry_cd": relative_norm(r + np.einsum("...abdc->...abcd", r), r, valid),
        "pair_symmetry": relative_norm(r - np.einsum("...cdab->...abcd", r), r, valid),
        "first_bianchi": relative_norm(
            r + np.einsum("...acdb->...abcd", r) + np.einsum("...adbc->...abcd", r), r, valid
        ),
    }


def covariant_derivative(
    metric: MetricField,
    tensor: TensorField,
    order: int = 2,
    gamma: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> TensorField:
    """
    Levi-Civita derivative; the new covariant slot is appended last.

    When `evaluate` gives the field exactly at chart coordinates, partial
    derivatives come from evaluator_gradient instead of the grid stencil.
    """
    grid = metric.grid
    if not grid.same_as(tensor.grid):
        raise GridMismatch("Field and metric live on different grids")
    christ, christ_valid = gamma if gamma is not None else christoffel_field(metric, order)

    if evaluate is not None:
        partials, valid = evaluator_gradient(evaluate, grid), tensor.valid.copy()
    else:
        partials, valid = gradient(tensor.values, tensor.valid, grid, order)
    result = np.moveaxis(partials, grid.dim, -1)

    letters = "abcdefghijklmnop"[: tensor.rank]
    out = letters + "z"
    for slot, kind in enumerate(tensor.indices):
        swapped = letters[:slot] + "y" + letters[slot + 1:]
        if kind == "d":
            spec = f"...y{letters[slot]}z,...{swapped}->...{out}"
            result = result - np.einsum(spec, christ, tensor.values)
        else:
            spec = f"...{letters[slot]}yz,...{swapped}->...{out}"
            result = result + np.einsum(spec, christ, tensor.values)

    valid = valid & christ_valid
    result[~valid] = 0.0
    return TensorField(grid, result, tensor.indices + "d", valid, tensor.symmetries)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def orthonormal_frame(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frame E[..., a, i] and coframe theta[..., i, a] of a metric value.

    With g = L L^T (lower Cholesky factor), theta = L^T and E = theta^-1,
    so that E^T g E = identity and theta^T theta = g.
    """
    g = np.asarray(g, dtype=float)
    try:
        lower = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Metric value is not positive-definite: {exc}") from exc
    theta = np.swapaxes(lower, -1, -2)
    frame = np.linalg.inv(theta)
    return frame, theta


def frame_components(tensor4: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """R_ijkl = E^a_i E^b_j E^c_k E^d_l R_abcd, one slot at a time."""
    out = np.einsum("...dl,...abcd->...abcl", frame, tensor4)
    out = np.einsum("...ck,...abcl->...abkl", frame, out)
    out = np.einsum("...bj,...abkl->...ajkl", frame, out)
    return np.einsum("...ai,...ajkl->...ijkl", frame, out)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def field_norm(values: np.ndarray, valid: np.ndarray) -> float:
    """RMS over valid points of the Frobenius norm of each point's slots."""
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return 0.0
    slot_axes = tuple(range(valid.ndim, values.ndim))
    per_point = np.sum(values ** 2, axis=slot_axes) if slot_axes else values ** 2
    return float(np.sqrt(np.sum(per_point[valid]) / count))


def relative_norm(diff: np.ndarray, reference: np.ndarray, valid: np.ndarray) -> float:
    """field_norm(diff) / field_norm(reference); the absolute norm when the reference vanishes."""
    num = field_norm(diff, valid)
    den = field_norm(reference, valid)
    return num / den if den > 0 else num


def pointwise_map(fn: Callable, *arrays: np.ndarray, lead_ndim: int, threads: int = 1) -> Tuple[np.ndarray, ...]:
    """
    Apply a batched per-point function over the leading axes in chunks.

    `fn` takes arrays with one leading point axis and returns a tuple of
    arrays with the same leading length. Chunks run on up to `threads`
    worker threads.
    """
    lead_shape = arrays[0].shape[:lead_ndim]
    count = int(np.prod(lead_shape)) if lead_shape else 1
    flat = [a.reshape((count,) + a.shape[lead_ndim:]) for a in arrays]

    if threads <= 1 or count < 2 * threads:
        outputs = fn(*flat)
    else:
        chunks = np.array_split(np.arange(count), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: fn(*[f[idx] for f in flat]), chunks))
        outputs = tuple(np.concatenate(group, axis=0) for group in zip(*parts))
    return tuple(o.reshape(lead_shape + o.shape[1:]) for o in outputs)


# ---------------------------------------------------------------------------
# Spine-and-fiber RK4 sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepField:
    """
    A node field read during a sweep.

    Between nodes the field is interpolated linearly along the path, unless
    `evaluate` maps chart coordinates (B, n) to exact values.
    """
    values: np.ndarray
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None


PiEvaluator = Callable[[np.ndarray], np.ndarray]
RhsFn = Callable[[np.ndarray, Dict[str, np.ndarray], int], np.ndarray]
StopFn = Callable[[np.ndarray, Dict[str, np.ndarray]], np.ndarray]


def _sample(fields, start, end, coords_a, coords_b, t):
    sampled = {}
    for name, f in fields.items():
        if f.evaluate is not None:
            sampled[name] = f.evaluate(coords_a + t * (coords_b - coords_a))
        else:
            sampled[name] = start[name] + t * (end[name] - start[name])
    return sampled


def _rk4_cell(y, rhs, fields, start, end, coords_a, coords_b, axis, step, substeps, stop):
    dt = step / substeps
    bad = np.zeros(y.shape[0], dtype=bool)
    for s in range(substeps):
        t0 = s / substeps
        half = (s + 0.5) / substeps
        t1 = (s + 1) / substeps
        f0 = _sample(fields, start, end, coords_a, coords_b, t0)
        fh = _sample(fields, start, end, coords_a, coords_b, half)
        f1 = _sample(fields, start, end, coords_a, coords_b, t1)
        k1 = rhs(y, f0, axis)
        k2 = rhs(y + 0.5 * dt * k1, fh, axis)
        k3 = rhs(y + 0.5 * dt * k2, fh, axis)
        k4 = rhs(y + dt * k3, f1, axis)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if stop is not None:
            bad |= stop(y, f1)
    return y, ~bad


def sweep_integrate(
    grid: ChartGrid,
    seed: Sequence[int],
    seed_state: np.ndarray,
    rhs: RhsFn,
    fields: Dict[str, SweepField],
    valid: np.ndarray,
    axis_order: Optional[Sequence[int]] = None,
    substeps: int = 4,
    stop: Optional[StopFn] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrate dy/dx^k = rhs(y, fields, k) outward from a seed node.

    The first axis of `axis_order` is swept from the seed (the spine); each
    later axis is swept from every node reached so far (the fibers). A
    fiber stops at the first node where `valid` is false or `stop` fires;
    that node and everything past it stay unreached.

    Returns (states of shape (*grid.shape, m), reached mask).
    """
    seed = tuple(int(i) for i in seed)
    if not grid.contains_index(seed):
        raise InvalidSeed(f"Seed {seed} is outside the grid")
    if not valid[seed]:
        raise InvalidSeed(f"Seed {seed} is not a valid node for the input fields")
    axis_order = tuple(range(grid.dim)) if axis_order is None else tuple(axis_order)
    if sorted(axis_order) != list(range(grid.dim)):
        raise ValueError(f"axis_order must be a permutation of 0..{grid.dim - 1}")

    seed_state = np.asarray(seed_state, dtype=float)
    states = np.zeros(grid.shape + seed_state.shape, dtype=float)
    reached = np.zeros(grid.shape, dtype=bool)
    states[seed] = seed_state
    reached[seed] = True
    coords = grid.coordinates()

    for axis in axis_order:
        s_view = np.moveaxis(states, axis, 0)
        r_view = np.moveaxis(reached, axis, 0)
        v_view = np.moveaxis(valid, axis, 0)
        c_view = np.moveaxis(coords, axis, 0)
        f_views = {name: np.moveaxis(f.values, axis, 0) for name, f in fields.items()}
        home = seed[axis]
        count = grid.shape[axis]

        for direction in (1, -1):
            active = r_view[home].copy()
            i = home
            while active.any() and 0 <= i + direction < count:
                j = i + direction
                active &= v_view[j]
                idx = np.nonzero(active)
                if len(idx[0]) == 0:
                    break
                start = {name: view[i][idx] for name, view in f_views.items()}
                end = {name: view[j][idx] for name, view in f_views.items()}
                y_new, ok = _rk4_cell(
                    s_view[i][idx], rhs, fields, start, end,
                    c_view[i][idx], c_view[j][idx], axis,
                    direction * grid.spacing[axis], substeps, stop,
                )
                target = s_view[j]
                target[idx] = np.where(ok[:, None] if y_new.ndim > 1 else ok, y_new, target[idx])
                marks = r_view[j]
                marks[idx] = ok
                active[idx] = ok
                i = j
        logger.debug("Sweep along axis %d reached %d nodes", axis, int(reached.sum()))

    return states, reached
