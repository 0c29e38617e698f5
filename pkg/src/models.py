"""
Pydantic schemas for metric spec documents, tolerances and reports.
"""

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


MetricKind = Literal["sphere", "flat_cartesian", "flat_polar", "quadratic_graph", "hyperbolic", "samples"]

Verdict = Literal[
    "Immersible",
    "FlatCase",
    "NotPositiveOperator",
    "WeylObstruction",
    "CodazziObstruction",
    "SurfaceCase",
]

SPHERE_CHARTS = ("polar_cap", "graph_cap")
HYPERBOLIC_CHARTS = ("ball", "polar")


class Tolerances(BaseModel):
    """Numerical tolerances; every report records the values it ran with."""
    flat: float = Field(default=1e-8, gt=0, description="Relative curvature below which a metric is flat")
    weyl: float = Field(default=1e-6, gt=0, description="Weyl* norm above which Gauss is unsolvable")
    codazzi: float = Field(default=1e-5, gt=0, description="Relative Codazzi residual tolerance")
    gauss: float = Field(default=1e-5, gt=0, description="Relative Gauss residual above which the report carries a note")
    positivity: float = Field(default=1e-9, gt=0, description="Relative operator positivity threshold")
    clamp: float = Field(default=1e-6, gt=0, description="Height integration stops when 1 - |grad h|^2 falls below this")


class GridSpec(BaseModel):
    """Sample lattice description: either origin/spacing or lower/upper corners."""
    shape: List[int]
    origin: Optional[List[float]] = None
    spacing: Optional[List[float]] = None
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_layout(self) -> "GridSpec":
        n = len(self.shape)
        if self.origin is None and self.lower is None:
            raise ValueError("grid needs either origin/spacing or lower/upper")
        if self.origin is not None:
            if self.spacing is None or len(self.origin) != n or len(self.spacing) != n:
                raise ValueError("origin and spacing must both be given with one entry per axis")
        else:
            if self.upper is None or len(self.lower) != n or len(self.upper) != n:
                raise ValueError("lower and upper must both be given with one entry per axis")
        return self

    def resolved(self) -> Dict[str, List[float]]:
        """Return origin/spacing/shape regardless of how the grid was written."""
        if self.origin is not None:
            return {"origin": list(self.origin), "spacing": list(self.spacing), "shape": list(self.shape)}
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        shape = np.asarray(self.shape, dtype=float)
        spacing = (upper - lower) / np.maximum(shape - 1.0, 1.0)
        return {"origin": lower.tolist(), "spacing": spacing.tolist(), "shape": list(self.shape)}


class SeedSpec(BaseModel):
    """Initial conditions for the height integration."""
    point: Optional[List[float]] = Field(default=None, description="Chart coordinates, snapped to the nearest node")
    h0: float = 0.0
    grad0: Optional[List[float]] = None


class MetricSpec(BaseModel):
    """A metric spec document (see docs/SPEC_FORMAT.md)."""
    kind: MetricKind
    name: Optional[str] = None
    dimension: Optional[int] = Field(default=None, ge=1)
    radius: float = 1.0
    chart: Optional[str] = None
    pi0: Optional[List[List[float]]] = None
    path: Optional[str] = None
    grid: Optional[GridSpec] = None
    seed: Optional[SeedSpec] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "MetricSpec":
        if self.kind == "samples":
            if not self.path:
                raise ValueError("samples spec requires 'path'")
            return self

        if self.grid is None:
            raise ValueError(f"{self.kind} spec requires 'grid'")
        if self.dimension is None:
            self.dimension = len(self.grid.shape)
        if len(self.grid.shape) != self.dimension:
            raise ValueError(f"grid has {len(self.grid.shape)} axes but dimension is {self.dimension}")

        if self.kind == "sphere":
            if self.radius <= 0:
                raise ValueError("sphere requires radius > 0")
            if self.chart not in SPHERE_CHARTS:
                raise ValueError(f"sphere chart must be one of {SPHERE_CHARTS}, got {self.chart!r}")
        elif self.kind == "hyperbolic":
            if self.radius <= 0:
                raise ValueError("hyperbolic requires radius > 0")
            if self.chart is None:
                self.chart = "ball"
            if self.chart not in HYPERBOLIC_CHARTS:
                raise ValueError(f"hyperbolic chart must be one of {HYPERBOLIC_CHARTS}, got {self.chart!r}")
        elif self.kind == "flat_polar":
            if self.dimension < 2:
                raise ValueError("flat_polar requires dimension >= 2")
        elif self.kind == "quadratic_graph":
            if self.pi0 is None:
                raise ValueError("quadratic_graph requires 'pi0'")
            pi0 = np.asarray(self.pi0, dtype=float)
            if pi0.shape != (self.dimension, self.dimension):
                raise ValueError(f"pi0 must be {self.dimension}x{self.dimension}")
            if not np.allclose(pi0, pi0.T, rtol=0.0, atol=1e-12):
                raise ValueError("pi0 must be symmetric")
        return self


class GridSummary(BaseModel):
    dimension: int
    origin: List[float]
    spacing: List[float]
    shape: List[int]


class ResidualSummary(BaseModel):
    weyl_star: float = 0.0
    gauss: Optional[float] = None
    codazzi: Optional[float] = None
    flatness: float = 0.0
    min_operator_eigenvalue: Optional[float] = None
    conditioning: Optional[float] = None
    surface_determinant: Optional[float] = None


class EmbeddingSummary(BaseModel):
    output: Optional[str] = None
    format: Optional[str] = None
    seed_index: List[int]
    h0: float
    grad0: List[float]
    valid_points: int
    total_points: int
    guaranteed_radius: Optional[float] = None
    path_independence: float
    flat_metric_flatness: float
    closure_residual: float
    induced_residual: float
    second_form_residual: float
    normal_deviation: float
    normal_norm_deviation: float


class KTupleSummary(BaseModel):
    k: int
    residual: float
    relative_residual: float
    f_positive_definite: bool
    max_condition_number: float
    inverse_identity_residual: float


class CrossSectionSummary(BaseModel):
    level: float
    residual: Optional[float] = None
    band_points: int = 0
    min_scaling_factor: Optional[float] = None
    max_scaling_factor: Optional[float] = None
    error: Optional[str] = None


class RunInfo(BaseModel):
    """Volatile block: excluded when comparing reports for determinism."""
    timestamp: str
    timings: Dict[str, float] = Field(default_factory=dict)


class ReportDocument(BaseModel):
    """Serialized form of an analysis run."""
    command: str
    metric: Optional[str] = None
    verdict: Optional[Verdict] = None
    grid: GridSummary
    tolerances: Tolerances
    differentiation_order: int = 2
    residuals: ResidualSummary = Field(default_factory=ResidualSummary)
    pi_present: bool = False
    sectional_positive: Optional[bool] = None
    codimension_lower_bound: Optional[int] = None
    non_unique: bool = False
    notes: List[str] = Field(default_factory=list)
    embedding: Optional[EmbeddingSummary] = None
    k_tuple: Optional[KTupleSummary] = None
    cross_sections: List[CrossSectionSummary] = Field(default_factory=list)
    run: Optional[RunInfo] = None
