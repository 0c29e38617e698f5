"""
Curvature of level sets of the height function.

On a level set N of h the intrinsic curvature is the tangential part of
R_M plus K ^ K, K = ((1 - |grad h|^2)^(1/2) / |grad h|) P Pi P. For an
immersion built from h this equals the tangential part of R_M scaled by
1 / |grad h|^2, which is what cross_section_check measures.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .chart_core import CurvatureBundle, MetricField, TensorField
from .errors import DegenerateGradient, EmptyLevelBand, GridMismatch
from .height_field import HeightField
from .obstruction import wedge

logger = logging.getLogger(__name__)

MIN_GRADIENT = 1e-3


@dataclass(frozen=True, eq=False)
class LevelSetSample:
    point: Tuple[int, ...]
    level: float
    tangent_projector: np.ndarray
    normal_covector: np.ndarray


@dataclass(frozen=True, eq=False)
class CrossSectionResult:
    level: float
    residual: float
    band: float
    band_points: int
    min_scaling_factor: float
    max_scaling_factor: float
    samples: List[LevelSetSample] = field(default_factory=list)


def default_band(metric: MetricField, height: HeightField) -> float:
    """Half the largest change of h across one grid cell."""
    spacing = metric.grid.spacing
    grad = np.abs(height.grad[height.valid])
    if grad.size == 0:
        return 0.0
    return 0.5 * float(np.max(np.max(grad, axis=0) * spacing))


def _project(tensor: np.ndarray, projector: np.ndarray) -> np.ndarray:
    return np.einsum(
        "pia,pjb,pkc,pld,pijkl->pabcd", projector, projector, projector, projector, tensor, optimize=True
    )


def cross_section_check(
    metric: MetricField,
    curvature: CurvatureBundle,
    height: HeightField,
    pi: TensorField,
    level: float,
    band: Optional[float] = None,
) -> CrossSectionResult:
    """Largest relative mismatch between R_N and P(R_M) / |grad h|^2 over the level band."""
    grid = metric.grid
    if not (grid.same_as(curvature.grid) and grid.same_as(pi.grid)) or height.h.shape != grid.shape:
        raise GridMismatch("Cross-section inputs live on different grids")
    band = default_band(metric, height) if band is None else float(band)
    valid = height.valid & curvature.valid & pi.valid
    in_band = valid & (np.abs(np.nan_to_num(height.h, nan=np.inf) - level) < band)
    if not in_band.any():
        raise EmptyLevelBand(f"No valid points within {band:.3g} of level {level}")
    q = np.nan_to_num(height.grad_norm_sq)
    keep = in_band & (np.sqrt(np.clip(q, 0.0, None)) > MIN_GRADIENT)
    if not keep.any():
        raise DegenerateGradient(f"|grad h| < {MIN_GRADIENT} on every point of level {level}")

    n = grid.dim
    ginv = metric.inverse()[keep]
    grad = height.grad[keep]
    q_band = q[keep]
    norm = np.sqrt(q_band)
    normal = grad / norm[:, None]
    normal_up = np.einsum("pab,pb->pa", ginv, normal)
    # projector[p, c, a] = P^c_a = delta^c_a - n^c n_a
    projector = np.eye(n) - np.einsum("pc,pa->pca", normal_up, normal)

    pi_t = np.einsum("pca,pdb,pcd->pab", projector, projector, pi.values[keep])
    second = (np.sqrt(np.clip(1.0 - q_band, 0.0, None)) / norm)[:, None, None] * pi_t
    tangential = _project(curvature.riemann[keep], projector)
    intrinsic = tangential + wedge(second)
    scaled = tangential / q_band[:, None, None, None, None]

    diff = np.sqrt(np.sum((intrinsic - scaled) ** 2, axis=(1, 2, 3, 4)))
    ref = np.sqrt(np.sum(scaled ** 2, axis=(1, 2, 3, 4)))
    per_point = np.where(ref > 0, diff / np.where(ref > 0, ref, 1.0), diff)
    factors = 1.0 / q_band

    points = [tuple(int(i) for i in idx) for idx in np.argwhere(keep)]
    samples = [
        LevelSetSample(point, float(level), projector[j], normal[j])
        for j, point in enumerate(points)
    ]
    logger.info("Level %.4g: %d band points, scaling residual %.3g", level, len(points), float(np.max(per_point)))
    return CrossSectionResult(
        level=float(level),
        residual=float(np.max(per_point)),
        band=band,
        band_points=len(points),
        min_scaling_factor=float(np.min(factors)),
        max_scaling_factor=float(np.max(factors)),
        samples=samples,
    )
