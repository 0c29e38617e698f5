"""
Curvature as a symmetric operator on 2-forms.

Frame components R_ijkl over strictly ordered pairs i<j, k<l form an
N x N symmetric matrix, N = n(n-1)/2. Functions of the operator (log, exp)
act through its eigen-decomposition. All arrays may carry leading batch
axes, so a whole grid is processed in one call.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .chart_core import frame_components
from .errors import NotCurvatureLike, NotPositiveOperator

logger = logging.getLogger(__name__)

CURVATURE_SYMMETRY_RTOL = 1e-8


@dataclass(frozen=True)
class TwoFormBasis:
    dim: int
    pairs: Tuple[Tuple[int, int], ...]

    @property
    def size(self) -> int:
        return len(self.pairs)

    def position(self, i: int, j: int) -> int:
        return self.pairs.index((i, j))

    @property
    def first(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=int)

    @property
    def second(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=int)


@lru_cache(maxsize=None)
def two_form_basis(dim: int) -> TwoFormBasis:
    pairs = tuple((i, j) for i in range(dim) for j in range(i + 1, dim))
    return TwoFormBasis(dim, pairs)


@dataclass(frozen=True, eq=False)
class CurvatureOperator:
    """Symmetric operator matrix with its ascending spectrum."""
    basis: TwoFormBasis
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_matrix(cls, basis: TwoFormBasis, matrix: np.ndarray) -> "CurvatureOperator":
        matrix = 0.5 * (matrix + np.swapaxes(matrix, -1, -2))
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        return cls(basis, matrix, eigenvalues, eigenvectors)

    @property
    def min_eigenvalue(self) -> np.ndarray:
        return self.eigenvalues[..., 0]

    @property
    def max_eigenvalue(self) -> np.ndarray:
        return self.eigenvalues[..., -1]

    def threshold(self, positivity: float) -> np.ndarray:
        """Scale-free positivity threshold: positivity * max |eigenvalue| per point."""
        return positivity * np.max(np.abs(self.eigenvalues), axis=-1)

    def is_positive(self, positivity: float = 1e-9) -> np.ndarray:
        return self.min_eigenvalue > self.threshold(positivity)

    def conditioning(self) -> np.ndarray:
        """Ratio of largest to smallest eigenvalue; inf where the smallest is not positive."""
        low = self.min_eigenvalue
        return np.where(low > 0, self.max_eigenvalue / np.where(low > 0, low, 1.0), np.inf)

    def reassembly_residual(self) -> float:
        rebuilt = _spectral(self.eigenvalues, self.eigenvectors)
        return float(np.max(np.abs(rebuilt - self.matrix), initial=0.0))


@dataclass(frozen=True, eq=False)
class RStarDecomposition:
    """Scalar, Ricci, Schouten and Weyl parts of a 4-index frame tensor."""
    scalar_star: np.ndarray
    ricci_star: np.ndarray
    schouten_star: np.ndarray
    weyl_star: np.ndarray


def _spectral(eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    return np.einsum("...ik,...k,...jk->...ij", eigenvectors, eigenvalues, eigenvectors)


def pack_operator(riemann_frame: np.ndarray) -> np.ndarray:
    """N x N matrix M[(ij),(kl)] = R_ijkl over ordered pairs."""
    n = riemann_frame.shape[-1]
    basis = two_form_basis(n)
    i, j = basis.first, basis.second
    return riemann_frame[..., i[:, None], j[:, None], i[None, :], j[None, :]]


def unpack_operator(op: CurvatureOperator) -> np.ndarray:
    """4-index frame tensor with the curvature symmetries of the operator matrix."""
    basis = op.basis
    n = basis.dim
    out = np.zeros(op.matrix.shape[:-2] + (n, n, n, n), dtype=float)
    i, j = basis.first, basis.second
    I, J, K, L = i[:, None], j[:, None], i[None, :], j[None, :]
    m = op.matrix
    out[..., I, J, K, L] = m
    out[..., J, I, K, L] = -m
    out[..., I, J, L, K] = -m
    out[..., J, I, L, K] = m
    return out


def curvature_part(tensor: np.ndarray) -> np.ndarray:
    """
    Projection of a 4-index tensor onto the algebraic curvature tensors.

    Keeps the part antisymmetric in (a, b) and in (c, d) and symmetric under
    pair exchange, then drops the totally antisymmetric remainder that the
    first Bianchi identity forbids. Finite-difference curvature has these
    symmetries only up to truncation error.
    """
    t = 0.5 * (tensor - np.einsum("...bacd->...abcd", tensor))
    t = 0.5 * (t - np.einsum("...abdc->...abcd", t))
    t = 0.5 * (t + np.einsum("...cdab->...abcd", t))
    cyclic = t + np.einsum("...acdb->...abcd", t) + np.einsum("...adbc->...abcd", t)
    return t - cyclic / 3.0


def frame_operator(riemann_frame: np.ndarray) -> CurvatureOperator:
    """Operator of a tensor already expressed in an orthonormal frame."""
    basis = two_form_basis(riemann_frame.shape[-1])
    return CurvatureOperator.from_matrix(basis, pack_operator(riemann_frame))


def to_operator(riemann_dddd: np.ndarray, frame: np.ndarray) -> CurvatureOperator:
    """Operator of R_abcd in the orthonormal frame E[..., a, i]."""
    return frame_operator(frame_components(riemann_dddd, frame))


def operator_log(op: CurvatureOperator, positivity: float = 1e-9) -> CurvatureOperator:
    """Matrix logarithm; every point must be positive above the relative threshold."""
    threshold = op.threshold(positivity)
    bad = op.min_eigenvalue <= threshold
    if np.any(bad):
        worst = float(np.min(op.min_eigenvalue))
        raise NotPositiveOperator(worst, float(np.max(threshold)) if np.size(threshold) else positivity)
    logs = np.log(op.eigenvalues)
    return CurvatureOperator(op.basis, _spectral(logs, op.eigenvectors), logs, op.eigenvectors)


def operator_exp(op: CurvatureOperator) -> CurvatureOperator:
    exps = np.exp(op.eigenvalues)
    return CurvatureOperator(op.basis, _spectral(exps, op.eigenvectors), exps, op.eigenvectors)


def kulkarni_nomizu(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(A KN B)_abcd = A_ac B_bd + A_bd B_ac - A_ad B_bc - A_bc B_ad."""
    return (
        np.einsum("...ac,...bd->...abcd", a, b)
        + np.einsum("...bd,...ac->...abcd", a, b)
        - np.einsum("...ad,...bc->...abcd", a, b)
        - np.einsum("...bc,...ad->...abcd", a, b)
    )


def _check_curvature_like(tensor: np.ndarray) -> None:
    scale = max(float(np.max(np.abs(tensor), initial=0.0)), 1.0)
    violations = {
        "antisymmetry in the first pair": tensor + np.einsum("...bacd->...abcd", tensor),
        "antisymmetry in the second pair": tensor + np.einsum("...abdc->...abcd", tensor),
        "pair symmetry": tensor - np.einsum("...cdab->...abcd", tensor),
    }
    for name, diff in violations.items():
        worst = float(np.max(np.abs(diff), initial=0.0))
        if worst > CURVATURE_SYMMETRY_RTOL * scale:
            raise NotCurvatureLike(f"Tensor violates {name} by {worst:.3g}")


def decompose(rstar_frame: np.ndarray) -> RStarDecomposition:
    """
    Split a frame tensor into Schouten and Weyl parts: R = C + P KN delta.

    Needs n >= 3. In the orthonormal frame the metric is the identity, so
    every trace is a plain index sum.
    """
    _check_curvature_like(rstar_frame)
    n = rstar_frame.shape[-1]
    if n < 3:
        raise ValueError("Schouten/Weyl decomposition needs dimension >= 3")
    ricci = np.einsum("...ijil->...jl", rstar_frame)
    scalar = np.einsum("...ii->...", ricci)
    delta = np.broadcast_to(np.eye(n), ricci.shape)
    schouten = (ricci - (scalar / (2.0 * (n - 1)))[..., None, None] * delta) / (n - 2)
    weyl = rstar_frame - kulkarni_nomizu(schouten, delta)
    return RStarDecomposition(scalar, ricci, schouten, weyl)


def sectional_curvature_bounds(
    riemann_frame: np.ndarray,
    samples: int = 64,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Min and max sectional curvature per point.

    Probes every coordinate-frame plane plus `samples` random 2-planes drawn
    from a seeded generator, the same planes at every point.
    """
    n = riemann_frame.shape[-1]
    basis = two_form_basis(n)
    coordinate = riemann_frame[..., basis.first, basis.second, basis.first, basis.second]

    rng = np.random.default_rng(seed)
    u = rng.standard_normal((samples, n))
    v = rng.standard_normal((samples, n))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    v -= np.sum(u * v, axis=-1, keepdims=True) * u
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    planes = np.einsum("sd,...abcd->...sabc", v, riemann_frame)
    planes = np.einsum("sc,...sabc->...sab", u, planes)
    planes = np.einsum("sb,...sab->...sa", v, planes)
    random_planes = np.einsum("sa,...sa->...s", u, planes)

    values = np.concatenate([coordinate, random_planes], axis=-1)
    return np.min(values, axis=-1), np.max(values, axis=-1)
