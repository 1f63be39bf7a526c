"""Gaussian level-set priors on triangle centroids and the level-set maps.

Level-set fields live on triangle centroids. Their prior covariance is a
Matérn kernel evaluated on centroid distances, factored once by Cholesky so
draws are ``L @ xi`` with ``xi`` standard normal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist
from scipy.special import gamma, kv

from .mesh import Mesh

__all__ = [
    "MaternParams",
    "CovarianceFactor",
    "LevelSetPair",
    "LevelSpec",
    "IllConditionedError",
    "matern_kernel",
    "build_covariance",
    "sample_level_set",
    "smooth_step",
    "level_set_map",
]


class IllConditionedError(np.linalg.LinAlgError):
    """The jittered Gram matrix is not numerically positive definite."""


@dataclass(frozen=True)
class MaternParams:
    """Matérn smoothness ``nu``, length scale ``ell`` and diagonal ``jitter``.

    ``jitter=None`` means ``1e-10`` times the number of triangles.
    """

    nu: float = 4.0
    ell: float = 0.3
    jitter: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.ell > 0:
            raise ValueError("ell must be positive")
        if self.jitter is not None and self.jitter < 0:
            raise ValueError("jitter must be non-negative")


def matern_kernel(d, params: MaternParams):
    """Matérn correlation at distance ``d`` (scalar or array), equal to 1 at 0.

    C(d) = 2^(1-nu) / Gamma(nu) * z^nu * K_nu(z),  z = sqrt(2 nu) d / ell
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    nu = params.nu
    z = np.sqrt(2.0 * nu) * d / params.ell
    with np.errstate(all="ignore"):
        c = (2.0 ** (1.0 - nu) / gamma(nu)) * z**nu * kv(nu, z)
    # z = 0 is the limit value; tiny z overflows K_nu where C is 1 to machine precision
    c = np.where((z == 0) | ~np.isfinite(c), 1.0, c)
    c = np.minimum(c, 1.0)
    return c if c.ndim else float(c)


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Lower Cholesky factor of the jittered centroid Gram matrix."""

    lower: np.ndarray
    mesh: Mesh
    params: MaternParams
    jitter: float

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def gram(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def sample(self, rng, size=None) -> np.ndarray:
        """Zero-mean draw(s); shape ``(n,)`` or ``(size, n)``."""
        if size is None:
            return self.lower @ rng.standard_normal(self.size)
        return rng.standard_normal((size, self.size)) @ self.lower.T


def build_covariance(mesh: Mesh, params: MaternParams) -> CovarianceFactor:
    """Factor the Matérn Gram matrix over ``mesh`` centroids plus ``jitter * I``."""
    n = mesh.num_triangles
    if n < 1:
        raise ValueError("mesh has no triangles")
    jitter = 1e-10 * n if params.jitter is None else float(params.jitter)
    x = mesh.centroids
    G = matern_kernel(cdist(x, x), params)
    G[np.diag_indices(n)] += jitter
    try:
        lower = sla.cholesky(G, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(G)[0])
        raise IllConditionedError(
            f"Gram matrix not positive definite with jitter {jitter:.3g} "
            f"(smallest eigenvalue {smallest:.3g}); increase the jitter"
        ) from None
    return CovarianceFactor(lower, mesh, params, jitter)


@dataclass(frozen=True)
class LevelSetPair:
    """Level-set fields for the diffusion (``u1``) and absorption (``u2``) maps."""

    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=float)
        u2 = np.asarray(self.u2, dtype=float)
        if u1.ndim != 1 or u1.shape != u2.shape:
            raise ValueError("u1 and u2 must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
            raise ValueError("level-set values must be finite")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)


def sample_level_set(factor1: CovarianceFactor, factor2: CovarianceFactor, rng) -> LevelSetPair:
    """Independent prior draws for ``u1`` and ``u2``."""
    m1, m2 = factor1.mesh, factor2.mesh
    if m1 is not m2 and (
        m1.num_triangles != m2.num_triangles or not np.array_equal(m1.centroids, m2.centroids)
    ):
        raise ValueError("covariance factors live on different meshes")
    u1 = factor1.sample(rng)
    u2 = factor2.sample(rng)
    return LevelSetPair(u1, u2)


@dataclass(frozen=True)
class LevelSpec:
    """Thresholds ``c_0 < ... < c_M`` and level values ``a_1..a_M``.

    Values with ``c_{i-1} <= u < c_i`` map to ``level_values[i-1]``; the
    outer thresholds are only bookkeeping, so ``(-inf, 0, inf)`` with two
    values is the usual background/foreground split.
    """

    thresholds: tuple = (-np.inf, 0.0, np.inf)
    level_values: tuple = (1.0, 5.0)
    mollify_eps: float = 0.1

    def __post_init__(self):
        c = np.asarray(self.thresholds, dtype=float)
        v = np.asarray(self.level_values, dtype=float)
        if c.size != v.size + 1 or v.size < 1:
            raise ValueError("need one more threshold than level values")
        if np.any(np.diff(c) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("level values must be finite and positive")
        if not self.mollify_eps > 0:
            raise ValueError("mollify_eps must be positive")
        object.__setattr__(self, "thresholds", tuple(c.tolist()))
        object.__setattr__(self, "level_values", tuple(v.tolist()))

    @classmethod
    def bilevel(cls, back, fore, eps=0.1):
        return cls((-np.inf, 0.0, np.inf), (back, fore), eps)

    @property
    def back(self) -> float:
        return self.level_values[0]

    @property
    def fore(self) -> float:
        return self.level_values[-1]


def smooth_step(t):
    """``(1 + tanh(t)) / 2``: symmetric, ``s(0) = 1/2``, Lipschitz constant 1/2."""
    return 0.5 * (1.0 + np.tanh(t))


def level_set_map(u, spec: LevelSpec) -> np.ndarray:
    """Mollified piecewise-constant map from level-set values to coefficients.

    One smooth step of width ``mollify_eps`` per interior threshold, so the
    result is a convex combination of the level values.
    """
    u = np.asarray(u, dtype=float)
    vals = spec.level_values
    out = np.full(u.shape, vals[0])
    for c, lo, hi in zip(spec.thresholds[1:-1], vals[:-1], vals[1:]):
        out = out + (hi - lo) * smooth_step((u - c) / spec.mollify_eps)
    return out
