"""Point estimates, uncertainty fields and error metrics from posterior draws."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .inference import PosteriorSamples
from .prior import LevelSpec, level_set_map

__all__ = [
    "ReconstructionBundle",
    "method1_bilevel",
    "method2_continuous",
    "stderr_field",
    "credible_region",
    "order_statistic_quantile",
    "snap_to_levels",
    "accuracy_ratio",
    "linf_error",
    "reconstruct",
]


def _check(samples: PosteriorSamples, minimum=1):
    if len(samples) < minimum:
        raise ValueError(f"need at least {minimum} retained draw(s), got {len(samples)}")


def _mapped(samples, specs):
    return level_set_map(samples.u1, specs[0]), level_set_map(samples.u2, specs[1])


def method1_bilevel(samples: PosteriorSamples, specs: tuple[LevelSpec, LevelSpec]):
    """Level-set maps applied once to the posterior mean level sets."""
    _check(samples)
    return (
        level_set_map(samples.u1.mean(axis=0), specs[0]),
        level_set_map(samples.u2.mean(axis=0), specs[1]),
    )


def method2_continuous(samples: PosteriorSamples, specs: tuple[LevelSpec, LevelSpec]):
    """Posterior mean of the mapped coefficient fields."""
    _check(samples)
    a, b = _mapped(samples, specs)
    return a.mean(axis=0), b.mean(axis=0)


def stderr_field(samples: PosteriorSamples, specs: tuple[LevelSpec, LevelSpec]):
    """Per-triangle sample standard deviation (``n - 1``) of the mapped draws.

    No division by ``sqrt(n)``: the draws are autocorrelated.
    """
    _check(samples, 2)
    a, b = _mapped(samples, specs)
    return a.std(axis=0, ddof=1), b.std(axis=0, ddof=1)


def order_statistic_quantile(values, q, axis=0):
    """Smallest sample ``x`` whose empirical CDF reaches ``q`` (order statistic ``ceil(q n)``)."""
    if not 0 <= q <= 1:
        raise ValueError("quantile must lie in [0, 1]")
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    # guard against q*n landing a hair above an integer
    k = min(max(math.ceil(q * n - 1e-9), 1), n)
    return np.partition(values, k - 1, axis=axis).take(k - 1, axis=axis)


def credible_region(samples: PosteriorSamples, specs, q_low=0.15, q_high=0.85):
    """Per-triangle lower/upper quantiles of the mapped draws.

    Returns ``(low_a, high_a, low_b, high_b)``.
    """
    if not 0 <= q_low < q_high <= 1:
        raise ValueError("need 0 <= q_low < q_high <= 1")
    _check(samples)
    a, b = _mapped(samples, specs)
    return (
        order_statistic_quantile(a, q_low),
        order_statistic_quantile(a, q_high),
        order_statistic_quantile(b, q_low),
        order_statistic_quantile(b, q_high),
    )


def snap_to_levels(values, levels) -> np.ndarray:
    """Index of the nearest level for each value; ties go to the first level."""
    values = np.asarray(values, dtype=float)
    levels = np.asarray(levels, dtype=float)
    return np.argmin(np.abs(values[:, None] - levels[None, :]), axis=1)


def accuracy_ratio(recon, truth, levels=None) -> float:
    """Fraction of triangles whose nearest level agrees between the two fields.

    ``levels`` defaults to the distinct values of ``truth`` (background first).
    """
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError("fields live on different meshes")
    if levels is None:
        levels = np.unique(truth)
    return float(np.mean(snap_to_levels(recon, levels) == snap_to_levels(truth, levels)))


def linf_error(recon, truth) -> float:
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError("fields live on different meshes")
    return float(np.max(np.abs(recon - truth)))


@dataclass(frozen=True)
class ReconstructionBundle:
    method1_a: np.ndarray
    method1_b: np.ndarray
    method2_a: np.ndarray
    method2_b: np.ndarray
    stderr_a: np.ndarray
    stderr_b: np.ndarray
    cr_low_a: np.ndarray
    cr_high_a: np.ndarray
    cr_low_b: np.ndarray
    cr_high_b: np.ndarray

    def fields(self) -> dict[str, np.ndarray]:
        return dict(self.__dict__)


def reconstruct(samples: PosteriorSamples, specs, q_low=0.15, q_high=0.85) -> ReconstructionBundle:
    """Both reconstructions, standard errors and credible bounds in one pass."""
    m1 = method1_bilevel(samples, specs)
    m2 = method2_continuous(samples, specs)
    if len(samples) >= 2:
        se = stderr_field(samples, specs)
    else:
        se = (np.zeros_like(m2[0]), np.zeros_like(m2[1]))
    cr = credible_region(samples, specs, q_low, q_high)
    return ReconstructionBundle(*m1, *m2, *se, *cr)
