"""Likelihood evaluation and the adaptive pCN sampler over level-set pairs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .forward import ForwardModel, MeasurementSet, adjacent_patterns
from .mesh import Mesh
from .prior import CovarianceFactor, LevelSetPair, LevelSpec, level_set_map

__all__ = [
    "ChainConfig",
    "ChainState",
    "PosteriorSamples",
    "LevelSetEvaluator",
    "log_likelihood",
    "regularized_log_likelihood",
    "pcn_propose",
    "pcn_step",
    "adapt_delta",
    "run_chain",
    "trace_extract",
]

DELTA_MIN = 1e-8
DELTA_MAX = 0.5


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings.

    ``delta`` is the initial pCN step; it is adapted every ``adapt_interval``
    iterations during burn-in to keep the acceptance rate within
    ``target_accept +- accept_band`` and frozen afterwards.
    """

    delta: float = 0.0025
    iterations: int = 100_000
    burn_in: int = 50_000
    thin: int = 10
    target_accept: float = 0.25
    accept_band: float = 0.05
    adapt_interval: int = 500
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta <= DELTA_MAX:
            raise ValueError("delta must lie in (0, 0.5]")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be >= 1")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("regularization weights must be non-negative")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @classmethod
    def full(cls, **kw) -> "ChainConfig":
        """Long preset: 300k iterations, 50k burn-in, every 10th draw kept."""
        return cls(**{"iterations": 300_000, "burn_in": 50_000, "thin": 10, **kw})

    @property
    def num_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class ChainState:
    current: LevelSetPair
    current_loglik: float
    accept_count: int = 0
    step_index: int = 0
    delta_current: float = 0.0025


@dataclass(eq=False)
class PosteriorSamples:
    """Retained draws stacked as ``(num_draws, num_triangles)`` arrays."""

    u1: np.ndarray
    u2: np.ndarray
    accept_history: np.ndarray
    delta_history: np.ndarray
    seed: int
    config: ChainConfig | None = None
    final_loglik: float = field(default=math.nan)

    def __len__(self) -> int:
        return self.u1.shape[0]

    @property
    def draws(self) -> list[LevelSetPair]:
        return [LevelSetPair(a, b) for a, b in zip(self.u1, self.u2)]

    def acceptance_rate(self, after_burn_in=True) -> float:
        acc = self.accept_history
        if after_burn_in and self.config is not None:
            acc = acc[self.config.burn_in:]
        return float(acc.mean()) if acc.size else math.nan

    def save(self, path) -> None:
        cfg = asdict(self.config) if self.config is not None else {}
        np.savez_compressed(
            path,
            u1=self.u1,
            u2=self.u2,
            accept_history=self.accept_history,
            delta_history=self.delta_history,
            seed=self.seed,
            final_loglik=self.final_loglik,
            config_keys=np.array(list(cfg), dtype=str),
            config_values=np.array(list(cfg.values()), dtype=float),
        )

    @classmethod
    def load(cls, path) -> "PosteriorSamples":
        with np.load(Path(path)) as z:
            keys = z["config_keys"].tolist()
            vals = z["config_values"].tolist()
            ints = {"iterations", "burn_in", "thin", "adapt_interval", "seed"}
            cfg = {k: int(v) if k in ints else v for k, v in zip(keys, vals)}
            return cls(
                z["u1"],
                z["u2"],
                z["accept_history"],
                z["delta_history"],
                int(z["seed"]),
                ChainConfig(**cfg) if cfg else None,
                float(z["final_loglik"]),
            )


class LevelSetEvaluator:
    """Map a level-set pair to concatenated model element data.

    Applies the two level-set maps, assembles and factors the system once and
    solves for every flux pattern.
    """

    def __init__(self, model: ForwardModel, spec_a: LevelSpec, spec_b: LevelSpec, patterns=None):
        self.model = model
        self.spec_a = spec_a
        self.spec_b = spec_b
        if patterns is None:
            patterns = adjacent_patterns(model.num_elements)
        self.patterns = np.asarray(patterns, dtype=float)
        self._rhs = model.rhs(self.patterns)

    def coefficients(self, state: LevelSetPair):
        return level_set_map(state.u1, self.spec_a), level_set_map(state.u2, self.spec_b)

    def __call__(self, state: LevelSetPair) -> np.ndarray:
        a, b = self.coefficients(state)
        op = self.model.assemble(a, b, check=False)
        X = op._raw_solve(self._rhs)
        return X[self.model.num_vertices:].T.ravel()


def log_likelihood(y, g, sigma) -> float:
    """Gaussian log-likelihood ``-|y - g|^2 / (2 sigma^2)`` (up to a constant)."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    if y.shape != g.shape:
        raise ValueError(f"length mismatch: data {y.shape} vs model {g.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = y - g
    return -float(r @ r) / (2.0 * sigma**2)


def regularized_log_likelihood(y, g, sigma, u1, u2, alpha1, alpha2) -> float:
    """Log-likelihood minus the norm penalty ``alpha1 |u1|^2 + alpha2 |u2|^2``."""
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("regularization weights must be non-negative")
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return log_likelihood(y, g, sigma) - alpha1 * float(u1 @ u1) - alpha2 * float(u2 @ u2)


def pcn_propose(current: LevelSetPair, fresh: LevelSetPair, delta: float) -> LevelSetPair:
    """``sqrt(1 - 2 delta) * current + sqrt(2 delta) * fresh`` for both fields."""
    if not 0 <= delta <= DELTA_MAX:
        raise ValueError("delta must lie in [0, 0.5]")
    keep = math.sqrt(1.0 - 2.0 * delta)
    mix = math.sqrt(2.0 * delta)
    return LevelSetPair(keep * current.u1 + mix * fresh.u1, keep * current.u2 + mix * fresh.u2)


def pcn_step(
    state: ChainState,
    data: MeasurementSet,
    evaluator: Callable[[LevelSetPair], np.ndarray],
    rng: np.random.Generator,
    factors: tuple[CovarianceFactor, CovarianceFactor],
    alphas: tuple[float, float] = (0.0, 0.0),
) -> ChainState:
    """One pCN move; accepts with probability ``min(1, exp(L(prop) - L(curr)))``.

    Forward-solve errors propagate; a failed proposal is never silently
    treated as a rejection.
    """
    fresh = LevelSetPair(factors[0].sample(rng), factors[1].sample(rng))
    prop = pcn_propose(state.current, fresh, state.delta_current)
    g = evaluator(prop)
    ll = regularized_log_likelihood(
        data.data, g, data.noise_sigma, prop.u1, prop.u2, alphas[0], alphas[1]
    )
    log_u = math.log(rng.random())
    if log_u < ll - state.current_loglik:
        return ChainState(prop, ll, state.accept_count + 1, state.step_index + 1, state.delta_current)
    return replace(state, step_index=state.step_index + 1)


def adapt_delta(accept_rate: float, delta: float, target=0.25, band=0.05) -> float:
    """Grow ``delta`` by 10% above the band, shrink by 10% below, clamp to (1e-8, 0.5]."""
    if accept_rate > target + band:
        delta = delta * 1.1
    elif accept_rate < target - band:
        delta = delta * 0.9
    return min(max(delta, DELTA_MIN), DELTA_MAX)


def initial_state(num_triangles: int, value: float = -1.0) -> LevelSetPair:
    """Level sets deep in the background region for both coefficients."""
    return LevelSetPair(np.full(num_triangles, value), np.full(num_triangles, value))


def run_chain(
    config: ChainConfig,
    data: MeasurementSet,
    mesh: Mesh,
    specs: tuple[LevelSpec, LevelSpec],
    factors: tuple[CovarianceFactor, CovarianceFactor],
    *,
    evaluator: Callable[[LevelSetPair], np.ndarray] | None = None,
    start: LevelSetPair | None = None,
    progress: Callable[[int, ChainState], None] | None = None,
) -> PosteriorSamples:
    """Run the adaptive pCN chain and keep thinned post-burn-in draws.

    By default the model output is the element data on ``mesh`` for the
    flux patterns stored in ``data``; pass ``evaluator`` to substitute any
    map from level-set pairs to outputs comparable with ``data.data``.
    The chain is fully determined by ``config.seed``.
    """
    n = mesh.num_triangles
    if factors[0].size != n or factors[1].size != n:
        raise ValueError("covariance factors do not match the mesh")
    if evaluator is None:
        evaluator = LevelSetEvaluator(ForwardModel(mesh), specs[0], specs[1], data.patterns)
    rng = np.random.default_rng(config.seed)
    if start is None:
        start = initial_state(n)
    alphas = (config.alpha1, config.alpha2)
    g0 = evaluator(start)
    ll0 = regularized_log_likelihood(data.data, g0, data.noise_sigma, start.u1, start.u2, *alphas)
    state = ChainState(start, ll0, 0, 0, config.delta)

    accept = np.zeros(config.iterations, dtype=bool)
    deltas = np.empty(config.iterations)
    out1 = np.empty((config.num_draws, n))
    out2 = np.empty((config.num_draws, n))
    kept = 0
    for k in range(config.iterations):
        before = state.accept_count
        state = pcn_step(state, data, evaluator, rng, factors, alphas)
        accept[k] = state.accept_count > before
        deltas[k] = state.delta_current
        if k < config.burn_in and (k + 1) % config.adapt_interval == 0:
            rate = accept[k + 1 - config.adapt_interval:k + 1].mean()
            new = adapt_delta(rate, state.delta_current, config.target_accept, config.accept_band)
            state = replace(state, delta_current=new)
        elif k >= config.burn_in and (k + 1 - config.burn_in) % config.thin == 0:
            out1[kept] = state.current.u1
            out2[kept] = state.current.u2
            kept += 1
        if progress is not None:
            progress(k, state)
    return PosteriorSamples(out1, out2, accept, deltas, config.seed, config, state.current_loglik)


def trace_extract(samples: PosteriorSamples, triangle_ids, which="u1") -> np.ndarray:
    """Retained values of ``u1`` or ``u2`` at the given triangles, one column each."""
    if which not in ("u1", "u2"):
        raise ValueError("which must be 'u1' or 'u2'")
    draws = samples.u1 if which == "u1" else samples.u2
    ids = np.atleast_1d(np.asarray(triangle_ids, dtype=np.int64))
    if ids.size and (ids.min() < 0 or ids.max() >= draws.shape[1]):
        raise IndexError(f"triangle id out of range [0, {draws.shape[1]})")
    return draws[:, ids]
