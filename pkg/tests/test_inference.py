import math

import numpy as np
import pytest

from bayes_levelset.forward import ForwardModel, MeasurementSet, SingularSystemError, unit_patterns
from bayes_levelset.inference import (
    ChainConfig,
    ChainState,
    LevelSetEvaluator,
    PosteriorSamples,
    adapt_delta,
    log_likelihood,
    pcn_propose,
    pcn_step,
    regularized_log_likelihood,
    run_chain,
    trace_extract,
)
from bayes_levelset.prior import LevelSetPair, LevelSpec, MaternParams, build_covariance

SPECS = (LevelSpec.bilevel(1.0, 5.0), LevelSpec.bilevel(0.2, 1.0))


@pytest.fixture(scope="module")
def setup(small_mesh):
    """Small synthetic problem: data from a known level-set pair."""
    factors = (build_covariance(small_mesh, MaternParams(4.0, 0.3)),
               build_covariance(small_mesh, MaternParams(5.0, 0.3)))
    c = small_mesh.centroids
    truth = LevelSetPair(0.3 - np.hypot(c[:, 0] - 0.4, c[:, 1]), 0.3 - np.hypot(c[:, 0] - 0.4, c[:, 1]))
    ev = LevelSetEvaluator(ForwardModel(small_mesh), *SPECS, unit_patterns(small_mesh.num_elements))
    clean = ev(truth)
    data = MeasurementSet(ev.patterns, clean + 0.01 * np.random.default_rng(0).normal(size=clean.size),
                          0.01, clean)
    return factors, ev, data


class TestLikelihood:
    def test_exact_fit(self):
        assert log_likelihood([1.0, 2.0], [1.0, 2.0], 0.3) == 0.0

    def test_arithmetic(self):
        assert log_likelihood([3.0, 4.0], [0.0, 0.0], 1.0) == -12.5

    def test_matches_naive_sum(self, rng):
        y, g = rng.normal(size=50), rng.normal(size=50)
        naive = -sum((a - b) ** 2 for a, b in zip(y, g)) / (2 * 0.7**2)
        assert log_likelihood(y, g, 0.7) == pytest.approx(naive, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            log_likelihood([1.0], [1.0, 2.0], 1.0)
        with pytest.raises(ValueError):
            log_likelihood([1.0], [1.0], 0.0)

    def test_regularized(self, rng):
        y, g = rng.normal(size=5), rng.normal(size=5)
        u = rng.normal(size=7)
        assert regularized_log_likelihood(y, g, 1.0, u, u, 0, 0) == log_likelihood(y, g, 1.0)
        assert regularized_log_likelihood(y, y, 1.0, np.ones(7), u, 2.0, 0.0) == -14.0
        v1 = regularized_log_likelihood(y, g, 1.0, u, u, 0.1, 0.1)
        v2 = regularized_log_likelihood(y, g, 1.0, 2 * u, u, 0.1, 0.1)
        assert v2 < v1
        with pytest.raises(ValueError):
            regularized_log_likelihood(y, g, 1.0, u, u, -1.0, 0.0)

    def test_bounded_and_continuous(self, setup, rng):
        factors, ev, data = setup
        for _ in range(5):
            s = LevelSetPair(factors[0].sample(rng), factors[1].sample(rng))
            phi = -log_likelihood(data.data, ev(s), data.noise_sigma)
            assert 0 <= phi < math.inf
            near = LevelSetPair(s.u1 + 1e-9, s.u2 - 1e-9)
            phi2 = -log_likelihood(data.data, ev(near), data.noise_sigma)
            assert abs(phi2 - phi) <= 1e-4 * max(phi, 1.0)


class TestProposal:
    pair = LevelSetPair(np.array([1.0, -2.0]), np.array([0.5, 0.5]))
    fresh = LevelSetPair(np.array([3.0, 4.0]), np.array([-1.0, 2.0]))

    def test_zero_step(self):
        p = pcn_propose(self.pair, self.fresh, 0.0)
        np.testing.assert_array_equal(p.u1, self.pair.u1)
        np.testing.assert_array_equal(p.u2, self.pair.u2)

    def test_half_step(self):
        p = pcn_propose(self.pair, self.fresh, 0.5)
        np.testing.assert_array_equal(p.u1, self.fresh.u1)
        np.testing.assert_array_equal(p.u2, self.fresh.u2)

    def test_default_step_coefficients(self):
        p = pcn_propose(LevelSetPair(np.ones(1), np.zeros(1)), LevelSetPair(np.zeros(1), np.ones(1)),
                        0.0025)
        assert p.u1[0] == pytest.approx(0.997497, abs=1e-6)
        assert p.u2[0] == pytest.approx(0.070711, abs=1e-6)

    @pytest.mark.parametrize("delta", [-0.1, 0.6])
    def test_range(self, delta):
        with pytest.raises(ValueError):
            pcn_propose(self.pair, self.fresh, delta)


class TestAdapt:
    def test_dead_band(self):
        assert adapt_delta(0.25, 0.01) == 0.01

    def test_grow(self):
        assert adapt_delta(0.5, 0.0025) == pytest.approx(0.00275)

    def test_shrink_and_clamp(self):
        assert adapt_delta(0.05, 0.01) == pytest.approx(0.009)
        assert adapt_delta(0.05, 1e-8) == 1e-8
        assert adapt_delta(0.9, 0.49) == 0.5


class TestStep:
    def test_constant_likelihood_always_accepts(self, setup, rng):
        factors, _, data = setup
        n = factors[0].size
        state = ChainState(LevelSetPair(np.zeros(n), np.zeros(n)), 0.0, delta_current=0.1)
        for _ in range(50):
            state = pcn_step(state, data, lambda s: data.data, rng, factors)
        assert state.accept_count == 50

    def test_better_fit_accepted(self, setup, rng):
        factors, ev, data = setup
        n = factors[0].size
        # current state is terrible, any proposal near the truth is better
        bad = LevelSetPair(np.full(n, 5.0), np.full(n, 5.0))
        ll = log_likelihood(data.data, ev(bad), data.noise_sigma)
        state = ChainState(bad, ll, delta_current=0.5)

        def perfect(_):
            return data.data

        new = pcn_step(state, data, perfect, rng, factors)
        assert new.accept_count == 1

    def test_solver_failure_propagates(self, setup, rng):
        factors, _, data = setup
        n = factors[0].size
        state = ChainState(LevelSetPair(np.zeros(n), np.zeros(n)), 0.0)

        def broken(_):
            raise SingularSystemError("boom")

        with pytest.raises(SingularSystemError):
            pcn_step(state, data, broken, rng, factors)


class TestChain:
    def test_draw_count(self, setup, small_mesh):
        factors, ev, data = setup
        cfg = ChainConfig(iterations=10, burn_in=5, thin=1)
        s = run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev)
        assert len(s) == 5 == cfg.num_draws
        assert s.accept_history.shape == (10,) and s.delta_history.shape == (10,)

    def test_thinning(self):
        assert ChainConfig(iterations=1000, burn_in=100, thin=7).num_draws == 128

    def test_full_preset(self):
        cfg = ChainConfig.full(seed=3)
        assert (cfg.iterations, cfg.burn_in, cfg.num_draws, cfg.seed) == (300_000, 50_000, 25_000, 3)

    def test_deterministic(self, setup, small_mesh):
        factors, ev, data = setup
        cfg = ChainConfig(iterations=300, burn_in=100, thin=2, seed=5)
        s1 = run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev)
        s2 = run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev)
        np.testing.assert_array_equal(s1.u1, s2.u1)
        np.testing.assert_array_equal(s1.u2, s2.u2)
        np.testing.assert_array_equal(s1.accept_history, s2.accept_history)

    def test_cache_coherence(self, setup, small_mesh):
        factors, ev, data = setup
        cfg = ChainConfig(iterations=200, burn_in=100, thin=1)
        worst = []

        def check(k, state):
            fresh = regularized_log_likelihood(data.data, ev(state.current), data.noise_sigma,
                                               state.current.u1, state.current.u2,
                                               cfg.alpha1, cfg.alpha2)
            worst.append(abs(fresh - state.current_loglik) / max(1.0, abs(fresh)))

        run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev, progress=check)
        assert max(worst) <= 1e-12

    def test_delta_frozen_after_burn_in(self, setup, small_mesh):
        factors, ev, data = setup
        cfg = ChainConfig(iterations=2000, burn_in=1000, adapt_interval=100)
        s = run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev)
        assert np.all(s.delta_history[1000:] == s.delta_history[1000])
        assert len(np.unique(s.delta_history[:1000])) > 1

    def test_starts_in_background(self, setup, small_mesh):
        factors, ev, data = setup
        def only_start_fits(state):
            at_start = np.all(state.u1 == -1.0) and np.all(state.u2 == -1.0)
            return data.data if at_start else data.data + 1e3

        s = run_chain(ChainConfig(iterations=20, burn_in=10, thin=1), data, small_mesh, SPECS,
                      factors, evaluator=only_start_fits)
        np.testing.assert_array_equal(s.u1, -1.0)
        np.testing.assert_array_equal(s.u2, -1.0)

    def test_factor_mismatch(self, setup, coarse_mesh):
        factors, ev, data = setup
        with pytest.raises(ValueError):
            run_chain(ChainConfig(iterations=2, burn_in=1), data, coarse_mesh, SPECS, factors)

    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=0.7), dict(burn_in=100, iterations=100),
                                    dict(thin=0), dict(alpha1=-1.0), dict(target_accept=1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            ChainConfig(**kw)

    def test_save_load(self, setup, small_mesh, tmp_path):
        factors, ev, data = setup
        cfg = ChainConfig(iterations=20, burn_in=10, thin=2, seed=9)
        s = run_chain(cfg, data, small_mesh, SPECS, factors, evaluator=ev)
        s.save(tmp_path / "s.npz")
        back = PosteriorSamples.load(tmp_path / "s.npz")
        np.testing.assert_array_equal(back.u1, s.u1)
        assert back.config == cfg
        assert back.seed == 9


class TestTraces:
    def _samples(self, u1):
        u1 = np.asarray(u1, dtype=float)
        return PosteriorSamples(u1, -u1, np.ones(u1.shape[0], bool), np.ones(u1.shape[0]), 0)

    def test_constant(self):
        t = trace_extract(self._samples(np.tile([1.0, 2.0, 3.0], (4, 1))), [0, 2])
        np.testing.assert_array_equal(t, [[1, 3]] * 4)

    def test_definition(self, rng):
        s = self._samples(rng.normal(size=(30, 6)))
        t = trace_extract(s, [4, 1], "u2")
        np.testing.assert_array_equal(t[:, 0], s.u2[:, 4])
        np.testing.assert_array_equal(t[:, 1], s.u2[:, 1])

    def test_autocorrelation_bounded(self, setup, small_mesh):
        factors, ev, data = setup
        s = run_chain(ChainConfig(iterations=600, burn_in=100, thin=1), data, small_mesh, SPECS,
                      factors, evaluator=ev)
        x = trace_extract(s, [3], "u1")[:, 0]
        x = x - x.mean()
        r = (x[:-1] @ x[1:]) / (x @ x) if x @ x > 0 else 0.0
        assert -1 < r < 1

    def test_range(self):
        with pytest.raises(IndexError):
            trace_extract(self._samples(np.zeros((2, 3))), [3])
        with pytest.raises(ValueError):
            trace_extract(self._samples(np.zeros((2, 3))), [0], "u3")
