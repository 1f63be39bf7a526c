"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary,
then asserts. Criteria 6 to 8 share one noise study (nine 100k-iteration
chains) and take several minutes.
"""
import json
import math
import time

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from bayes_levelset.cli import main
from bayes_levelset.forward import ForwardModel, MeasurementSet, adjacent_patterns, unit_patterns
from bayes_levelset.inference import ChainConfig, LevelSetEvaluator, log_likelihood, run_chain
from bayes_levelset.mesh import MeshError, generate_disk_mesh, read_mesh, write_mesh
from bayes_levelset.prior import (
    LevelSetPair,
    LevelSpec,
    MaternParams,
    build_covariance,
    level_set_map,
    matern_kernel,
    sample_level_set,
)
from bayes_levelset.reconstruct import accuracy_ratio, linf_error, order_statistic_quantile
from conftest import record
from oracles import dense_solve, flux_residual, sorted_quantile


def _check(number, passed, detail):
    record(number, bool(passed), detail)
    assert passed, detail


def test_1_fem_matches_dense_oracle():
    rng = np.random.default_rng(1)
    mesh = generate_disk_mesh(1.0, 200, 8, 0.25)
    assert mesh.num_triangles <= 200
    model = ForwardModel(mesh)
    n = mesh.num_triangles
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        a = rng.uniform(0.2, 10.0, n)
        b = rng.uniform(0.01, 2.0, n)
        F = rng.normal(size=mesh.num_elements)
        sol = model.assemble(a, b).solve(F)
        x = np.concatenate([sol.interior, sol.electrode])
        ref = dense_solve(mesh, a, b, F)
        worst = max(worst, np.linalg.norm(x - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    _check(1, worst <= 1e-10 and elapsed < 10,
           f"max rel err {worst:.2e} over 20 cases on {n} triangles, {elapsed:.2f} s")


def test_2_flux_identity():
    rng = np.random.default_rng(2)
    worst, count = 0.0, 0
    for target, L in ((60, 8), (200, 8), (549, 16), (2129, 16)):
        mesh = generate_disk_mesh(1.0, target, L, 0.25)
        model = ForwardModel(mesh)
        n = mesh.num_triangles
        P = np.vstack([unit_patterns(L), adjacent_patterns(L), rng.normal(size=(4, L))])
        for _ in range(3):
            a = rng.uniform(0.5, 5.0, n)
            b = rng.uniform(0.05, 1.0, n)
            op = model.assemble(a, b)
            for F in P:
                worst = max(worst, flux_residual(mesh, b, op.solve(F).interior, F))
                count += 1
    _check(2, worst <= 1e-10, f"max |int b u + sum F| / sum|F| = {worst:.2e} over {count} solves")


def test_3_matern_closed_forms():
    d = np.linspace(0.0, 3.0, 100)
    ell = 0.3
    z = d / ell
    e_half = np.max(np.abs(matern_kernel(d, MaternParams(0.5, ell)) - np.exp(-z)))
    s = np.sqrt(3) * z
    e_32 = np.max(np.abs(matern_kernel(d, MaternParams(1.5, ell)) - (1 + s) * np.exp(-s)))
    c0 = [matern_kernel(0.0, MaternParams(nu, ell)) for nu in (0.5, 1.5, 2.5, 4.0, 5.0)]
    ok = e_half <= 1e-12 and e_32 <= 1e-12 and all(c == 1.0 for c in c0)
    _check(3, ok, f"max err nu=1/2 {e_half:.1e}, nu=3/2 {e_32:.1e}, C(0) values {set(c0)}")


def test_4_pcn_preserves_prior():
    mesh = generate_disk_mesh(1.0, 100, 8, 0.25)
    params = MaternParams(4.0, 0.3)
    f = build_covariance(mesh, params)
    n = f.size
    data = MeasurementSet(np.eye(1), np.zeros(1), 1.0)
    rng = np.random.default_rng(4)
    start = sample_level_set(f, f, rng)
    cfg = ChainConfig(delta=0.1, iterations=200_000, burn_in=0, thin=10, alpha1=0.0,
                      alpha2=0.0, seed=44)
    t0 = time.perf_counter()
    s = run_chain(cfg, data, mesh, (LevelSpec.bilevel(1, 5), LevelSpec.bilevel(1, 5)), (f, f),
                  evaluator=lambda state: np.zeros(1), start=start)
    elapsed = time.perf_counter() - t0
    U = s.u1
    var_err = np.max(np.abs(U.var(axis=0) - 1.0))
    K = matern_kernel(cdist(mesh.centroids, mesh.centroids), params)
    pairs = np.random.default_rng(40).choice(n, size=(10, 2), replace=False)
    corr_err = max(abs(np.corrcoef(U[:, i], U[:, j])[0, 1] - K[i, j]) for i, j in pairs)
    ok = len(s) == 20_000 and var_err <= 0.1 and corr_err <= 0.05 and elapsed < 60
    _check(4, ok, f"{len(s)} draws, max |var-1| {var_err:.3f}, max corr err {corr_err:.3f}, "
                  f"{elapsed:.1f} s")


def test_5_likelihood_lipschitz_in_data():
    rng = np.random.default_rng(5)
    mesh = generate_disk_mesh(1.0, 100, 8, 0.25)
    f = build_covariance(mesh, MaternParams(4.0, 0.3))
    ev = LevelSetEvaluator(ForwardModel(mesh), LevelSpec.bilevel(1, 5), LevelSpec.bilevel(0.2, 1),
                           unit_patterns(mesh.num_elements))
    sigma, rho = 0.05, 3.0
    worst = 0.0
    for _ in range(100):
        G = ev(sample_level_set(f, f, rng))
        bound = (rho + np.linalg.norm(G)) / sigma**2
        ys = []
        for _ in range(2):
            v = rng.normal(size=G.size)
            ys.append(v / np.linalg.norm(v) * rho * rng.uniform() ** (1 / G.size))
        dphi = abs(log_likelihood(ys[0], G, sigma) - log_likelihood(ys[1], G, sigma))
        worst = max(worst, dphi / np.linalg.norm(ys[0] - ys[1]) / bound)
    _check(5, worst <= 1.0, f"max ratio / bound = {worst:.3f} over 100 pairs")


# -- desk-scale reproduction (shared study) -------------------------------


def _level(table, noise, param, metric):
    return next(r for r in table if r["noise"] == noise and r["param"] == param
                and r["metric"] == metric)


def test_6_accuracy_reproduction(desk_study):
    table, runs, out = desk_study
    a = _level(table, 0.02, "a", "accuracy")
    b = _level(table, 0.02, "b", "accuracy")
    times = [json.loads(p.read_text())["timing"]["sample"]
             for p in sorted((out / "noise_0.02").glob("rep_*/metrics.json"))]
    ok = a["n"] == 3 and b["n"] == 3 and a["mean"] >= 0.85 and b["mean"] >= 0.78 \
        and max(times) <= 3600
    _check(6, ok, f"2% noise, {a['n']} seeds: accuracy a {a['mean']:.4f} +- {a['sd']:.4f}, "
                  f"b {b['mean']:.4f} +- {b['sd']:.4f}; slowest chain {max(times):.0f} s")


def test_7_linf_reproduction(desk_study):
    table, _, _ = desk_study
    a = _level(table, 0.02, "a", "linf")
    b = _level(table, 0.02, "b", "linf")
    ok = 0.25 <= b["mean"] <= 0.40 and 2.5 <= a["mean"] <= 3.9
    _check(7, ok, f"2% noise: Linf b {b['mean']:.4f} +- {b['sd']:.4f} (band 0.25-0.40), "
                  f"a {a['mean']:.4f} +- {a['sd']:.4f} (band 2.5-3.9)")


def test_8_noise_trend(desk_study):
    table, _, _ = desk_study
    drops = {p: _level(table, 0.01, p, "accuracy")["mean"] - _level(table, 0.04, p, "accuracy")["mean"]
             for p in "ab"}
    ok = all(d < 0.10 for d in drops.values())
    _check(8, ok, f"accuracy drop 1% -> 4%: a {drops['a']:+.4f}, b {drops['b']:+.4f}")


def test_desk_acceptance_rates(desk_study):
    _, runs, _ = desk_study
    rates = [r["acceptance_rate"] for r in runs if r["status"] == "ok"]
    assert len(rates) == len(runs)
    assert all(0.10 <= r <= 0.45 for r in rates), rates


# -- determinism ----------------------------------------------------------


def test_9_noise_study_deterministic(tmp_path):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps({"fine_elements": 150, "coarse_elements": 60,
                               "num_boundary_elements": 8,
                               "chain": {"iterations": 400, "burn_in": 200, "thin": 2}}))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["noise-study", "--config", str(cfg), "--seed", "99", "--levels", "0.01",
                     "0.03", "--repeats", "2", "--output-dir", str(out)]) == 0
        outs.append((out / "study.csv").read_bytes())
    _check(9, outs[0] == outs[1] and len(outs[0]) > 0,
           f"study.csv identical across two runs ({len(outs[0])} bytes)")


# -- property suites ------------------------------------------------------

SPEC = LevelSpec.bilevel(1.0, 5.0, 0.1)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(0, 100))
def _prop_level_set_monotone(u, shift):
    u = np.array(u)
    hu, hv = level_set_map(u, SPEC), level_set_map(u + shift, SPEC)
    assert np.all(hu <= hv) and np.all((hu >= 1) & (hv <= 5))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def _prop_accuracy(pairs):
    t = np.array([5.0 if p else 1.0 for p, _ in pairs])
    r = np.array([5.0 if q else 1.0 for _, q in pairs])
    assert accuracy_ratio(r, t, (1.0, 5.0)) == pytest.approx(
        sum(p == q for p, q in pairs) / len(pairs))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=60))
def _prop_linf(pairs):
    x, y = np.array(pairs).T
    assert linf_error(x, y) == max(abs(p - q) for p, q in pairs)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0, 1))
def _prop_quantile(values, q):
    assert order_statistic_quantile(np.array(values), q) == sorted_quantile(values, q)


def _prop_mesh_round_trip(tmp_path):
    @settings(max_examples=25, deadline=None)
    @given(st.integers(8, 300), st.integers(2, 12),
           st.just(0.0) | st.floats(0.01, 0.5), st.floats(0.5, 2.0))
    def check(target, L, gap, radius):
        try:
            mesh = generate_disk_mesh(radius, target, L, gap)
        except MeshError as exc:
            # too few triangles for this many elements is a documented refusal
            assume("cannot build" not in str(exc))
            raise
        path = tmp_path / "m.txt"
        write_mesh(path, mesh)
        back = read_mesh(path)
        np.testing.assert_array_equal(back.vertices, mesh.vertices)
        np.testing.assert_array_equal(back.triangles, mesh.triangles)
        np.testing.assert_array_equal(back.boundary_edges, mesh.boundary_edges)
        np.testing.assert_array_equal(back.edge_element, mesh.edge_element)

    check()


def test_10_property_suites(tmp_path):
    t0 = time.perf_counter()
    failures = []
    for name, fn in [("level_set_map", _prop_level_set_monotone), ("accuracy", _prop_accuracy),
                     ("linf", _prop_linf), ("quantile", _prop_quantile),
                     ("mesh round-trip", lambda: _prop_mesh_round_trip(tmp_path))]:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - reported below
            failures.append(f"{name}: {exc}")
    elapsed = time.perf_counter() - t0
    _check(10, not failures and elapsed < 30,
           f"5 suites, {elapsed:.1f} s" + (f"; failed {failures}" if failures else ""))
