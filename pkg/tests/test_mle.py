"""
Tests for sufficient statistics and constrained fitting.
"""

import numpy as np
import pytest

from src.errors import ConvergenceError, NoCompletionError, NotPositiveDefiniteError, ShapeError
from src.graphs import (
    block_graph,
    build_graph,
    clique_decomposition,
    independence_graph,
    markov_graph,
    saturated_graph,
)
from src.mle import (
    complete_covariance,
    decomposable_estimate,
    existence_check,
    fit_ggm,
    full_loglik,
    newton_completion,
    reml_loglik,
    suff_stats,
    suff_stats_from_covariance,
)
from src.symmetric import logdet_pd, unvech, vech


def random_stats(seed, n, q):
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((q, q)) / np.sqrt(q) + np.eye(q)
    return suff_stats(rng.standard_normal((n, q)) @ mix)


def four_cycle(q=4):
    return build_graph(q, [(2, 1), (3, 2), (4, 3), (4, 1)])


def test_suff_stats_hand_example():
    stats = suff_stats([[0.0], [2.0]])
    assert stats.n == 2
    assert stats.ybar.tolist() == [1.0]
    assert stats.s_sat.tolist() == [[1.0]]
    assert stats.u.tolist() == [2.0]


def test_suff_stats_matches_two_pass_covariance():
    rng = np.random.default_rng(5)
    y = rng.standard_normal((10, 3)) * [1.0, 5.0, 0.1] + [100.0, -3.0, 0.5]
    stats = suff_stats(y)
    expected = np.cov(y, rowvar=False, bias=True)
    assert np.allclose(stats.s_sat, expected, rtol=1e-12, atol=1e-12)
    assert np.allclose(stats.u, 10 / 9 * vech(expected), rtol=1e-12, atol=1e-12)
    assert np.array_equal(stats.s_sat, stats.s_sat.T)


@pytest.mark.parametrize(
    "data",
    [
        [[1.0, 2.0]],
        [1.0, 2.0, 3.0],
        [[1.0, np.nan], [2.0, 3.0]],
    ],
)
def test_suff_stats_rejects_bad_data(data):
    with pytest.raises(ShapeError):
        suff_stats(data)


def test_constant_column_fails_at_fit_time():
    rng = np.random.default_rng(6)
    y = rng.standard_normal((8, 3))
    y[:, 1] = 4.0
    stats = suff_stats(y)
    assert stats.s_sat[1, 1] == 0.0
    with pytest.raises(NotPositiveDefiniteError):
        fit_ggm(stats, markov_graph(3, 1))
    with pytest.raises(NotPositiveDefiniteError):
        fit_ggm(stats, saturated_graph(3))


def test_suff_stats_from_covariance():
    s = np.array([[2.0, 0.5], [0.5, 1.0]])
    stats = suff_stats_from_covariance(s, 5)
    assert stats.u.tolist() == pytest.approx([2.5, 0.625, 1.25])
    assert np.array_equal(stats.moments, unvech(stats.u))
    with pytest.raises(ShapeError):
        suff_stats_from_covariance(s, 1)


@pytest.mark.parametrize(
    "graph,n,ok",
    [
        (saturated_graph(11), 11, False),
        (saturated_graph(11), 12, True),
        (markov_graph(50, 3), 5, True),
        (markov_graph(50, 3), 4, False),
        (independence_graph(6), 2, True),
    ],
)
def test_existence_check(graph, n, ok):
    verdict = existence_check(graph, n)
    assert bool(verdict) is ok
    if ok:
        assert verdict.reason == ""
    else:
        assert str(verdict.max_clique) in verdict.reason


def test_existence_check_non_chordal_uses_own_cliques():
    verdict = existence_check(four_cycle(), 3)
    assert verdict.ok
    assert verdict.max_clique == 2


def test_fit_saturated_graph_is_direct():
    stats = random_stats(1, 20, 4)
    fit = fit_ggm(stats, saturated_graph(4))
    assert fit.iterations == 0
    assert np.array_equal(fit.sigma_hat, stats.moments)
    assert np.allclose(fit.omega_hat @ stats.moments, np.eye(4), atol=1e-12)


def test_fit_independence_graph():
    stats = random_stats(2, 15, 3)
    fit = fit_ggm(stats, independence_graph(3))
    diag = np.diagonal(stats.moments)
    assert np.array_equal(fit.sigma_hat, np.diag(diag))
    assert np.array_equal(fit.omega_hat, np.diag(1.0 / diag))


def test_ips_matches_closed_form_on_markov_chain():
    stats = random_stats(3, 12, 3)
    g = markov_graph(3, 1)
    fit = fit_ggm(stats, g, method="ips")
    closed = decomposable_estimate(stats.moments, clique_decomposition(g))
    assert fit.iterations > 0
    assert np.allclose(fit.omega_hat, closed, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize(
    "graph",
    [
        markov_graph(6, 2),
        block_graph((3, 3), [(4, 3)]),
        four_cycle(5),
        build_graph(6, [(2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (6, 1)]),
    ],
)
def test_fitted_moments_and_zero_pattern(graph):
    stats = random_stats(graph.p, 30, graph.q)
    fit = fit_ggm(stats, graph)
    u = graph.restrict(stats.moments)
    assert np.all(np.abs(fit.sigma_k - u) <= 1e-9 * np.maximum(1.0, np.abs(u)))
    assert np.all(fit.omega_hat[graph.zero_mask()] == 0.0)
    assert np.linalg.eigvalsh(fit.omega_hat).min() > 0
    assert fit.max_residual <= 1e-10


def test_auto_and_ips_fits_agree():
    stats = random_stats(4, 25, 7)
    g = markov_graph(7, 2)
    auto = fit_ggm(stats, g)
    ips = fit_ggm(stats, g, method="ips")
    assert auto.iterations == 0
    assert np.allclose(auto.omega_hat, ips.omega_hat, rtol=1e-8, atol=1e-8)
    assert auto.loglik == pytest.approx(ips.loglik, rel=1e-10)


def test_fit_rejects_unknown_method_and_mismatched_graph():
    stats = random_stats(5, 10, 3)
    with pytest.raises(ValueError):
        fit_ggm(stats, markov_graph(3, 1), method="newton")
    with pytest.raises(ShapeError):
        fit_ggm(stats, markov_graph(4, 1))


@pytest.mark.parametrize("method", ["auto", "ips"])
def test_fit_residual_is_relative_to_each_target_entry(method):
    base = random_stats(15, 30, 5)
    stats = suff_stats_from_covariance(1e4 * base.s_sat, base.n)
    g = four_cycle(5)
    fit = fit_ggm(stats, g, method=method, tol=1e-9)
    u = g.restrict(stats.moments)
    gap = np.abs(g.restrict(fit.sigma_hat) - u)
    assert fit.max_residual == pytest.approx(float(np.max(gap / np.maximum(1.0, np.abs(u)))), rel=1e-9, abs=1e-300)
    assert fit.max_residual <= 1e-9


def test_fit_reports_non_convergence():
    stats = random_stats(6, 30, 5)
    with pytest.raises(ConvergenceError) as excinfo:
        fit_ggm(stats, four_cycle(5), method="ips", max_sweeps=1, tol=1e-15)
    assert excinfo.value.iterations == 1


def random_nested_pair(seed):
    """Random null graph and a random supergraph of it on 4 to 8 vertices."""
    rng = np.random.default_rng([seed, 1])
    q = int(rng.integers(4, 9))
    pairs = [(i + 1, j + 1) for j in range(q) for i in range(j + 1, q)]
    keep = rng.uniform(size=len(pairs))
    cut = 0.3 + 0.4 * rng.uniform()
    null_edges = [pair for pair, u in zip(pairs, keep) if u < 0.3]
    alt_edges = [pair for pair, u in zip(pairs, keep) if u < cut]
    return build_graph(q, null_edges), build_graph(q, alt_edges)


@pytest.mark.parametrize("seed", range(100))
def test_nesting_monotonicity_on_random_pairs(seed):
    null_g, alt_g = random_nested_pair(seed)
    assert alt_g.contains(null_g)
    stats = random_stats(seed, 30, null_g.q)
    assert fit_ggm(stats, alt_g).loglik >= fit_ggm(stats, null_g).loglik - 1e-9


def test_nesting_monotonicity_along_markov_chain():
    stats = random_stats(7, 40, 8)
    chain = [independence_graph(8)] + [markov_graph(8, m) for m in range(1, 8)]
    logliks = [fit_ggm(stats, g).loglik for g in chain]
    assert all(b >= a - 1e-9 for a, b in zip(logliks, logliks[1:]))


def test_saturated_consistency():
    stats = random_stats(8, 30, 5)
    fit = fit_ggm(stats, saturated_graph(5))
    assert np.allclose(np.linalg.inv(fit.omega_hat), stats.moments, rtol=1e-12, atol=1e-12)
    assert fit.logdet_omega == pytest.approx(-logdet_pd(stats.moments), rel=1e-12)


@pytest.mark.parametrize("n,q", [(2, 1), (5, 3), (40, 6)])
def test_reml_loglik_identity(n, q):
    stats = suff_stats_from_covariance((n - 1) / n * np.eye(q), n)
    assert reml_loglik(np.eye(q), stats) == pytest.approx(-(n - 1) * q / 2, rel=1e-14)
    assert reml_loglik(np.eye(q), stats, independence_graph(q)) == pytest.approx(-(n - 1) * q / 2, rel=1e-14)


def test_reml_loglik_is_maximized_at_fit():
    rng = np.random.default_rng(9)
    stats = random_stats(9, 30, 6)
    g = markov_graph(6, 2)
    fit = fit_ggm(stats, g)
    for _ in range(20):
        delta = np.zeros((6, 6))
        for i, j in g.edges:
            delta[i, j] = delta[j, i] = rng.uniform(-1, 1)
        omega = fit.omega_hat + 1e-3 * delta
        assert reml_loglik(omega, stats, g) < fit.loglik


def test_reml_loglik_rejects_bad_concentration():
    stats = random_stats(10, 10, 3)
    g = markov_graph(3, 1)
    with pytest.raises(ShapeError):
        reml_loglik(np.full((3, 3), 0.1) + np.eye(3), stats, g)
    with pytest.raises(NotPositiveDefiniteError):
        reml_loglik(-np.eye(3), stats)


def test_reml_and_profile_likelihood_differ_by_half_logdet():
    rng = np.random.default_rng(11)
    y = rng.standard_normal((25, 4))
    stats = suff_stats(y)
    g = markov_graph(4, 1)
    diffs = []
    for _ in range(5):
        omega = np.zeros((4, 4))
        for i, j in g.off_diagonal:
            omega[i, j] = omega[j, i] = rng.uniform(-0.3, 0.3)
        omega += np.diag(rng.uniform(1.0, 2.0, 4))
        profile = full_loglik(stats.ybar, omega, y)
        diffs.append(profile - reml_loglik(omega, stats, g) - 0.5 * logdet_pd(omega))
    assert np.allclose(diffs, diffs[0], atol=1e-9)


def test_complete_covariance_matches_on_graph_and_vanishes_off_it():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((50, 5))
    target = x.T @ x / 50
    g = four_cycle(5)
    sigma, omega = complete_covariance(target, g)
    assert np.allclose(g.restrict(sigma), g.restrict(target), rtol=1e-9, atol=1e-9)
    assert np.all(omega[g.zero_mask()] == 0.0)
    assert np.allclose(sigma @ omega, np.eye(5), atol=1e-9)
    with pytest.raises(ShapeError):
        complete_covariance(target, markov_graph(4, 1))


def _cycle_correlations(rhos):
    """Unit diagonal with the given correlations around a 4-cycle; zero elsewhere."""
    a = np.eye(4)
    for (i, j), rho in zip([(1, 0), (2, 1), (3, 2), (3, 0)], rhos):
        a[i, j] = a[j, i] = rho
    return a


@pytest.mark.parametrize(
    "graph",
    [four_cycle(5), build_graph(6, [(2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (6, 1), (4, 1)])],
)
def test_newton_completion_matches_ips(graph):
    stats = random_stats(13, 30, graph.q)
    newton = newton_completion(stats.moments, graph)
    ips = fit_ggm(stats, graph, method="ips")
    assert np.allclose(newton.omega, ips.omega_hat, rtol=1e-8, atol=1e-8)
    assert np.all(newton.omega[graph.zero_mask()] == 0.0)
    assert newton.logdet_sigma == pytest.approx(-ips.logdet_omega, rel=1e-10)
    assert newton.decrement < 1e-4


def test_newton_completion_warm_start_needs_fewer_steps():
    stats = random_stats(14, 30, 5)
    g = four_cycle(5)
    first = newton_completion(stats.moments, g)
    nearby = 1.01 * stats.moments + 0.001 * np.eye(5)
    cold = newton_completion(nearby, g)
    warm = newton_completion(nearby, g, omega_start=first.omega)
    assert warm.steps <= cold.steps
    assert np.allclose(warm.omega, cold.omega, rtol=1e-8, atol=1e-8)


def test_newton_completion_certifies_existence_early():
    a = _cycle_correlations([0.5, 0.5, 0.5, -0.5])
    g = four_cycle()
    found = newton_completion(a, g, certify=True)
    full = newton_completion(a, g)
    assert found.decrement < 1.0
    assert found.steps <= full.steps
    assert np.linalg.eigvalsh(found.omega).min() > 0


def test_newton_completion_rejects_partial_matrix_without_completion():
    a = _cycle_correlations([0.9, 0.9, 0.9, -0.9])
    g = four_cycle()
    for i, j in g.off_diagonal:
        assert np.linalg.eigvalsh(a[np.ix_([i, j], [i, j])]).min() > 0
    with pytest.raises(NoCompletionError) as excinfo:
        newton_completion(a, g, certify=True)
    assert excinfo.value.trace <= 0.0
    assert isinstance(excinfo.value, NotPositiveDefiniteError)


def test_newton_completion_step_cap():
    a = _cycle_correlations([0.5, 0.5, 0.5, -0.5])
    with pytest.raises(ConvergenceError) as excinfo:
        newton_completion(a, four_cycle(), tol=1e-15, max_steps=1)
    assert excinfo.value.iterations == 1
    assert excinfo.value.method == "Newton completion"
