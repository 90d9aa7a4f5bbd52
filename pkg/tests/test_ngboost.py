import json
import math

import numpy as np
import pytest

from conftest import tree_from_nested
from oracles import bisect_quantile, central_diff, monte_carlo_fisher, normal_cdf as oracle_cdf, normal_nll
from sonicboost.ensembles import BoostParams
from sonicboost.errors import EmptyInputError, InvalidArgumentError, InvalidInputError
from sonicboost.ngboost import (
    LOG_SIGMA_MIN,
    NGBoostModel,
    NormalParams,
    Stage,
    confidence_interval,
    fisher_info,
    fit_ngboost,
    init_params,
    inverse_normal_cdf,
    line_search_rho,
    natural_gradient,
    nll_score,
    normal_cdf,
    predict_dist,
    score_gradient,
)
from sonicboost.trees import TreeParams, leaf


@pytest.mark.parametrize(
    "mu, sigma, y, expected",
    [(0.0, 1.0, 0.0, 0.918939), (0.0, 1.0, 1.0, 1.418939), (5.0, 2.0, 5.0, 1.612086)],
)
def test_nll_examples(mu, sigma, y, expected):
    got = nll_score(NormalParams(mu, math.log(sigma)), y)
    assert got == pytest.approx(expected, abs=1e-6)
    assert got == pytest.approx(normal_nll(mu, math.log(sigma), y), abs=1e-12)


def test_nll_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        nll_score(NormalParams(0.0, 0.0), float("nan"))


def test_nll_minimized_at_observation():
    y = 1.7
    grid = np.linspace(-3, 6, 901)
    scores = nll_score(NormalParams(grid, np.full_like(grid, 0.3)), np.full_like(grid, y))
    assert grid[np.argmin(scores)] == pytest.approx(y, abs=0.006)


@pytest.mark.parametrize("mu, y, expected", [(0.0, 1.0, (-1.0, 0.0)), (2.0, 2.0, (0.0, 1.0)), (0.0, 3.0, (-3.0, -8.0))])
def test_score_gradient_examples(mu, y, expected):
    g = score_gradient(NormalParams(mu, 0.0), y)
    assert (float(g.d_mu), float(g.d_logsigma)) == pytest.approx(expected, abs=1e-12)
    assert g.kind == "ordinary"


@pytest.mark.parametrize("mu, y, expected", [(0.0, 1.0, (-1.0, 0.0)), (2.0, 2.0, (0.0, 0.5)), (0.0, 3.0, (-3.0, -4.0))])
def test_natural_gradient_examples(mu, y, expected):
    g = natural_gradient(NormalParams(mu, 0.0), y)
    assert (float(g.d_mu), float(g.d_logsigma)) == pytest.approx(expected, abs=1e-12)
    assert g.kind == "natural"


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        mu, ls, y = rng.uniform(-3, 3), rng.uniform(-1.0, 1.5), rng.uniform(-3, 3)
        g = score_gradient(NormalParams(mu, ls), y)
        fd_mu = central_diff(lambda m: normal_nll(m, ls, y), mu)
        fd_ls = central_diff(lambda s: normal_nll(mu, s, y), ls)
        for a, b in ((float(g.d_mu), fd_mu), (float(g.d_logsigma), fd_ls)):
            worst = max(worst, abs(a - b) / max(abs(b), 1e-3))
    assert worst < 1e-5


@pytest.mark.parametrize("sigma, diag", [(1.0, (1.0, 2.0)), (2.0, (0.25, 2.0))])
def test_fisher_closed_form_and_monte_carlo(sigma, diag):
    F = fisher_info(NormalParams(0.3, math.log(sigma)))
    assert np.allclose(F, np.diag(diag), rtol=0, atol=1e-15)
    mc = monte_carlo_fisher(0.3, math.log(sigma), n=200_000, seed=1)
    assert np.allclose(np.diag(mc), diag, rtol=3e-2)
    assert abs(mc[0, 1]) < 3e-2


def test_fisher_natural_consistency():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = NormalParams(rng.normal(), rng.uniform(-3, 3))
        y = rng.normal(0, 5)
        lhs = fisher_info(p) @ natural_gradient(p, y).as_array()
        assert np.allclose(lhs, score_gradient(p, y).as_array(), rtol=0, atol=1e-10 * max(1.0, np.abs(lhs).max()))


def test_init_params_examples():
    p = init_params([1, 2, 3])
    assert p.mu == 2 and float(p.sigma) == pytest.approx(0.81650, abs=1e-5)
    c = init_params([4.0, 4.0, 4.0])
    assert c.mu == 4.0 and c.log_sigma == LOG_SIGMA_MIN
    s = init_params([7.0])
    assert s.mu == 7.0 and float(s.sigma) == pytest.approx(1e-6)
    with pytest.raises(EmptyInputError):
        init_params([])


def test_init_params_minimizes_mean_nll_on_grid():
    y = np.array([1.0, 2.0, 3.0])
    grid = np.linspace(-1.0, 0.5, 3001)
    mean_nll = [np.mean([normal_nll(2.0, g, v) for v in y]) for g in grid]
    assert grid[int(np.argmin(mean_nll))] == pytest.approx(init_params(y).log_sigma, abs=1e-3)


def test_line_search_zero_outputs():
    theta = np.array([[0.0, 0.0], [1.0, 0.5]])
    assert line_search_rho(theta, np.zeros((2, 2)), [0.3, 1.2], 0.5) == 0.0


def test_line_search_single_row_exact_gradient():
    p = NormalParams(0.0, 0.0)
    g = natural_gradient(p, 1.0).as_array().reshape(1, 2)
    assert line_search_rho(np.array([[0.0, 0.0]]), g, [1.0], 1.0) == 1.0


def test_line_search_uphill_returns_zero():
    p = NormalParams(np.zeros(3), np.zeros(3))
    y = np.array([1.0, -2.0, 0.5])
    uphill = -natural_gradient(p, y).as_array()
    assert line_search_rho(p, uphill, y, 1.0) == 0.0


def test_line_search_halves_until_descent():
    # a step of 4 overshoots; halving reaches rho = 1/4, giving a step of 1
    theta = np.array([[0.0, 0.0]])
    f = np.array([[-4.0, 0.0]])
    assert line_search_rho(theta, f, [1.0], 1.0) == 0.25


def test_line_search_misaligned():
    with pytest.raises(InvalidArgumentError):
        line_search_rho(np.zeros((2, 2)), np.zeros((3, 2)), [1.0, 2.0], 1.0)


def test_fit_constant_targets():
    X = np.arange(10.0).reshape(-1, 1)
    m = fit_ngboost(X, np.full(10, 3.0), BoostParams(n_estimators=5, learning_rate=0.5))
    assert np.all(predict_dist(m, X).mu == 3.0)
    assert m.stages[0].rho == 0.0 and len(m.stages) == 1


def test_fit_two_clusters():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 200)
    y = np.where(x < 0.5, 0.0, 10.0)
    X = x.reshape(-1, 1)
    m = fit_ngboost(X, y, BoostParams(n_estimators=300, learning_rate=0.1, tree_params=TreeParams(max_depth=1)))
    mu = predict_dist(m, np.array([[0.25], [0.75]])).mu
    assert abs(mu[0] - 0.0) < 0.1
    assert abs(mu[1] - 10.0) < 0.1


def test_fit_two_noisy_clusters_match_cluster_means():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 200)
    y = np.where(x < 0.5, 0.0, 10.0) + rng.normal(0, 0.5, 200)
    m = fit_ngboost(x.reshape(-1, 1), y, BoostParams(n_estimators=300, learning_rate=0.1, tree_params=TreeParams(max_depth=1)))
    mu = predict_dist(m, x.reshape(-1, 1)).mu
    for mask in (x < 0.5, x >= 0.5):
        assert abs(mu[mask].mean() - y[mask].mean()) < 0.1


def test_training_nll_nonincreasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(150, 3))
    y = X[:, 0] * 3 + rng.normal(0, 1 + np.abs(X[:, 1]), 150)
    m = fit_ngboost(X, y, BoostParams(n_estimators=60, learning_rate=0.2, tree_params=TreeParams(max_depth=3)))
    loss = m.train_loss
    assert all(b <= a for a, b in zip(loss, loss[1:]))
    accepted = [s for s in m.stages if s.rho > 0]
    assert accepted, "expected at least one accepted stage"
    final = float(np.mean(nll_score(predict_dist(m, X), y)))
    assert final == pytest.approx(loss[-1], rel=1e-12)


def test_fit_rejects_bad_eta():
    X = np.zeros((4, 1))
    for eta in (0.0, 1.5):
        with pytest.raises(InvalidArgumentError):
            fit_ngboost(X, [1.0, 2.0, 3.0, 4.0], BoostParams(learning_rate=eta))


def test_predict_zero_stage_model():
    m = NGBoostModel(NormalParams(2.0, 0.5), [], 0.1, 2)
    d = predict_dist(m, np.zeros((3, 2)))
    assert np.all(d.mu == 2.0) and np.all(d.log_sigma == 0.5)


def test_predict_hand_built_stage():
    t_mu = tree_from_nested(
        {"feature": 0, "threshold": 0.0, "left": {"value": -2.0, "cover": 1}, "right": {"value": 4.0, "cover": 1}}, 1
    )
    t_ls = leaf(0.5, 2, 1)
    m = NGBoostModel(NormalParams(1.0, 0.0), [Stage(t_mu, t_ls, 0.5)], 0.2, 1)
    d = predict_dist(m, np.array([[-1.0], [1.0]]))
    # theta = theta0 - eta * rho * f
    assert np.allclose(d.mu, [1.0 + 0.1 * 2.0, 1.0 - 0.1 * 4.0], rtol=0, atol=1e-15)
    assert np.allclose(d.log_sigma, [-0.05, -0.05], rtol=0, atol=1e-15)


def test_predict_skips_rejected_stage():
    m = NGBoostModel(NormalParams(1.0, 0.0), [Stage(leaf(5.0, 1, 1), leaf(5.0, 1, 1), 0.0)], 1.0, 1)
    assert predict_dist(m, [[0.0]]).mu[0] == 1.0


def test_predict_dimension_mismatch():
    m = NGBoostModel(NormalParams(0.0, 0.0), [], 0.1, 2)
    with pytest.raises(InvalidInputError):
        predict_dist(m, np.zeros((2, 3)))


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 2))
    y = X[:, 0] + rng.normal(0, 0.5, 80)
    m = fit_ngboost(X, y, BoostParams(n_estimators=20, learning_rate=0.3, tree_params=TreeParams(max_depth=2)))
    back = NGBoostModel.from_dict(json.loads(json.dumps(m.to_dict())))
    a, b = predict_dist(m, X), predict_dist(back, X)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.log_sigma, b.log_sigma)


def test_tree_terms_reproduce_mean():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 2))
    y = 2 * X[:, 1] + rng.normal(0, 0.3, 60)
    m = fit_ngboost(X, y, BoostParams(n_estimators=15, learning_rate=0.5, tree_params=TreeParams(max_depth=2)))
    base, terms = m.tree_terms()
    composed = base + sum(c * t.predict(X) for c, t in terms)
    assert np.allclose(composed, m.predict(X), rtol=0, atol=1e-9)


def test_confidence_interval_examples():
    lo, hi = confidence_interval(NormalParams(0.0, 0.0), 0.0)
    assert (float(lo), float(hi)) == (0.0, 0.0)
    lo, hi = confidence_interval(NormalParams(0.0, 0.0), 0.8)
    assert (float(lo), float(hi)) == pytest.approx((-1.281552, 1.281552), abs=1e-6)
    lo, hi = confidence_interval(NormalParams(100.0, math.log(5.0)), 0.8)
    assert (float(lo), float(hi)) == pytest.approx((93.592, 106.408), abs=1e-3)


@pytest.mark.parametrize("level", [-0.1, 1.0, 1.2])
def test_confidence_interval_bad_level(level):
    with pytest.raises(InvalidArgumentError):
        confidence_interval(NormalParams(0.0, 0.0), level)


@pytest.mark.parametrize("p, expected", [(0.5, 0.0), (0.9, 1.2815516), (0.975, 1.9599640)])
def test_inverse_cdf_examples(p, expected):
    assert inverse_normal_cdf(p) == pytest.approx(expected, abs=1e-7)
    assert inverse_normal_cdf(p) == pytest.approx(bisect_quantile(p), abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.5, 2.0])
def test_inverse_cdf_out_of_range(p):
    with pytest.raises(InvalidArgumentError):
        inverse_normal_cdf(p)


def test_normal_cdf_matches_oracle():
    for x in np.linspace(-8, 8, 33):
        assert normal_cdf(x) == pytest.approx(oracle_cdf(x), abs=1e-15)
