"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also echoed in the terminal
summary). Criteria 1-7 need the public competition data: point the
SONICBOOST_DATA environment variable at a directory holding train.csv,
test.csv and real_test_result.csv. Without it they are skipped and
criteria 8-12 are the acceptance bar.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from conftest import COLUMNS, data_dir, random_nested_tree, synthetic_logs, tree_from_nested, write_csv
from oracles import (
    bisect_quantile,
    central_diff,
    exhaustive_best_reduction,
    monte_carlo_fisher,
    normal_cdf as oracle_cdf,
    normal_nll,
    permutation_shapley,
    tree_value_given,
)
from sonicboost import pipeline
from sonicboost.cli import main
from sonicboost.config import load_config
from sonicboost.ensembles import BoostParams, fit_gbdt
from sonicboost.explain import explain_rows, mean_abs_importance, shap_values
from sonicboost.ngboost import (
    NormalParams,
    confidence_interval,
    fisher_info,
    fit_ngboost,
    inverse_normal_cdf,
    natural_gradient,
    score_gradient,
)
from sonicboost.trees import TreeParams, fit_tree

RESULTS = []


def record(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- data criteria

TABLE1 = {"CAL": (8.43, 1.85), "ZDEN": (2.41, 0.18), "DTC": (88.31, 23.54)}


@pytest.fixture(scope="module")
def competition(tmp_path_factory):
    d = data_dir()
    if d is None or not (d / "train.csv").exists():
        for n in range(1, 8):
            RESULTS.append(f"SKIP criterion {n}: competition data unavailable (set SONICBOOST_DATA)")
        pytest.skip("competition data unavailable; set SONICBOOST_DATA")
    out = tmp_path_factory.mktemp("competition")
    cfg_path = out / "run.toml"
    cfg_path.write_text(
        f'[data]\ntrain = "{d / "train.csv"}"\ntest = "{d / "test.csv"}"\n'
        f'test_labels = "{d / "real_test_result.csv"}"\n[output]\ndir = "{out}"\n'
    )
    return cfg_path, {}


def run_family(competition, target, family):
    cfg_path, cache = competition
    key = (target, family)
    if key not in cache:
        cfg = load_config(cfg_path, target=target, family=family)
        start = time.perf_counter()
        mf = pipeline.run_train(cfg)
        seconds = time.perf_counter() - start
        ev = pipeline.run_evaluate(cfg)
        cache[key] = (cfg, mf, ev, seconds)
    return cache[key]


@pytest.mark.data
def test_criterion_01_summary_statistics(competition):
    cfg = load_config(competition[0])
    start = time.perf_counter()
    res = pipeline.run_stats(cfg)
    seconds = time.perf_counter() - start
    summary = res["summary"]
    ok = all(summary[c]["count"] == 20525 for c in summary)
    for col, (mean, std) in TABLE1.items():
        ok &= abs(summary[col]["mean"] - mean) <= 0.02 and abs(summary[col]["std"] - std) <= 0.02
    ok &= seconds < 5
    detail = ", ".join(f"{c} {summary[c]['mean']:.3f}/{summary[c]['std']:.3f}" for c in TABLE1)
    record(1, ok, f"counts {sorted({summary[c]['count'] for c in summary})}, {detail}, {seconds:.2f}s")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_02_ngboost_dtc(competition):
    _, _, ev, seconds = run_family(competition, "DTC", "ngboost")
    m = ev["metrics"]
    ok = m["r2"] >= 0.87 and m["rmse"] <= 5.2 and seconds < 600
    record(2, ok, f"DTC test R2 {m['r2']:.4f}, RMSE {m['rmse']:.3f}, trained in {seconds:.0f}s")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_03_ngboost_dts(competition):
    _, _, ev, _ = run_family(competition, "DTS", "ngboost")
    r2 = ev["metrics"]["r2"]
    record(3, r2 >= 0.67, f"DTS test R2 {r2:.4f}")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_04_baselines(competition):
    gb = run_family(competition, "DTC", "gbdt")[2]["metrics"]["r2"]
    rf_cfg, rf_mf, rf_ev, _ = run_family(competition, "DTC", "random_forest")
    so = run_family(competition, "DTC", "second_order")[2]["metrics"]["r2"]
    rf = rf_ev["metrics"]["r2"]
    rf_train = rf_mf.metrics["train"]["r2"]
    ok = abs(gb - 0.899) <= 0.03 and abs(rf - 0.886) <= 0.04 and abs(so - 0.894) <= 0.03 and rf_train >= 0.99
    record(4, ok, f"GBDT {gb:.4f}, RF {rf:.4f} (train {rf_train:.4f}), second-order {so:.4f}")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_05_coverage(competition):
    dtc = run_family(competition, "DTC", "ngboost")[2]
    dts = run_family(competition, "DTS", "ngboost")[2]

    def at80(ev):
        return next(c["fraction"] for c in ev["coverage"] if c["level"] == 0.8)

    c, s = at80(dtc), at80(dts)
    record(5, 0.70 <= c <= 0.85 and 0.54 <= s <= 0.70, f"80% coverage DTC {c:.3f}, DTS {s:.3f}")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_06_windows(competition):
    cfg = dataclasses.replace(run_family(competition, "DTC", "ngboost")[0])
    pipeline.run_predict(cfg)
    cfg.windows = ((6000, 7000), (1000, 2000), (1200, 1400), (1600, 1700))
    rep = pipeline.run_report(cfg)
    w = {tuple(s["window"]): s for s in rep["windows"]}
    hi, lo = w[(6000, 7000)]["coverage"]["fraction"], w[(1000, 2000)]["coverage"]["fraction"]
    flags = w[(1200, 1400)]["n_flags"] + w[(1600, 1700)]["n_flags"]
    record(6, hi - lo >= 0.25 and flags > 0, f"coverage 6000-7000 {hi:.3f} vs 1000-2000 {lo:.3f}; {flags} flags in target windows")


@pytest.mark.data
@pytest.mark.slow
def test_criterion_07_explain_ranks(competition):
    from scipy.stats import spearmanr

    cfg, mf, _, _ = run_family(competition, "DTC", "ngboost")
    table, _ = pipeline.load_for_model(cfg, mf, with_target=False)
    X = table.matrix(mf.features)
    atts = explain_rows(mf.model, X)
    imp = mean_abs_importance(atts, mf.features)
    j = mf.features.index("CNC")
    rho = spearmanr(X[:, j], [a.phis[j] for a in atts])[0]
    ok = imp.rank("CNC") == 1 and imp.rank("PE") >= len(mf.features) - 1 and rho > 0
    record(7, ok, f"importance order {imp.features}; Spearman(CNC, SHAP_CNC) {rho:.3f}")


# ------------------------------------------------------------ property criteria


def test_criterion_08_gradients():
    rng = np.random.default_rng(8)
    worst_fd = 0.0
    for _ in range(1000):
        mu, ls, y = rng.uniform(-3, 3), rng.uniform(-1.0, 1.5), rng.uniform(-3, 3)
        g = score_gradient(NormalParams(mu, ls), y)
        fd = (central_diff(lambda m: normal_nll(m, ls, y), mu), central_diff(lambda s: normal_nll(mu, s, y), ls))
        for a, b in zip((float(g.d_mu), float(g.d_logsigma)), fd):
            worst_fd = max(worst_fd, abs(a - b) / abs(b))

    worst_mc = 0.0
    for sigma in (1.0, 2.0):
        p = NormalParams(0.0, math.log(sigma))
        F = fisher_info(p)
        mc = monte_carlo_fisher(0.0, math.log(sigma), n=1_000_000, seed=int(sigma))
        for i in range(2):
            worst_mc = max(worst_mc, abs(mc[i, i] - F[i, i]) / F[i, i])
        # off-diagonal is zero: measure it against the diagonal scale
        worst_mc = max(worst_mc, abs(mc[0, 1]) / math.sqrt(F[0, 0] * F[1, 1]))

    worst_nat = 0.0
    for _ in range(1000):
        p = NormalParams(rng.normal(0, 5), rng.uniform(-5, 5))
        y = rng.normal(0, 10)
        diff = fisher_info(p) @ natural_gradient(p, y).as_array() - score_gradient(p, y).as_array()
        scale = max(1.0, float(np.abs(score_gradient(p, y).as_array()).max()))
        worst_nat = max(worst_nat, float(np.abs(diff).max()) / scale)

    ok = worst_fd < 1e-5 and worst_mc < 1e-2 and worst_nat < 1e-10
    record(8, ok, f"FD rel err {worst_fd:.2e}; Fisher MC rel err {worst_mc:.2e}; F*nat-grad err {worst_nat:.2e}")


def test_criterion_09_shapley():
    rng = np.random.default_rng(9)
    block = synthetic_logs(600, seed=9)
    X, y = block[:, :7], block[:, 7]
    model = fit_gbdt(X[:100], y[:100], BoostParams(n_estimators=25, learning_rate=0.2, tree_params=TreeParams(max_depth=4)))
    rows = X[rng.choice(600, 500, replace=False)]
    atts = explain_rows(model, rows)
    pred = model.predict(rows)
    worst_acc = max(abs(a.phi0 + a.phis.sum() - f) for a, f in zip(atts, pred))

    dummy_tree = {"feature": 0, "threshold": 0.5, "left": {"value": 1.0, "cover": 2}, "right": {"value": 4.0, "cover": 6}}
    dummy = shap_values([tree_from_nested(dummy_tree, 3)], [0.7, 0.1, 0.9])
    mirrored = [
        tree_from_nested({"feature": f, "threshold": 0.5, "left": {"value": 0.0, "cover": 3}, "right": {"value": 2.0, "cover": 5}}, 2)
        for f in (0, 1)
    ]
    sym = shap_values(mirrored, [0.8, 0.8])
    axioms = dummy.phis[1] == 0.0 and dummy.phis[2] == 0.0 and sym.phis[0] == sym.phis[1]

    worst_oracle = 0.0
    for _ in range(20):
        p = int(rng.integers(2, 6))
        nested = [random_nested_tree(rng, p, int(rng.integers(1, 5))) for _ in range(3)]
        # flattening also stamps split covers onto the nested dicts the oracle reads
        trees = [tree_from_nested(n, p) for n in nested]
        coefs = rng.normal(size=3)
        x = rng.uniform(0, 1, p)
        got = shap_values((0.3, list(zip(coefs, trees))), x)

        def value(known):
            return 0.3 + sum(c * tree_value_given(n, x, known) for c, n in zip(coefs, nested))

        worst_oracle = max(worst_oracle, float(np.abs(got.phis - permutation_shapley(value, p)).max()))
        worst_oracle = max(worst_oracle, abs(got.phi0 - value(frozenset())))

    ok = worst_acc < 1e-6 and axioms and worst_oracle < 1e-9
    record(9, ok, f"local accuracy {worst_acc:.2e} over 500 rows; axioms {'exact' if axioms else 'violated'}; oracle gap {worst_oracle:.2e}")


def test_criterion_10_tree_and_boosting_monotonicity():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        p = int(rng.integers(1, 5))
        X = np.round(rng.normal(size=(n, p)), int(rng.integers(0, 3)))
        y = np.round(rng.normal(size=n) * 5, 1)
        t = fit_tree(X, y, params=TreeParams(max_depth=int(rng.integers(1, 3))))
        best = exhaustive_best_reduction(X, y)
        got = 0.0
        if t.n_nodes > 1:
            mask = X[:, t.feature[0]] <= t.threshold[0]
            got = ((y - y.mean()) ** 2).sum() - ((y[mask] - y[mask].mean()) ** 2).sum() - ((y[~mask] - y[~mask].mean()) ** 2).sum()
        worst = max(worst, abs(got - best) / max(1.0, best))

    block = synthetic_logs(400, seed=10)
    X, y = block[:, :7], block[:, 7]
    gb = fit_gbdt(X, y, BoostParams(n_estimators=60, learning_rate=0.3, tree_params=TreeParams(max_depth=3)))
    gb_mono = all(b <= a for a, b in zip(gb.train_loss, gb.train_loss[1:]))
    ng = fit_ngboost(X, y, BoostParams(n_estimators=120, learning_rate=0.1, tree_params=TreeParams(max_depth=3)))
    ng_mono = all(b <= a for a, b in zip(ng.train_loss, ng.train_loss[1:]))
    ok = worst < 1e-9 and gb_mono and ng_mono
    record(10, ok, f"root split vs exhaustive max gap {worst:.2e} on 200 instances; GBDT MSE monotone {gb_mono}; NGBoost NLL monotone {ng_mono}")


def test_criterion_11_determinism(tmp_path):
    write_csv(tmp_path / "train.csv", synthetic_logs(300, seed=11, sentinel_rows=(5, 9)))
    block = synthetic_logs(100, seed=12)
    write_csv(tmp_path / "test.csv", block[:, :7], COLUMNS[:7])
    (tmp_path / "run.toml").write_text(
        '[data]\ntrain = "train.csv"\ntest = "test.csv"\n'
        '[model]\nfamily = "ngboost"\nseed = 5\nn_estimators = 40\nlearning_rate = 0.1\nmax_depth = 3\n'
    )
    files = []
    for run in ("first", "second"):
        out = str(tmp_path / run)
        for family in ("ngboost", "random_forest"):
            assert main(["train", "--config", str(tmp_path / "run.toml"), "--out", out, "--family", family]) == 0
        assert main(["predict", "--config", str(tmp_path / "run.toml"), "--out", out]) == 0
        files.append([(tmp_path / run / name).read_bytes() for name in
                      ("model_DTC_ngboost.json", "model_DTC_random_forest.json", "predictions_DTC.csv")])
    same = files[0] == files[1]
    record(11, same, "two identical runs gave byte-identical model files and prediction tables" if same
           else "outputs differ between identical runs")


def test_criterion_12_numerics():
    rng = np.random.default_rng(12)
    probs = np.concatenate([rng.uniform(1e-6, 1 - 1e-6, 9_900), np.linspace(1e-6, 1 - 1e-6, 100)])
    worst_q = max(abs(inverse_normal_cdf(float(p)) - bisect_quantile(float(p))) for p in probs)
    worst_cdf = 0.0
    for _ in range(1000):
        params = NormalParams(rng.normal(0, 50), rng.uniform(-3, 4))
        lo, hi = confidence_interval(params, 0.8)
        s = float(params.sigma)
        worst_cdf = max(worst_cdf, abs(oracle_cdf((lo - params.mu) / s) - 0.1), abs(oracle_cdf((hi - params.mu) / s) - 0.9))
    ok = worst_q < 1e-9 and worst_cdf < 1e-8
    record(12, ok, f"quantile gap {worst_q:.2e} over {probs.size} probabilities; 80% endpoint CDF gap {worst_cdf:.2e}")


