import numpy as np
import pandas as pd
import pytest

from oipharness.stats import EmptyCell, RankDeficientDesign, build_frame, fit_lmm, reml_criterion
from oipharness.stats.lmm import _check_rank

from oracles import grid_search_reml, ols, random_instance


def two_groups():
    return pd.DataFrame({"g": ["x"] * 6, "item_id": [1, 1, 1, 2, 2, 2], "value": [1.0, 2, 3, 4, 5, 6]})


def test_two_group_closed_form():
    fit = fit_lmm(build_frame(two_groups(), ["g"], "replication_level"))
    assert fit.sigma2 == pytest.approx(1.0, abs=1e-9)
    assert abs(fit.tau2 - 25.0 / 6.0) < 1e-6
    assert fit.beta[0] == pytest.approx(3.5)
    assert fit.n_obs == 6 and fit.rank_X == 1 and fit.n_groups == 2


@pytest.mark.parametrize("seed", range(5))
def test_reml_matches_dense_grid(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(4):
        df, factors = random_instance(rng)
        fr = build_frame(df, factors, "replication_level")
        fit = fit_lmm(fr)
        best, theta = grid_search_reml(fr.X, fr.y, fr.groups)
        assert abs(fit.reml_criterion - best) <= 1e-8
        assert fit.sigma2 > 0 and fit.tau2 >= 0 and np.all(fit.se_beta > 0)


def test_criterion_function_matches_fit():
    fr = build_frame(two_groups(), ["g"], "replication_level")
    fit = fit_lmm(fr)
    assert reml_criterion(fr, fit.theta) == pytest.approx(fit.reml_criterion, abs=1e-12)
    assert reml_criterion(fr, 0.0) > fit.reml_criterion


def _boundary_data(seed=0):
    """Items nested in categories, residual item means forced to zero so theta-hat is 0."""
    rng = np.random.default_rng(seed)
    rows = []
    for cat in "ABC":
        for j in range(6):
            for rep in range(3):
                rows.append((cat, f"{cat}{j}", {"A": 1.0, "B": 2.0, "C": 2.5}[cat] + rng.normal()))
    df = pd.DataFrame(rows, columns=["cat", "item_id", "value"])
    cell = df.groupby("cat")["value"].transform("mean")
    df["value"] -= (df["value"] - cell).groupby(df["item_id"]).transform("mean")
    return df


def test_boundary_is_ols():
    fr = build_frame(_boundary_data(), ["cat"], "replication_level")
    fit = fit_lmm(fr)
    assert fit.theta < 1e-10 and fit.tau2 < 1e-10
    beta, cov, s2 = ols(fr.X, fr.y)
    np.testing.assert_allclose(fit.beta, beta, atol=1e-10)
    np.testing.assert_allclose(fit.se_beta, np.sqrt(np.diag(cov)), atol=1e-10)
    assert fit.sigma2 == pytest.approx(s2, abs=1e-10)


def test_fixed_theta_zero_reproduces_ols():
    rng = np.random.default_rng(3)
    df, factors = random_instance(rng)
    fr = build_frame(df, factors, "replication_level")
    fit = fit_lmm(fr, theta=0.0)
    beta, cov, _ = ols(fr.X, fr.y)
    np.testing.assert_allclose(fit.beta, beta, atol=1e-10)
    np.testing.assert_allclose(fit.cov_beta, cov, atol=1e-10)


def test_item_aggregation_and_replication_level():
    df = _boundary_data()
    agg = build_frame(df, ["cat"])
    rep = build_frame(df, ["cat"], "replication_level")
    assert agg.n_obs == 18 and rep.n_obs == 54
    assert agg.n_groups == rep.n_groups == 18
    assert np.isclose(agg.y.mean(), rep.y.mean())


def test_empty_cell():
    df = pd.DataFrame({"a": ["x", "x", "y"], "b": ["p", "q", "p"], "item_id": [1, 2, 3], "value": [1.0, 2, 3]})
    with pytest.raises(EmptyCell):
        build_frame(df, ["a", "b"])


def test_missing_rows_are_dropped():
    df = two_groups()
    df.loc[0, "value"] = np.nan
    assert build_frame(df, ["g"], "replication_level").n_obs == 5


def test_rank_check():
    X = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(RankDeficientDesign):
        _check_rank(X)


def test_study_shaped_ranks():
    rng = np.random.default_rng(5)
    rows = [(llm, "RIASEC"[item % 6], item, 3.0 + rng.normal()) for llm in range(4) for item in range(60)]
    df = pd.DataFrame(rows, columns=["llm", "category", "item_id", "value"])
    fit = fit_lmm(build_frame(df, ["llm", "category"]))
    assert (fit.n_obs, fit.rank_X, fit.df_resid) == (240, 24, 216)
