import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from oracles import anova_variance_components, ols_normal_equations
from specstack.lme import (
    LmeError,
    LmeSpec,
    effect_estimates,
    fit_lme,
    holm_adjust,
    posthoc_pairwise,
    regression_spec,
    reml_profile,
    variance_ratio,
    wald_test,
)
from specstack.synthetic import performance_table

INTERCEPT_ONLY = LmeSpec("value", (), "split_id")


def _one_way(g, n, sd_split, seed):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(g), n)
    y = 3.0 + rng.normal(scale=sd_split, size=g)[groups] + rng.normal(size=g * n)
    return pd.DataFrame({"split_id": groups, "value": y})


def test_reml_matches_anova_over_random_layouts():
    rng = np.random.default_rng(2024)
    hit_boundary = 0
    for i in range(50):
        g, n = int(rng.integers(2, 12)), int(rng.integers(2, 9))
        df = _one_way(g, n, float(rng.choice([0.0, 0.3, 1.0, 3.0])), seed=i)
        fit = fit_lme(df, INTERCEPT_ONLY)
        s_split, s_res = anova_variance_components(df["value"].to_numpy(), df["split_id"].to_numpy())
        hit_boundary += s_split == 0.0
        assert fit.sigma2_resid == pytest.approx(s_res, rel=1e-8)
        assert fit.sigma2_split == pytest.approx(s_split, rel=1e-8, abs=1e-8 * s_res)
    assert hit_boundary > 0  # the truncated branch was exercised


def test_constant_response_is_degenerate():
    df = pd.DataFrame({"split_id": np.repeat([0, 1, 2], 2), "model_id": ["a", "b"] * 3, "value": 0.7})
    fit = fit_lme(df, LmeSpec())
    assert fit.beta[0] == pytest.approx(0.7, abs=1e-12)
    assert fit.sigma2_split == 0.0 and fit.sigma2_resid == 0.0
    assert fit.boundary and fit.degenerate
    with pytest.raises(LmeError):
        variance_ratio(fit)


def test_no_split_variance_matches_ols():
    # Split means exactly equal, so the REML optimum is gamma = 0.
    models = ["a", "b", "c"]
    df = performance_table(8, models, ratio=0.0, seed=3, model_effects=[0.0, 0.2, -0.1])
    df["value"] -= df.groupby("split_id")["value"].transform("mean") - 1.0
    fit = fit_lme(df, LmeSpec())
    assert fit.gamma == 0.0 and fit.boundary
    X = np.column_stack([df["model_id"] == "b", df["model_id"] == "c"]).astype(float)
    b0, slopes = ols_normal_equations(X, df["value"].to_numpy())
    np.testing.assert_allclose(fit.beta, np.r_[b0, slopes], atol=1e-6)


def test_grand_mean_of_one_two_three():
    df = pd.DataFrame({"split_id": [0, 1, 2], "value": [1.0, 2.0, 3.0]})
    fit = fit_lme(df, INTERCEPT_ONLY)
    (eff,) = effect_estimates(fit, ())
    assert eff.estimate == pytest.approx(2.0, abs=1e-12)
    assert eff.lower <= eff.estimate <= eff.upper


def test_ci_width_scales_with_se():
    df = performance_table(6, ["a", "b"], ratio=1.0, seed=1)
    fit = fit_lme(df, LmeSpec())
    base = effect_estimates(fit, "model_id")
    fit.cov_beta = fit.cov_beta * 4.0
    wide = effect_estimates(fit, "model_id")
    for e0, e1 in zip(base, wide):
        assert e1.upper - e1.lower == pytest.approx(2 * (e0.upper - e0.lower), rel=1e-12)
        assert e1.estimate == e0.estimate


def test_balanced_cell_means_equal_raw_means():
    df = performance_table(7, ["a", "b"], traits=("t1", "t2", "t3"), ratio=2.0, seed=9,
                           model_effects=[0.0, 0.05])
    fit = fit_lme(df, regression_spec())
    raw_m = df.groupby("model_id")["value"].mean()
    for e in effect_estimates(fit, "model_id"):
        assert e.estimate == pytest.approx(raw_m[e.cell[0]], abs=1e-8)
    raw_c = df.groupby(["model_id", "trait_id"])["value"].mean()
    for e in effect_estimates(fit, ("model_id", "trait_id")):
        assert e.estimate == pytest.approx(raw_c[e.cell], abs=1e-8)


def test_cell_outside_design_rejected():
    fit = fit_lme(performance_table(4, ["a", "b"], seed=0), LmeSpec())
    with pytest.raises(LmeError):
        effect_estimates(fit, "model_id", cells=[("zzz",)])
    with pytest.raises(LmeError):
        effect_estimates(fit, "trait_id")


def test_identical_algorithms_give_null_contrast():
    df = performance_table(10, ["a"], seed=4)
    dup = df.assign(model_id="a_copy")
    fit = fit_lme(pd.concat([df, dup], ignore_index=True), LmeSpec())
    row = posthoc_pairwise(fit).iloc[0]
    assert abs(row["difference"]) < 1e-10
    assert row["p_raw"] == pytest.approx(1.0, abs=1e-6)
    assert not row["significant"]


@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=30))
def test_holm_dominates_raw_and_is_monotone(p):
    p = np.array(p)
    adj = holm_adjust(p)
    assert np.all(adj >= p - 1e-15)
    assert np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= -1e-15)


def test_shifted_algorithm_contrasts_significant():
    models = ["a", "b", "c", "d"]
    df = performance_table(10, models, ratio=0.5, sigma_resid=0.1, seed=11,
                           model_effects=[0.0, 0.0, 0.0, 0.5])
    tab = posthoc_pairwise(fit_lme(df, LmeSpec()))
    involved = (tab["level_a"] == "d") | (tab["level_b"] == "d")
    assert tab.loc[involved, "significant"].all()
    assert len(tab) == 6


def test_posthoc_needs_two_levels():
    fit = fit_lme(performance_table(5, ["a"], seed=0), LmeSpec())
    with pytest.raises(LmeError):
        posthoc_pairwise(fit)


@pytest.mark.parametrize("s_split, s_resid, expected", [(4.0, 1.0, 2.0), (0.0, 1.0, 0.0), (0.25, 1.0, 0.5)])
def test_variance_ratio_definition(s_split, s_resid, expected):
    fit = fit_lme(performance_table(5, ["a", "b"], seed=0), LmeSpec())
    fit.sigma2_split, fit.sigma2_resid = s_split, s_resid
    assert variance_ratio(fit) == pytest.approx(expected, abs=1e-15)


def test_reml_optimum_beats_probe_grid():
    for seed in range(5):
        df = performance_table(12, ["a", "b", "c"], ratio=[0.0, 0.5, 2.0, 0.1, 5.0][seed], seed=seed)
        fit = fit_lme(df, LmeSpec())
        probes = reml_profile(fit, np.logspace(-6, 6, 64))
        assert fit.reml_loglik >= probes.max() - 1e-9 * max(1.0, abs(fit.reml_loglik))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.01, 100))
def test_location_scale_equivariance(seed, c, k):
    df = performance_table(6, ["a", "b", "c"], ratio=1.0, seed=seed, model_effects=[0.0, 0.1, 0.3])
    base = fit_lme(df, LmeSpec())
    shifted = fit_lme(df.assign(value=df["value"] + c), LmeSpec())
    scaled = fit_lme(df.assign(value=df["value"] * k), LmeSpec())
    tol = 1e-9
    assert shifted.beta[0] == pytest.approx(base.beta[0] + c, abs=tol * (1 + abs(c)))
    np.testing.assert_allclose(shifted.beta[1:], base.beta[1:], atol=tol * (1 + abs(c)))
    for a, b in ((shifted.sigma2_split, base.sigma2_split), (shifted.sigma2_resid, base.sigma2_resid)):
        assert a == pytest.approx(b, rel=1e-6, abs=tol * (1 + c * c))
    np.testing.assert_allclose(scaled.beta, k * base.beta, rtol=1e-9, atol=1e-12)
    assert scaled.sigma2_resid == pytest.approx(k * k * base.sigma2_resid, rel=1e-6)
    assert scaled.sigma2_split == pytest.approx(k * k * base.sigma2_split, rel=1e-6, abs=1e-12 * k * k)
    e0 = effect_estimates(base, "model_id")
    e1 = effect_estimates(scaled, "model_id")
    for a, b in zip(e0, e1):
        assert b.lower == pytest.approx(k * a.lower, rel=1e-6)
        assert b.upper == pytest.approx(k * a.upper, rel=1e-6)
    t0, t1, t2 = (posthoc_pairwise(f) for f in (base, shifted, scaled))
    np.testing.assert_allclose(t1["difference"], t0["difference"], atol=tol * (1 + abs(c)))
    assert list(t0["significant"]) == list(t1["significant"]) == list(t2["significant"])


def test_rank_deficiency_names_aliased_columns():
    df = performance_table(5, ["a", "b", "c"], seed=0)
    df["model_copy"] = df["model_id"]
    with pytest.raises(LmeError, match=r"model_copy\[b\]"):
        fit_lme(df, LmeSpec("value", ("model_id", "model_copy"), "split_id"))


def test_missing_and_nonfinite_responses():
    df = performance_table(5, ["a", "b"], seed=0)
    df.loc[3, "value"] = np.nan
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_lme(df, LmeSpec())
    assert fit.n_dropped == 1 and fit.n_obs == len(df) - 1
    assert any("dropped 1" in str(w.message) for w in caught)
    df.loc[4, "value"] = np.inf
    with pytest.raises(LmeError):
        fit_lme(df, LmeSpec())


def test_single_group_rejected():
    df = performance_table(1, ["a", "b"], seed=0)
    with pytest.raises(LmeError):
        fit_lme(df, LmeSpec())


def test_df_rule():
    df = performance_table(10, ["a", "b", "c"], traits=("t1", "t2"), seed=0)
    fit = fit_lme(df, regression_spec())
    assert fit.df == 60 - 6 - 9


def test_cov_beta_symmetric_psd():
    fit = fit_lme(performance_table(10, list("abcde"), ratio=2.0, seed=2), LmeSpec())
    np.testing.assert_array_equal(fit.cov_beta, fit.cov_beta.T)
    assert np.linalg.eigvalsh(fit.cov_beta).min() > -1e-14


def test_wald_interaction():
    models, traits = ["a", "b"], ("t1", "t2", "t3")
    null = performance_table(20, models, traits, ratio=1.0, seed=6)
    wt = wald_test(fit_lme(null, regression_spec()), "model_id:trait_id")
    assert wt.df_num == 2 and 0.0 <= wt.p_value <= 1.0
    strong = null.copy()
    strong.loc[(strong["model_id"] == "b") & (strong["trait_id"] == "t3"), "value"] += 1.0
    wt2 = wald_test(fit_lme(strong, regression_spec()), "model_id:trait_id")
    assert wt2.p_value < 1e-6
    with pytest.raises(LmeError):
        wald_test(fit_lme(null, LmeSpec()), "model_id:trait_id")
