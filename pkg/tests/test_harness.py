import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from specstack.config import ConfigError, build_run_config, env_overrides, read_config
from specstack.harness import (
    HarnessError,
    evaluate_unit,
    fit_unit,
    ingest_external_predictions,
    make_plan,
    metric_accuracy,
    metric_rmse,
    read_table,
    run_benchmark,
    write_table,
)
from specstack.splits import SplitError, make_kfold, make_random_splits
from specstack.synthetic import classification_spectra, regression_spectra

TOY_REG = {
    "seed": 7,
    "splits.n": 3,
    "splits.inner_folds": 4,
    "roster.candidates": ["pls", "lasso", "rf"],
    "roster.ensembles": ["ens_nonneg", "ens_MA"],
    "model.pls.ncomp": [1, 2, 3],
    "model.lasso.lambda": [0.2, 0.05],
    "model.rf.ntrees": 20,
    "meta.rf_ntrees": 20,
}


def toy_config(**extra):
    flat = dict(TOY_REG)
    flat.update(extra)
    return build_run_config(flat, require_dataset=False)


@pytest.fixture(scope="module")
def reg_data():
    return regression_spectra(n=90, p=20, n_traits=2, seed=3)


# -- splits ---------------------------------------------------------------------

def test_random_splits_deterministic_and_partition():
    a = make_random_splits(50, 4, 0.75, master_seed=11)
    b = make_random_splits(50, 4, 0.75, master_seed=11)
    c = make_random_splits(50, 4, 0.75, master_seed=12)
    for tr, te, tr2, te2 in zip(a.train, a.test, b.train, b.test):
        np.testing.assert_array_equal(tr, tr2)
        np.testing.assert_array_equal(te, te2)
        assert np.intersect1d(tr, te).size == 0
        np.testing.assert_array_equal(np.union1d(tr, te), np.arange(50))
    assert any(not np.array_equal(x, y) for x, y in zip(a.test, c.test))


def test_stratified_class_proportions():
    sizes = {"GRS": 1094, "CLV": 1120, "TMR": 1061}
    labels = np.concatenate([[k] * v for k, v in sizes.items()])
    plan = make_random_splits(labels.size, 3, 0.75, labels=labels, master_seed=0)
    for te in plan.test:
        for k, v in sizes.items():
            assert abs(np.sum(labels[te] == k) - 0.25 * v) <= 1


@pytest.mark.parametrize("tf", [1.0, 0.0, 1.5])
def test_train_fraction_bounds(tf):
    with pytest.raises(SplitError):
        make_random_splits(20, 2, tf)


def test_stratification_needs_enough_per_class():
    labels = np.array(["a"] * 10 + ["b"])
    with pytest.raises(SplitError):
        make_random_splits(11, 2, 0.75, labels=labels)


@pytest.mark.parametrize("n, sizes", [(20, [2] * 10), (23, [3, 3, 3] + [2] * 7)])
def test_kfold_sizes(n, sizes):
    folds = make_kfold(np.arange(n), 10, seed=1)
    assert sorted((len(f) for f in folds), reverse=True) == sizes


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 12), st.integers(0, 2**31))
def test_kfold_partitions(n, k, seed):
    if k > n:
        with pytest.raises(SplitError):
            make_kfold(np.arange(n), k, seed=seed)
        return
    rows = np.arange(n) * 3 + 1
    folds = make_kfold(rows, k, seed=seed)
    allrows = np.concatenate(folds)
    assert allrows.size == n and np.array_equal(np.sort(allrows), rows)
    sz = [len(f) for f in folds]
    assert max(sz) - min(sz) <= 1


# -- metrics --------------------------------------------------------------------

def test_rmse_examples():
    assert metric_rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert metric_rmse([1.5, 2.5, -0.5], [1.0, 2.0, -1.0]) == pytest.approx(0.5)
    assert metric_rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(HarnessError):
        metric_rmse([1, 2], [1])


def test_accuracy_examples():
    assert metric_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert metric_accuracy([1, 1], [0, 0]) == 0.0
    assert metric_accuracy([0, 1, 1, 2], [0, 1, 2, 2]) == 0.75
    with pytest.raises(HarnessError):
        metric_accuracy([], [])


# -- config ---------------------------------------------------------------------

def test_unknown_model_name_rejected():
    with pytest.raises(ConfigError, match="xgboost"):
        build_run_config({"roster.candidates": ["pls", "xgboost"]}, require_dataset=False)


def test_config_validation():
    with pytest.raises(ConfigError):
        build_run_config({"splits.train_fraction": 1.0}, require_dataset=False)
    with pytest.raises(ConfigError):
        build_run_config({"roster.ensembles": ["ens_maj_vote"]}, task="regression", require_dataset=False)
    with pytest.raises(ConfigError):
        build_run_config({"dataset": "/nonexistent/file.csv"})
    with pytest.raises(ConfigError):
        build_run_config({"roster.candidates": ["pls", "pls"]}, require_dataset=False)


def test_env_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("splits:\n  n: 5\nseed: 1\n")
    flat = read_config(p, environ={"SPECSTACK_SPLITS__N": "9", "OTHER": "x"})
    assert flat["splits.n"] == 9 and flat["seed"] == 1
    assert env_overrides({"SPECSTACK_ROSTER__CANDIDATES": "[pls, rf]"}) == {"roster.candidates": ["pls", "rf"]}


def test_config_hash_ignores_jobs_and_out():
    a = toy_config(jobs=1, out="x")
    b = toy_config(jobs=4, out="y")
    c = toy_config(seed=8)
    assert a.config_hash() == b.config_hash() != c.config_hash()


# -- benchmark ------------------------------------------------------------------

def test_record_count_and_determinism(reg_data):
    cfg = toy_config()
    res = run_benchmark(cfg, reg_data)
    assert len(res.table) == 2 * 3 * 5 == res.manifest["n_records"]
    assert res.manifest["n_failed_cells"] == 0
    assert res.table["value"].notna().all() and (res.table["value"] >= 0).all()
    again = run_benchmark(cfg, reg_data)
    pd.testing.assert_frame_equal(res.table, again.table, check_exact=True)


def test_jobs_do_not_change_table(reg_data, tmp_path):
    cfg = toy_config()
    one = run_benchmark(cfg, reg_data, jobs=1)
    two = run_benchmark(cfg, reg_data, jobs=2)
    write_table(one.table, tmp_path / "a.csv")
    write_table(two.table, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_table_roundtrip(reg_data, tmp_path):
    res = run_benchmark(toy_config(**{"splits.n": 2}), reg_data)
    res.table.loc[0, "value"] = np.nan
    write_table(res.table, tmp_path / "t.csv")
    assert ",rmse,\n" in (tmp_path / "t.csv").read_text()
    back = read_table(tmp_path / "t.csv")
    pd.testing.assert_frame_equal(back, res.table, check_exact=True, check_dtype=False)


def test_failed_cell_is_missing_not_zero(reg_data):
    # ncomp beyond the feature count is rejected at every grid point
    cfg = toy_config(**{"model.pls.ncomp": [500], "splits.n": 2})
    res = run_benchmark(cfg, reg_data)
    pls = res.table[res.table["model_id"] == "pls"]
    assert pls["value"].isna().all()
    assert res.manifest["n_failed_cells"] == len(pls)
    assert res.table[res.table["model_id"] != "pls"]["value"].notna().all()


def _unit(cfg, data, X, split=0, trait=0):
    plan = make_plan(cfg, data)
    target = data.traits.iloc[:, trait].to_numpy()
    return plan, target, fit_unit(cfg, X, target, plan.train[split], split, trait, data.traits.columns[trait])


def test_test_rows_never_influence_fit(reg_data):
    cfg = toy_config(**{"roster.ensembles": ["ens_nonneg", "ens_LASSO", "ens_LM", "ens_RF", "ens_MA"]})
    plan, target, base = _unit(cfg, reg_data, reg_data.absorbance)
    X2 = reg_data.absorbance.copy()
    te = plan.test[0]
    X2[te] = np.random.default_rng(0).normal(scale=100.0, size=X2[te].shape)
    t2 = target.copy()
    t2[te] = 1e6
    pert = fit_unit(cfg, X2, t2, plan.train[0], 0, 0, base.trait_id)
    np.testing.assert_array_equal(base.oof.values, pert.oof.values)
    assert base.chosen == pert.chosen
    assert (base.y_center, base.y_scale) == (pert.y_center, pert.y_scale)
    for name in base.models:
        sa, sb = base.models[name].standardizer, pert.models[name].standardizer
        assert sa == sb
    for name in base.metas:
        np.testing.assert_array_equal(base.metas[name].weights, pert.metas[name].weights)
    r1 = evaluate_unit(base, cfg, reg_data.absorbance, target, te)
    r2 = evaluate_unit(pert, cfg, reg_data.absorbance, target, te)
    assert [r.value for r in r1.records] == [r.value for r in r2.records]


def test_test_row_order_irrelevant(reg_data):
    cfg = toy_config()
    plan, target, fitted = _unit(cfg, reg_data, reg_data.absorbance)
    te = plan.test[0]
    a = evaluate_unit(fitted, cfg, reg_data.absorbance, target, te)
    b = evaluate_unit(fitted, cfg, reg_data.absorbance, target, te[::-1].copy())
    assert [r.value for r in a.records] == [r.value for r in b.records]


def _external_from_saved(res, source, name):
    def conv(df):
        sub = df[df["candidate_id"] == source].copy()
        sub["candidate_id"] = name
        return sub
    return conv(res.predictions), conv(res.oof)


def test_external_passthrough_matches_native(reg_data, tmp_path):
    cfg = toy_config(save_predictions=True, **{"roster.ensembles": ["ens_MA"]})
    res = run_benchmark(cfg, reg_data)
    test_df, oof_df = _external_from_saved(res, "pls", "pls_ext")
    write_table(test_df, tmp_path / "ext.csv")
    write_table(oof_df, tmp_path / "ext_oof.csv")
    cfg2 = toy_config(**{"external.predictions": str(tmp_path / "ext.csv"),
                         "external.oof": str(tmp_path / "ext_oof.csv"), "roster.ensembles": ["ens_MA"]})
    res2 = run_benchmark(cfg2, reg_data)
    t = res2.table.set_index(["split_id", "trait_id", "model_id"])["value"].unstack()
    np.testing.assert_allclose(t["pls_ext"], t["pls"], rtol=1e-12)
    assert "pls_ext" in res2.manifest["models"]


def test_external_coverage_errors(reg_data, tmp_path):
    cfg = toy_config()
    plan = make_plan(cfg, reg_data)
    rows = [(0, int(r), "ext", 0.5) for r in plan.test[0]]
    full = pd.DataFrame(rows, columns=["split_id", "row_id", "candidate_id", "value"])
    full.to_csv(tmp_path / "ok.csv", index=False)
    ext = ingest_external_predictions(tmp_path / "ok.csv", plan)
    assert ext.get(0, "trait1")["ext"].shape == (len(plan.test[0]),)
    missing_row = int(plan.test[0][3])
    full.drop(index=3).to_csv(tmp_path / "miss.csv", index=False)
    with pytest.raises(HarnessError, match=f"row {missing_row}"):
        ingest_external_predictions(tmp_path / "miss.csv", plan)
    extra = pd.concat([full, full.assign(split_id=99)])
    extra.to_csv(tmp_path / "extra.csv", index=False)
    with pytest.raises(HarnessError, match="unknown split id 99"):
        ingest_external_predictions(tmp_path / "extra.csv", plan)


def test_classification_counts_and_ensembles():
    data = classification_spectra(n_per_class=(30, 30, 30), p=15, seed=2)
    flat = {"seed": 1, "splits.n": 2, "splits.inner_folds": 3, "roster.candidates": ["lda", "plsda"],
            "model.plsda.ncomp": [1, 2], "roster.ensembles": ["ens_nonneg", "ens_maj_vote", "ens_MA"]}
    cfg = build_run_config(flat, task="classification", require_dataset=False)
    res = run_benchmark(cfg, data)
    assert len(res.table) == 2 * 5
    assert set(res.table["metric"]) == {"acc"}
    assert res.table["value"].between(0, 1).all()
    assert (res.table["trait_id"] == "label").all()
