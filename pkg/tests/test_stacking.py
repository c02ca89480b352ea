import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import nnls_enumeration, nnls_projected_gradient, ols_normal_equations
from specstack.models import ModelSpec, enet_objective
from specstack.splits import make_kfold
from specstack.stacking import (
    MetaCoefficients,
    OofPredictions,
    StackingError,
    blend,
    fit_meta_classification,
    fit_meta_regression,
    fit_nonneg_logistic,
    generate_oof,
    logistic_meta_objective,
    majority_vote,
    model_average,
    nonneg_least_squares,
    refit_predict,
    regression_meta_loss,
)


def _reg_data(n=20, p=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, 0] - 0.5 * X[:, 1] + 0.1 * rng.normal(size=n)
    return X, y


def _oof(Z, y=None, names=None):
    Z = np.asarray(Z, dtype=float)
    n, M = Z.shape
    return OofPredictions(0, np.arange(n), np.arange(n) % 2, tuple(names or [f"c{m}" for m in range(M)]), Z)


REG_CANDS = [
    ModelSpec("pls", "regression", {"ncomp": (1, 2, 3)}, name="pls"),
    ModelSpec("enet", "regression", {"alpha": (0.5,), "lambda": (0.1, 0.01)}, name="enet"),
    ModelSpec("pca_lm", "regression", {"ncomp": (1, 2)}, name="pcr"),
]


def test_oof_coverage_regression():
    X, y = _reg_data()
    folds = make_kfold(np.arange(20), 10, seed=1)
    fits = generate_oof(REG_CANDS, X, y, folds, seed=3)
    oof = fits.oof
    assert oof.values.shape == (20, 3)
    assert np.all(np.isfinite(oof.values))
    for f, rows in enumerate(folds):
        assert np.all(oof.fold_of_row[rows] == f)
    assert set(fits.chosen) == {"pls", "enet", "pcr"}


def test_mean_predictor_is_piecewise_constant():
    X, y = _reg_data(30)
    folds = make_kfold(np.arange(30), 10, seed=2)
    spec = ModelSpec("enet", "regression", {"alpha": (1.0,), "lambda": (1e6,)}, name="mean")
    oof = generate_oof([spec], X, y, folds).oof
    for rows in folds:
        train = np.setdiff1d(np.arange(30), rows)
        np.testing.assert_allclose(oof.values[rows, 0], y[train].mean(), atol=1e-12)


def test_oof_row_never_sees_itself():
    X, y = _reg_data(30, seed=4)
    folds = make_kfold(np.arange(30), 10, seed=5)
    spec = [ModelSpec("pls", "regression", {"ncomp": (2,)}, name="pls")]
    a = generate_oof(spec, X, y, folds).oof.values
    r = folds[3][0]
    X2, y2 = X.copy(), y.copy()
    X2[r] += 100.0
    y2[r] = -1e3
    b = generate_oof(spec, X2, y2, folds).oof.values
    same = folds[3][1:]
    np.testing.assert_array_equal(a[same], b[same])
    others = np.setdiff1d(np.arange(30), folds[3])
    assert np.all(a[others] != b[others])


def test_oof_classification_blocks():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1, 2], 10)
    X = rng.normal(size=(30, 5)) + y[:, None]
    folds = make_kfold(np.arange(30), 5, y, seed=0)
    cands = [ModelSpec("lda", "classification", {}, name="lda"),
             ModelSpec("pls", "classification", {"ncomp": (1, 2)}, name="plsda")]
    oof = generate_oof(cands, X, y, folds, n_classes=3).oof
    assert oof.values.shape == (30, 6)
    for blk in oof.blocks():
        np.testing.assert_allclose(blk.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(blk >= 0)


def test_failing_candidate_is_named():
    X, y = _reg_data(20)
    folds = make_kfold(np.arange(20), 10, seed=0)
    bad = ModelSpec("pls", "regression", {"ncomp": (15,)}, name="too_many_components")
    with pytest.raises(StackingError, match="too_many_components"):
        generate_oof([REG_CANDS[0], bad], X, y, folds)


def test_oof_csv_roundtrip(tmp_path):
    X, y = _reg_data()
    oof = generate_oof(REG_CANDS, X, y, make_kfold(np.arange(20), 10)).oof
    oof.to_csv(tmp_path / "oof.csv")
    back = OofPredictions.from_csv(tmp_path / "oof.csv")
    assert back.candidates == oof.candidates
    np.testing.assert_array_equal(back.values, oof.values)
    np.testing.assert_array_equal(back.fold_of_row, oof.fold_of_row)
    header = (tmp_path / "oof.csv").read_text().splitlines()[0]
    assert header == "row_id,fold,pls,enet,pcr"


def test_refit_predict_matches_direct_fit():
    from specstack.models import fit_model, predict_array
    X, y = _reg_data(30)
    Xn = np.random.default_rng(1).normal(size=(5, 8))
    chosen = {"pls": {"ncomp": 2}, "enet": {"alpha": 0.5, "lambda": 0.01}, "pcr": {"ncomp": 2}}
    preds = refit_predict(REG_CANDS, chosen, X, y, Xn)
    direct = predict_array(fit_model("pls", X, y, {"ncomp": 2}, "regression"), Xn)
    np.testing.assert_allclose(preds[0], direct, atol=1e-10)


def test_nonneg_examples_without_intercept():
    I = np.eye(2)
    m = fit_meta_regression(_oof(I), [1.0, 2.0], "nonneg", fit_intercept=False)
    np.testing.assert_allclose(m.weights, [1.0, 2.0], atol=1e-12)
    m = fit_meta_regression(_oof(I), [-1.0, 2.0], "nonneg", fit_intercept=False)
    np.testing.assert_allclose(m.weights, [0.0, 2.0], atol=1e-12)


def test_nonneg_matches_oracles_6x2():
    rng = np.random.default_rng(7)
    Z = rng.normal(size=(6, 2))
    y = -1.5 * Z[:, 0] + 0.7 * Z[:, 1] + 0.3 + 0.05 * rng.normal(size=6)
    w, b = nonneg_least_squares(Z, y)
    Zc, yc = Z - Z.mean(axis=0), y - y.mean()
    np.testing.assert_allclose(w, nnls_projected_gradient(Zc, yc), atol=1e-6)
    np.testing.assert_allclose(w, nnls_enumeration(Zc, yc), atol=1e-10)
    assert w[0] == 0.0 and w[1] > 0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), M=st.integers(1, 8))
def test_nonneg_kkt(seed, M):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(30, M))
    y = Z @ rng.normal(size=M) + rng.normal(size=30)
    w, b = nonneg_least_squares(Z, y)
    g = Z.T @ (b + Z @ w - y)
    assert np.all(w >= 0)
    assert np.all(np.abs(g[w > 0]) <= 1e-6)
    assert np.all(g[w == 0] >= -1e-6)
    assert abs(np.sum(b + Z @ w - y)) <= 1e-8


def test_nnls_iteration_cap():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(20, 6))
    y = Z @ np.ones(6)
    with pytest.raises(StackingError, match="iterations"):
        nonneg_least_squares(Z, y, max_iter=1)


def test_lm_matches_normal_equations():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(40, 3))
    y = Z @ [1.0, -2.0, 0.5] + 1.0 + rng.normal(size=40)
    m = fit_meta_regression(_oof(Z), y, "lm")
    b0, b = ols_normal_equations(Z, y)
    np.testing.assert_allclose(m.weights, b, atol=1e-10)
    assert m.intercept == pytest.approx(b0, abs=1e-10)


def _candidate_matrix(seed, n=60, M=4):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    Z = y[:, None] + rng.normal(scale=rng.uniform(0.2, 1.5, M), size=(n, M))
    return Z, y


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_meta_no_worse_than_best_single_candidate(seed):
    Z, y = _candidate_matrix(seed)
    oof = _oof(Z)
    best = min(np.mean((y - Z[:, m]) ** 2) for m in range(Z.shape[1]))
    for kind in ("nonneg", "lm"):
        assert regression_meta_loss(fit_meta_regression(oof, y, kind), oof, y) <= best + 1e-12
    m = fit_meta_regression(oof, y, "lasso", seed=seed)
    lam = m.info["lambda"]
    sd = Z.std(axis=0, ddof=1)
    Zs = (Z - Z.mean(axis=0)) / sd
    fitted = enet_objective(Zs, y, m.intercept + Z.mean(axis=0) @ m.weights, m.weights * sd, lam, 1.0)
    for j in range(Z.shape[1]):
        beta = np.zeros(Z.shape[1])
        beta[j] = sd[j]
        indicator = enet_objective(Zs, y, Z[:, j].mean(), beta, lam, 1.0)
        assert fitted <= indicator + 1e-9


def test_rf_meta_runs_and_is_deterministic():
    Z, y = _candidate_matrix(1)
    a = fit_meta_regression(_oof(Z), y, "rf", seed=4, rf_ntrees=50)
    b = fit_meta_regression(_oof(Z), y, "rf", seed=4, rf_ntrees=50)
    np.testing.assert_array_equal(blend(a, list(Z.T)).values, blend(b, list(Z.T)).values)


def _calibrated_probs(seed, n=400, K=3):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=2.0, size=(n, K))
    P = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = np.array([rng.choice(K, p=p) for p in P])
    return P, labels


def test_nonneg_logistic_calibrated_candidate():
    P, labels = _calibrated_probs(0)
    noise = np.random.default_rng(1).dirichlet(np.ones(3), size=P.shape[0])
    oof = OofPredictions(0, np.arange(len(labels)), np.zeros(len(labels), int), ("good", "noise"),
                         np.hstack([P, noise]), 3)
    meta = fit_meta_classification(oof, labels)
    assert meta.converged
    assert meta.weights[0] > 0 and np.all(meta.weights >= 0)
    fitted = logistic_meta_objective(meta.weights, meta.intercept, oof.blocks(), labels, 3)
    assert fitted <= logistic_meta_objective([0.5, 0.5], np.zeros(3), oof.blocks(), labels, 3)
    for m in range(2):
        e = np.eye(2)[m]
        assert fitted <= logistic_meta_objective(e, np.zeros(3), oof.blocks(), labels, 3) + 1e-12


def test_logistic_objective_at_origin_is_intercept_only():
    P, labels = _calibrated_probs(2)
    freq = np.bincount(labels, minlength=3) / labels.size
    b = np.log(freq)
    expected = -np.mean(np.log(freq[labels]))
    assert logistic_meta_objective([0.0], b, [P], labels, 3) == pytest.approx(expected, rel=1e-12)


def test_projected_gradient_monotone():
    P, labels = _calibrated_probs(3, n=200)
    Q = np.roll(P, 1, axis=1)
    trace = []
    w, b, ok, _ = fit_nonneg_logistic([P, Q], labels, 3, trace=trace)
    assert ok
    assert np.all(np.diff(trace) <= 1e-15)
    assert w[1] == 0.0


def test_blend_examples():
    meta = MetaCoefficients("nonneg", ("a", "b"), np.array([1.0, 0.0]), 0.0)
    p1 = np.array([1.5, -2.0, 7.0])
    np.testing.assert_array_equal(blend(meta, [p1, np.ones(3)]).values, p1)
    half = MetaCoefficients("nonneg", ("a", "b"), np.array([0.5, 0.5]), 0.0)
    np.testing.assert_allclose(blend(half, {"b": np.full(2, 4.0), "a": np.full(2, 2.0)}).values, 3.0)
    with pytest.raises(StackingError):
        blend(half, {"a": np.ones(2), "c": np.ones(2)})
    with pytest.raises(StackingError):
        blend(half, [np.ones(2)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), M=st.integers(1, 6))
def test_blend_convex_and_permutation_equivariant(seed, M):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 1, M)
    w /= w.sum()
    P = [rng.uniform(-2, 5, 10) for _ in range(M)]
    names = tuple(f"c{m}" for m in range(M))
    out = blend(MetaCoefficients("nonneg", names, w, 0.0), P).values
    assert np.all(out >= -2 - 1e-12) and np.all(out <= 5 + 1e-12)
    perm = rng.permutation(M)
    meta_p = MetaCoefficients("nonneg", tuple(names[i] for i in perm), w[perm], 0.0)
    np.testing.assert_allclose(blend(meta_p, [P[i] for i in perm]).values, out, atol=1e-12)


def test_model_average():
    np.testing.assert_array_equal(model_average([np.array([1.0]), np.array([3.0])]).values, [2.0])
    p = np.array([0.3, 9.0])
    np.testing.assert_array_equal(model_average([p]).values, p)
    np.testing.assert_allclose(model_average([p] * 5).values, p)
    with pytest.raises(StackingError):
        model_average([])


def test_majority_vote():
    A, B = [0.9, 0.1], [0.2, 0.8]
    assert majority_vote([np.array([A]), np.array([A]), np.array([B])]).labels.tolist() == [0]
    assert majority_vote([np.array([[0.7, 0.3]]), np.array([[0.5, 0.5 + 1e-9]])]).labels.tolist() == [0]
    assert majority_vote([np.array([[0.6, 0.4]]), np.array([[0.4, 0.6]])]).labels.tolist() == [0]
    assert majority_vote([np.array([[0.1, 0.4, 0.5]]), np.array([[0.1, 0.6, 0.3]])]).labels.tolist() == [1]
    with pytest.raises(StackingError):
        majority_vote([np.ones((2, 2)) / 2, np.ones((2, 3)) / 3])
    with pytest.raises(StackingError):
        majority_vote([])
