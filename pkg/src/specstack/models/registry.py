"""Registry of model kinds with their default grids and legal parameter ranges.

``grid_predictions`` fits once per group of grid points that share a
computation (PLS/PCA component counts, the elastic-net lambda path, forest and
boosting tree counts) and returns one prediction array per point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..data_pipeline import fit_standardizer
from .base import CLASSIFICATION, FIT_ERRORS, REGRESSION, ModelError, TrainedModel, check_xy
from .enet import EnetState, enet_path, fit_enet, multinomial_path, predict_enet
from .latent import fit_pca_lm, fit_pls, predict_pca_lm, predict_pls
from .lda import fit_lda, predict_lda
from .trees import default_mtry, fit_gbm, fit_rf, gbm_staged, predict_gbm, predict_rf

DEFAULT_LAMBDAS = (1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)


def _int_range(lo, hi=None):
    def check(name, v):
        if v is None or int(v) != v or v < lo or (hi is not None and v > hi):
            raise ModelError(f"{name}={v!r} outside legal range")
    return check


def _real_range(lo, hi, lo_open=False):
    def check(name, v):
        bad = v is None or not np.isfinite(v) or v > hi or v < lo or (lo_open and v == lo)
        if bad:
            raise ModelError(f"{name}={v!r} outside legal range")
    return check


def _optional(check):
    def inner(name, v):
        if v is not None:
            check(name, v)
    return inner


@dataclass(frozen=True)
class KindInfo:
    name: str
    tasks: tuple[str, ...]
    defaults: dict  # task -> grid
    checks: dict  # param -> validator
    fit: Callable
    predict: Callable
    path: Callable | None = None

    def default_grid(self, task: str) -> dict:
        return dict(self.defaults.get(task, self.defaults.get(REGRESSION, {})))

    def validate_grid(self, grid) -> None:
        for key, values in grid.items():
            if key not in self.checks:
                raise ModelError(f"{self.name}: unknown hyperparameter {key!r}")
            if len(values) == 0:
                raise ModelError(f"{self.name}: empty value list for {key!r}")
            for v in values:
                self.checks[key](f"{self.name}.{key}", v)


def fit_model(kind: str, X, y, params: dict, task: str, n_classes: int = 0, seed: int = 0) -> TrainedModel:
    info = KINDS[kind]
    if task not in info.tasks:
        raise ModelError(f"model kind {kind!r} does not support {task}")
    return info.fit(X, y, params, task, n_classes, seed)


def predict_array(model: TrainedModel, X) -> np.ndarray:
    """Regression vector or class-probability matrix."""
    return KINDS[model.kind].predict(model, X)


def _fit_pls(X, y, prm, task, K, seed):
    return fit_pls(X, y, int(prm["ncomp"]), task, K)


def _fit_pca(X, y, prm, task, K, seed):
    return fit_pca_lm(X, y, int(prm["ncomp"]), task, K)


def _fit_lda(X, y, prm, task, K, seed):
    return fit_lda(X, y, K)


def _fit_enet(X, y, prm, task, K, seed):
    return fit_enet(X, y, float(prm["alpha"]), float(prm["lambda"]), task, K)


def _fit_rf(X, y, prm, task, K, seed):
    return fit_rf(X, y, int(prm["ntrees"]), prm.get("mtry"), int(prm["min_node"]), seed, task, K)


def _fit_gbm(X, y, prm, task, K, seed):
    return fit_gbm(X, y, int(prm["ntrees"]), int(prm["depth"]), float(prm["shrinkage"]), seed,
                   int(prm.get("min_node", 5)))


def _groups(points, shared_keys):
    groups: dict = {}
    for i, pt in enumerate(points):
        key = tuple(pt.get(k) for k in shared_keys)
        groups.setdefault(key, []).append(i)
    return groups


def _failing(n):
    return [None] * n


def _ncomp_path(fit, predict):
    def path(X, y, Xnew, points, task, K, seed):
        out = _failing(len(points))
        n, p = X.shape
        legal = [i for i, pt in enumerate(points) if 1 <= int(pt["ncomp"]) <= min(n - 1, p)]
        if not legal:
            return out
        top = max(int(points[i]["ncomp"]) for i in legal)
        try:
            model = fit(X, y, top, task, K)
        except FIT_ERRORS:
            # fall back to per-point fits (e.g. rank below ``top``)
            for i in legal:
                try:
                    out[i] = predict(fit(X, y, int(points[i]["ncomp"]), task, K), Xnew)
                except FIT_ERRORS:
                    pass
            return out
        for i in legal:
            out[i] = predict(model, Xnew, int(points[i]["ncomp"]))
        return out
    return path


def _enet_grid(X, y, Xnew, points, task, K, seed):
    out = _failing(len(points))
    X, y = check_xy(X, y, task, K)
    std = fit_standardizer(X)
    Xs = (X - std.means) / std.sds
    Xn = (np.asarray(Xnew, dtype=float) - std.means) / std.sds
    for (alpha,), idx in _groups(points, ["alpha"]).items():
        lams = [float(points[i]["lambda"]) for i in idx]
        if task == REGRESSION:
            b0s, B, _, _ = enet_path(Xs, y, float(alpha), lams)
            for j, i in enumerate(idx):
                out[i] = Xn @ B[j] + b0s[j]
        else:
            states, _ = multinomial_path(Xs, y, K, float(alpha), lams)
            for j, i in enumerate(idx):
                st: EnetState = states[j]
                Z = Xn @ st.coef + st.intercept
                Z -= Z.max(axis=1, keepdims=True)
                E = np.exp(Z)
                out[i] = E / E.sum(axis=1, keepdims=True)
    return out


def _rf_grid(X, y, Xnew, points, task, K, seed):
    out = _failing(len(points))
    for (mtry, min_node), idx in _groups(points, ["mtry", "min_node"]).items():
        top = max(int(points[i]["ntrees"]) for i in idx)
        try:
            model = fit_rf(X, y, top, mtry, int(min_node), seed, task, K)
        except FIT_ERRORS:
            continue
        from .trees import rf_tree_outputs

        trees = rf_tree_outputs(model, Xnew)
        for i in idx:
            out[i] = trees[: int(points[i]["ntrees"])].mean(axis=0)
    return out


def _gbm_grid(X, y, Xnew, points, task, K, seed):
    out = _failing(len(points))
    for (depth, shrink, min_node), idx in _groups(points, ["depth", "shrinkage", "min_node"]).items():
        top = max(int(points[i]["ntrees"]) for i in idx)
        model = fit_gbm(X, y, top, int(depth), float(shrink), seed, int(min_node or 5))
        staged = gbm_staged(model, Xnew, [int(points[i]["ntrees"]) for i in idx])
        for j, i in enumerate(idx):
            out[i] = staged[j]
    return out


KINDS: dict[str, KindInfo] = {
    "pls": KindInfo(
        "pls", (REGRESSION, CLASSIFICATION),
        {REGRESSION: {"ncomp": tuple(range(1, 16))}},
        {"ncomp": _int_range(1)},
        _fit_pls, lambda m, X: predict_pls(m, X), _ncomp_path(fit_pls, predict_pls),
    ),
    "pca_lm": KindInfo(
        "pca_lm", (REGRESSION,),
        {REGRESSION: {"ncomp": (1, 2, 3, 5, 8, 12, 16, 20)}},
        {"ncomp": _int_range(1)},
        _fit_pca, lambda m, X: predict_pca_lm(m, X), _ncomp_path(fit_pca_lm, predict_pca_lm),
    ),
    "lda": KindInfo(
        "lda", (CLASSIFICATION,), {CLASSIFICATION: {}}, {},
        _fit_lda, predict_lda, None,
    ),
    "enet": KindInfo(
        "enet", (REGRESSION, CLASSIFICATION),
        {REGRESSION: {"alpha": (0.5,), "lambda": DEFAULT_LAMBDAS}},
        {"alpha": _real_range(0.0, 1.0), "lambda": _real_range(0.0, np.inf)},
        _fit_enet, predict_enet, _enet_grid,
    ),
    "rf": KindInfo(
        "rf", (REGRESSION, CLASSIFICATION),
        {REGRESSION: {"ntrees": (500,), "mtry": (None,), "min_node": (5,)}},
        {"ntrees": _int_range(1), "mtry": _optional(_int_range(1)), "min_node": _int_range(1)},
        _fit_rf, predict_rf, _rf_grid,
    ),
    "gbm": KindInfo(
        "gbm", (REGRESSION,),
        {REGRESSION: {"ntrees": (50, 100, 200), "depth": (2, 3), "shrinkage": (0.1,), "min_node": (5,)}},
        {"ntrees": _int_range(0), "depth": _int_range(1), "shrinkage": _real_range(0.0, 1.0, lo_open=True),
         "min_node": _int_range(1)},
        _fit_gbm, predict_gbm, _gbm_grid,
    ),
}


def grid_predictions(kind: str, X, y, Xnew, points: list[dict], task: str, n_classes: int = 0,
                     seed: int = 0) -> list[np.ndarray | None]:
    """Predictions on ``Xnew`` for every grid point; ``None`` marks a failed fit."""
    info = KINDS[kind]
    if info.path is not None:
        try:
            return info.path(X, y, Xnew, points, task, n_classes, seed)
        except FIT_ERRORS:
            pass
    out = []
    for pt in points:
        try:
            out.append(info.predict(info.fit(X, y, pt, task, n_classes, seed), Xnew))
        except FIT_ERRORS:
            out.append(None)
    return out


def resolve_params(kind: str, params: dict, p: int, task: str) -> dict:
    """Fill data-dependent defaults (currently rf mtry)."""
    params = dict(params)
    if kind == "rf" and params.get("mtry") is None:
        params["mtry"] = default_mtry(p, task)
    return params
