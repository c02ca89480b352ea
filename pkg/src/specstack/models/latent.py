"""Latent-variable regressions: NIPALS partial least squares and PCA + OLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_pipeline import fit_standardizer
from .base import (
    CLASSIFICATION,
    REGRESSION,
    ModelError,
    TrainedModel,
    check_xy,
    normalize_proba,
    one_hot,
)


@dataclass(frozen=True)
class PlsState:
    weights: np.ndarray  # W, p x a
    loadings: np.ndarray  # P, p x a
    y_loadings: np.ndarray  # Q, m x a
    scores: np.ndarray  # T, n x a
    y_mean: np.ndarray  # m
    coef_path: np.ndarray  # a x p x m, coefficients for 1..a components


def nipals_pls(X, Y, ncomp, tol=1e-12, max_iter=500):
    """PLS by NIPALS with X-block deflation.

    ``X`` (n x p) and ``Y`` (n x m) must be column-centred.  Returns weight,
    X-loading, Y-loading and score matrices plus the deflated X residual.
    """
    X = X.copy()
    n, p = X.shape
    m = Y.shape[1]
    W = np.zeros((p, ncomp))
    P = np.zeros((p, ncomp))
    Q = np.zeros((m, ncomp))
    T = np.zeros((n, ncomp))
    for a in range(ncomp):
        u = Y[:, np.argmax((Y ** 2).sum(axis=0))].copy()
        t_old = None
        for _ in range(max_iter):
            w = X.T @ u
            nw = np.linalg.norm(w)
            if nw == 0:
                raise ModelError(f"PLS component {a + 1} is degenerate (X'u = 0)")
            w /= nw
            t = X @ w
            tt = t @ t
            q = Y.T @ t / tt
            if m == 1:
                break
            u = Y @ q / (q @ q)
            if t_old is not None and np.linalg.norm(t - t_old) <= tol * np.linalg.norm(t):
                break
            t_old = t
        p_a = X.T @ t / tt
        X -= np.outer(t, p_a)
        W[:, a], P[:, a], Q[:, a], T[:, a] = w, p_a, q, t
    return W, P, Q, T, X


def _pls_coef_path(W, P, Q):
    ncomp = W.shape[1]
    path = np.empty((ncomp, W.shape[0], Q.shape[0]))
    for a in range(1, ncomp + 1):
        Wa = W[:, :a]
        R = Wa @ np.linalg.inv(P[:, :a].T @ Wa)
        path[a - 1] = R @ Q[:, :a].T
    return path


def fit_pls(X, y, ncomp: int, task: str = REGRESSION, n_classes: int = 0) -> TrainedModel:
    """Partial least squares; classification regresses a one-hot response."""
    X, y = check_xy(X, y, task, n_classes)
    n, p = X.shape
    if not 1 <= ncomp <= min(n - 1, p):
        raise ModelError(f"pls: ncomp={ncomp} outside [1, {min(n - 1, p)}]")
    std = fit_standardizer(X, scale=False)
    Xs = X - std.means
    Y = one_hot(y, n_classes) if task == CLASSIFICATION else y[:, None]
    y_mean = Y.mean(axis=0)
    Yc = Y - y_mean
    if not np.any(Yc.std(axis=0) > 0):
        raise ModelError("pls: response has zero variance")
    W, P, Q, T, _ = nipals_pls(Xs, Yc, ncomp)
    state = PlsState(W, P, Q, T, y_mean, _pls_coef_path(W, P, Q))
    return TrainedModel("pls", task, {"ncomp": ncomp}, state, p, n_classes, std)


def _latent_output(model: TrainedModel, Z: np.ndarray):
    if model.task == CLASSIFICATION:
        return normalize_proba(Z)
    return Z[:, 0]


def predict_pls(model: TrainedModel, X, ncomp: int | None = None):
    st: PlsState = model.state
    a = model.params["ncomp"] if ncomp is None else ncomp
    Z = model.transform(X) @ st.coef_path[a - 1] + st.y_mean
    return _latent_output(model, Z)


@dataclass(frozen=True)
class PcaLmState:
    components: np.ndarray  # p x a, right singular vectors
    coef: np.ndarray  # a x m score-space coefficients
    y_mean: np.ndarray


def fit_pca_lm(X, y, ncomp: int, task: str = REGRESSION, n_classes: int = 0) -> TrainedModel:
    """Least squares of ``y`` on the leading principal component scores."""
    X, y = check_xy(X, y, task, n_classes)
    n, p = X.shape
    if not 1 <= ncomp <= min(n - 1, p):
        raise ModelError(f"pca_lm: ncomp={ncomp} outside [1, {min(n - 1, p)}]")
    std = fit_standardizer(X, scale=False)
    Xs = X - std.means
    U, s, Vt = np.linalg.svd(Xs, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(n, p) * np.finfo(float).eps))
    if ncomp > rank:
        raise ModelError(f"pca_lm: ncomp={ncomp} exceeds rank {rank}")
    Y = y[:, None] if task == REGRESSION else one_hot(y, n_classes)
    y_mean = Y.mean(axis=0)
    # Scores U*s are orthogonal, so each coefficient is a 1-D projection.
    scores = U[:, :ncomp] * s[:ncomp]
    coef = (scores.T @ (Y - y_mean)) / (s[:ncomp, None] ** 2)
    state = PcaLmState(Vt[:ncomp].T, coef, y_mean)
    return TrainedModel("pca_lm", task, {"ncomp": ncomp}, state, p, n_classes, std)


def predict_pca_lm(model: TrainedModel, X, ncomp: int | None = None):
    st: PcaLmState = model.state
    a = model.params["ncomp"] if ncomp is None else ncomp
    Z = (model.transform(X) @ st.components[:, :a]) @ st.coef[:a] + st.y_mean
    return _latent_output(model, Z)
