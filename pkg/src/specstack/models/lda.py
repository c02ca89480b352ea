"""Linear discriminant analysis with a ridge guard on the pooled covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .base import CLASSIFICATION, ModelError, TrainedModel, check_xy, softmax

RIDGE_FACTOR = 1e-8


@dataclass(frozen=True)
class LdaState:
    means: np.ndarray  # K x p
    priors: np.ndarray
    cov: np.ndarray  # guarded pooled within-class covariance
    coef: np.ndarray  # p x K, S^-1 mu_k
    intercept: np.ndarray  # K
    directions: np.ndarray  # p x d discriminant directions, d <= K-1
    eigenvalues: np.ndarray


def pooled_covariance(X, y, n_classes):
    n, p = X.shape
    means = np.vstack([X[y == k].mean(axis=0) for k in range(n_classes)])
    R = X - means[y]
    return means, R.T @ R / (n - n_classes)


def between_scatter(X, y, means):
    counts = np.bincount(y, minlength=means.shape[0])
    D = means - X.mean(axis=0)
    return (D * counts[:, None]).T @ D / (means.shape[0] - 1)


def discriminant_directions(Sb, Sw, n_dir):
    """Solve ``Sb v = lam Sw v`` by Cholesky whitening; ``v' Sw v = 1``."""
    L = np.linalg.cholesky(Sw)
    Li = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    M = Li @ Sb @ Li.T
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    order = np.argsort(vals)[::-1][:n_dir]
    V = Li.T @ vecs[:, order]
    # Deterministic sign: largest-magnitude loading positive.
    idx = np.argmax(np.abs(V), axis=0)
    V *= np.sign(V[idx, np.arange(V.shape[1])])
    return vals[order], V


def fit_lda(X, y, n_classes: int, ridge: float = RIDGE_FACTOR) -> TrainedModel:
    X, y = check_xy(X, y, CLASSIFICATION, n_classes)
    n, p = X.shape
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        raise ModelError(f"lda: class {int(np.flatnonzero(counts == 0)[0])} absent from training data")
    if n <= n_classes:
        raise ModelError("lda: need more samples than classes")
    means, S = pooled_covariance(X, y, n_classes)
    S = S + ridge * np.trace(S) / p * np.eye(p)
    try:
        cf = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise ModelError("lda: pooled covariance singular despite ridge guard") from exc
    coef = linalg.cho_solve(cf, means.T)
    priors = counts / n
    intercept = -0.5 * np.einsum("kp,pk->k", means, coef) + np.log(priors)
    n_dir = min(n_classes - 1, p)
    evals, dirs = discriminant_directions(between_scatter(X, y, means), S, n_dir)
    state = LdaState(means, priors, S, coef, intercept, dirs, evals)
    return TrainedModel("lda", CLASSIFICATION, {}, state, p, n_classes)


def lda_scores(model: TrainedModel, X) -> np.ndarray:
    st: LdaState = model.state
    return model.transform(X) @ st.coef + st.intercept


def predict_lda(model: TrainedModel, X) -> np.ndarray:
    return softmax(lda_scores(model, X))


def lda_project(model: TrainedModel, X) -> np.ndarray:
    """Coordinates on the discriminant directions (at most K-1 columns)."""
    st: LdaState = model.state
    return model.transform(X) @ st.directions
