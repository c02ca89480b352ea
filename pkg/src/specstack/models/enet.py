"""Elastic net by cyclic coordinate descent (LASSO at alpha=1, ridge at alpha=0).

Objective for regression, on standardized features::

    1/(2n) * sum_i w_i (y_i - b0 - x_i'b)^2 + lam * ((1-alpha)/2 |b|_2^2 + alpha |b|_1)

with unit weights.  Multinomial classification minimizes the mean negative
log-likelihood plus the same penalty by accelerated proximal gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..data_pipeline import fit_standardizer
from .base import (
    CLASSIFICATION,
    REGRESSION,
    ModelError,
    TrainedModel,
    check_xy,
    one_hot,
    softmax,
    warn_convergence,
)

TOL = 1e-7
MAX_SWEEPS = 10_000


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _cd_weighted(X, r, w, beta, b0, lam, alpha, tol, max_sweeps, fit_intercept, trace):
    """Cyclic coordinate descent on the weighted elastic-net objective.

    ``r`` holds the current residual ``z - b0 - X beta`` and is updated in
    place along with ``beta``.  Returns (b0, sweeps, converged) and writes
    per-sweep objective values into ``trace`` when it has room.
    """
    n, p = X.shape
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    xw2 = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        xw2[j] = s / n
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    for sweep in range(max_sweeps):
        maxd = 0.0
        if fit_intercept:
            s = 0.0
            for i in range(n):
                s += w[i] * r[i]
            d = s / wsum
            if d != 0.0:
                b0 += d
                for i in range(n):
                    r[i] -= d
                if abs(d) > maxd:
                    maxd = abs(d)
        for j in range(p):
            if xw2[j] == 0.0:
                continue
            bj = beta[j]
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, j] * r[i]
            z = g / n + xw2[j] * bj
            new = _soft(z, l1) / (xw2[j] + l2)
            d = new - bj
            if d != 0.0:
                beta[j] = new
                for i in range(n):
                    r[i] -= d * X[i, j]
                if abs(d) > maxd:
                    maxd = abs(d)
        if sweep < trace.shape[0]:
            loss = 0.0
            for i in range(n):
                loss += w[i] * r[i] * r[i]
            pen = 0.0
            for j in range(p):
                pen += 0.5 * l2 * beta[j] * beta[j] + l1 * abs(beta[j])
            trace[sweep] = loss / (2.0 * n) + pen
        if maxd < tol:
            return b0, sweep + 1, True
    return b0, max_sweeps, False


def enet_objective(X, y, b0, beta, lam, alpha, w=None):
    """Weighted elastic-net objective (standardized-feature scale)."""
    n = X.shape[0]
    w = np.ones(n) if w is None else w
    r = y - b0 - X @ beta
    return float(w @ r ** 2 / (2 * n) + lam * ((1 - alpha) / 2 * beta @ beta + alpha * np.abs(beta).sum()))


def lambda_max(X, y, alpha):
    """Smallest lambda zeroing every slope (for alpha > 0), standardized X."""
    n = X.shape[0]
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / (n * max(alpha, 1e-3)))


def enet_path(Xs, y, alpha, lambdas, tol=TOL, max_sweeps=MAX_SWEEPS, trace_len=0):
    """Regression coefficients along ``lambdas`` with warm starts.

    Lambdas are visited from largest to smallest; results come back in the
    caller's order as (intercepts, coefficient matrix, converged flags, traces).
    """
    n, p = Xs.shape
    lambdas = np.asarray(lambdas, dtype=float)
    order = np.argsort(-lambdas, kind="stable")
    beta = np.zeros(p)
    b0 = float(y.mean())
    r = y - b0
    w = np.ones(n)
    B = np.zeros((len(lambdas), p))
    b0s = np.zeros(len(lambdas))
    conv = np.zeros(len(lambdas), dtype=bool)
    traces = [None] * len(lambdas)
    Xc = np.ascontiguousarray(Xs)
    for k in order:
        tr = np.full(trace_len, np.nan)
        b0, _, ok = _cd_weighted(Xc, r, w, beta, b0, float(lambdas[k]), float(alpha), tol, max_sweeps, True, tr)
        B[k], b0s[k], conv[k], traces[k] = beta, b0, ok, tr
    return b0s, B, conv, traces


@dataclass(frozen=True)
class EnetState:
    intercept: np.ndarray  # K (1 for regression)
    coef: np.ndarray  # p x K, standardized-feature scale


def _check_enet(alpha, lam):
    if not 0.0 <= alpha <= 1.0:
        raise ModelError(f"enet: alpha={alpha} outside [0, 1]")
    if lam < 0:
        raise ModelError(f"enet: lambda={lam} negative")


def fit_enet(X, y, alpha: float, lam: float, task: str = REGRESSION, n_classes: int = 0,
             tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> TrainedModel:
    """Elastic net on internally standardized features."""
    _check_enet(alpha, lam)
    X, y = check_xy(X, y, task, n_classes)
    std = fit_standardizer(X)
    Xs = (X - std.means) / std.sds
    if task == REGRESSION:
        b0s, B, conv, _ = enet_path(Xs, y, alpha, [lam], tol, max_sweeps)
        state = EnetState(b0s[:1], B[0][:, None])
        ok = bool(conv[0])
    else:
        states, oks = multinomial_path(Xs, y, n_classes, alpha, [lam])
        state, ok = states[0], oks[0]
    if not ok:
        warn_convergence(f"enet: no convergence (alpha={alpha}, lambda={lam})")
    return TrainedModel("enet", task, {"alpha": alpha, "lambda": lam}, state, X.shape[1], n_classes, std, ok)


def multinomial_path(Xs, y, n_classes, alpha, lambdas, tol=1e-6, max_iter=20_000):
    """Penalized multinomial logistic regression along a lambda path.

    Accelerated proximal gradient (FISTA) with function-value restarts on the
    mean negative log-likelihood plus the elastic-net penalty; intercepts are
    unpenalized.  Stops when the gradient mapping's largest entry is below
    ``tol``.  Lambdas are visited largest first with warm starts.
    """
    n, p = Xs.shape
    Y = one_hot(y, n_classes)
    A = np.column_stack([np.ones(n), Xs])
    # softmax log-likelihood Hessian is bounded by 1/2 A'A/n
    L = 0.5 * float(np.linalg.eigvalsh(A.T @ A / n).max())
    prior = np.clip(Y.mean(axis=0), 1e-6, None)
    W = np.zeros((p + 1, n_classes))
    W[0] = np.log(prior) - np.log(prior).mean()
    lambdas = np.asarray(lambdas, dtype=float)
    out: list = [None] * len(lambdas)
    oks = [False] * len(lambdas)

    def loss(M):
        eta = A @ M
        eta -= eta.max(axis=1, keepdims=True)
        return float(np.mean(np.log(np.exp(eta).sum(axis=1)) - (eta * Y).sum(axis=1)))

    for k in np.argsort(-lambdas, kind="stable"):
        lam = float(lambdas[k])
        l1, l2 = lam * alpha / L, lam * (1.0 - alpha) / L

        def objective(M):
            B = M[1:]
            return loss(M) + lam * (alpha * np.abs(B).sum() + 0.5 * (1.0 - alpha) * (B * B).sum())

        Z, t, prev = W.copy(), 1.0, objective(W)
        for _ in range(max_iter):
            V = Z - A.T @ (softmax(A @ Z) - Y) / (n * L)
            Wn = V.copy()
            Wn[1:] = np.sign(V[1:]) * np.maximum(np.abs(V[1:]) - l1, 0.0) / (1.0 + l2)
            if L * np.max(np.abs(Wn - Z)) <= tol:
                W = Wn
                oks[k] = True
                break
            cur = objective(Wn)
            if cur > prev:
                Z, t = W.copy(), 1.0
                continue
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            Z = Wn + (t - 1.0) / tn * (Wn - W)
            W, t, prev = Wn, tn, cur
        b0 = W[0] - W[0].mean()
        out[k] = EnetState(b0.copy(), W[1:].copy())
    return out, oks


def enet_raw(model: TrainedModel, X) -> np.ndarray:
    st: EnetState = model.state
    return model.transform(X) @ st.coef + st.intercept


def predict_enet(model: TrainedModel, X):
    Z = enet_raw(model, X)
    return softmax(Z) if model.task == CLASSIFICATION else Z[:, 0]


def unscaled_coefficients(model: TrainedModel) -> tuple[np.ndarray, np.ndarray]:
    """Intercept(s) and slopes on the original feature scale."""
    st: EnetState = model.state
    std = model.standardizer
    slopes = st.coef / std.sds[:, None]
    return st.intercept - std.means @ slopes, slopes
