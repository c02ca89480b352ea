"""Out-of-fold prediction matrices, meta-learners and blending.

The OOF matrix is built from the same fold plan that tunes each candidate, so
every grid point's cross-validated predictions are computed once and the
chosen point's predictions become the candidate's OOF column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import nnls

from .models import (
    CLASSIFICATION,
    REGRESSION,
    ConvergenceWarning,
    ModelError,
    ModelSpec,
    Prediction,
    TrainedModel,
    cross_validate_grid,
    fit_enet,
    fit_rf,
    grid_predictions,
    lambda_max,
    predict_array,
    unscaled_coefficients,
)
from .models.base import normalize_proba, one_hot, softmax
from .seeding import derive_seed
from .splits import make_kfold

META_REGRESSION = ("nonneg", "lasso", "lm", "rf")
META_CLASSIFICATION = ("nonneg_logistic",)


class StackingError(ValueError):
    pass


@dataclass(frozen=True)
class OofPredictions:
    """Out-of-fold predictions of every candidate on one split's training rows.

    ``values`` is ``n x M`` for regression and ``n x (M*K)`` for
    classification, candidate ``m`` owning columns ``m*K .. m*K+K-1``.
    """

    split_id: int
    row_ids: np.ndarray
    fold_of_row: np.ndarray
    candidates: tuple[str, ...]
    values: np.ndarray
    n_classes: int = 0

    @property
    def task(self) -> str:
        return CLASSIFICATION if self.n_classes else REGRESSION

    def block(self, m: int) -> np.ndarray:
        if self.n_classes:
            K = self.n_classes
            return self.values[:, m * K:(m + 1) * K]
        return self.values[:, m]

    def blocks(self) -> list[np.ndarray]:
        return [self.block(m) for m in range(len(self.candidates))]

    def column_names(self) -> list[str]:
        if not self.n_classes:
            return list(self.candidates)
        return [f"{c}__p{k}" for c in self.candidates for k in range(self.n_classes)]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.column_names())
        df.insert(0, "fold", self.fold_of_row)
        df.insert(0, "row_id", self.row_ids)
        return df

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, split_id: int = 0, n_classes: int = 0) -> "OofPredictions":
        df = pd.read_csv(path, float_precision="round_trip")
        cols = list(df.columns[2:])
        if n_classes:
            cands = tuple(dict.fromkeys(c.rsplit("__p", 1)[0] for c in cols))
        else:
            cands = tuple(cols)
        return cls(split_id, df["row_id"].to_numpy(), df["fold"].to_numpy(), cands,
                   df[cols].to_numpy(dtype=float), n_classes)


@dataclass
class CandidateFits:
    """Result of ``generate_oof``: OOF matrix, chosen grid points and the full-data fits."""

    oof: OofPredictions
    chosen: dict[str, dict]
    cv_scores: dict[str, float]
    failures: dict[str, str] = field(default_factory=dict)


def generate_oof(candidates: Sequence[ModelSpec], X, y, folds: list[np.ndarray], n_classes: int = 0,
                 seed: int = 0, split_id: int = 0, row_ids=None, on_error: str = "raise") -> CandidateFits:
    """Tune each candidate over ``folds`` and keep the chosen point's OOF column.

    ``folds`` hold positions into ``X``.  Candidate ``m`` draws its fold seeds
    from ``derive_seed(seed, split_id, m, fold)``.  With ``on_error="skip"`` a
    failing candidate is left out of the matrix and reported in ``failures``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = X.shape[0]
    names = tuple(c.name or c.kind for c in candidates)
    if len(set(names)) != len(names):
        raise StackingError(f"candidate names are not unique: {names}")
    fold_of_row = np.full(n, -1)
    for f, rows in enumerate(folds):
        fold_of_row[rows] = f
    if np.any(fold_of_row < 0) or sum(len(f) for f in folds) != n:
        raise StackingError("folds must partition the training rows")
    cols, chosen, scores, failures, kept = [], {}, {}, {}, []
    for m, spec in enumerate(candidates):
        try:
            res = cross_validate_grid(spec, X, y, folds, n_classes, derive_seed(seed, split_id, m))
        except ModelError as err:
            if on_error == "skip":
                failures[names[m]] = str(err)
                continue
            raise StackingError(f"candidate {names[m]!r} failed: {err}") from err
        kept.append(names[m])
        pred = res.oof[res.chosen]
        cols.append(pred if n_classes else pred[:, None])
        chosen[names[m]] = dict(res.points[res.chosen])
        scores[names[m]] = float(res.scores[res.chosen])
    values = np.hstack(cols) if cols else np.empty((n, 0))
    ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    oof = OofPredictions(split_id, ids, fold_of_row, tuple(kept), values, n_classes)
    return CandidateFits(oof, chosen, scores, failures)


def refit_predict(candidates: Sequence[ModelSpec], chosen: Mapping[str, dict], X, y, Xnew, n_classes: int = 0,
                  seed: int = 0, split_id: int = 0) -> list[np.ndarray]:
    """Refit every candidate on all training rows at its chosen point and predict ``Xnew``."""
    out = []
    for m, spec in enumerate(candidates):
        name = spec.name or spec.kind
        pred = grid_predictions(spec.kind, X, y, Xnew, [chosen[name]], spec.task, n_classes,
                                derive_seed(seed, split_id, m, 1_000_000))[0]
        if pred is None:
            raise StackingError(f"candidate {name!r} failed on the full training set")
        out.append(pred)
    return out


@dataclass(frozen=True)
class MetaCoefficients:
    kind: str
    candidates: tuple[str, ...]
    weights: np.ndarray | None = None
    intercept: float | np.ndarray | None = None
    model: TrainedModel | None = None
    n_classes: int = 0
    converged: bool = True
    info: dict = field(default_factory=dict)


def _design(oof: OofPredictions, y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    if y.shape[0] != oof.values.shape[0]:
        raise StackingError("y is not aligned with the OOF rows")
    if oof.n_classes:
        raise StackingError("regression meta-learner given classification OOF predictions")
    return oof.values, y


def nonneg_least_squares(Z, y, max_iter: int | None = None, fit_intercept: bool = True) -> tuple[np.ndarray, float]:
    """Slopes ``w >= 0`` and a free intercept minimizing ``||y - b - Z w||^2``.

    Centring removes the intercept; the slopes come from the Lawson-Hanson
    active-set solver capped at ``10 * M`` iterations.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    zm, ym = Z.mean(axis=0), y.mean()
    if not fit_intercept:
        zm, ym = np.zeros_like(zm), 0.0
    cap = 10 * Z.shape[1] if max_iter is None else max_iter
    try:
        w, _ = nnls(Z - zm, y - ym, maxiter=max(cap, 1))
    except RuntimeError as err:
        raise StackingError(f"NNLS did not converge within {cap} iterations") from err
    return w, float(ym - zm @ w)


def _lasso_lambdas(Z, y, n: int = 40, ratio: float = 1e-4) -> tuple:
    Zs = (Z - Z.mean(axis=0)) / Z.std(axis=0, ddof=1)
    top = max(lambda_max(Zs, y, 1.0), 1e-12)
    return tuple(np.geomspace(top, top * ratio, n))


def fit_meta_regression(oof: OofPredictions, y, kind: str = "nonneg", seed: int = 0,
                        rf_ntrees: int = 500, lasso_folds: int = 5, fit_intercept: bool = True) -> MetaCoefficients:
    """Fit a regression meta-learner on the OOF columns.

    ``nonneg``: intercept plus non-negative slopes.  ``lm``: least squares
    (minimum-norm if collinear).  ``lasso``: lambda chosen by ``lasso_folds``-fold
    CV on the OOF matrix.  ``rf``: random forest on the OOF columns.
    ``fit_intercept=False`` drops the intercept for ``nonneg`` and ``lm``.
    """
    Z, y = _design(oof, y)
    M = Z.shape[1]
    if kind == "nonneg":
        w, b = nonneg_least_squares(Z, y, fit_intercept=fit_intercept)
        return MetaCoefficients(kind, oof.candidates, w, b)
    if kind == "lm":
        A = np.column_stack([np.ones(len(y)) * fit_intercept, Z])
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
        return MetaCoefficients(kind, oof.candidates, coef[1:], float(coef[0]))
    if kind == "lasso":
        # constant columns carry no signal and would break standardization
        keep = Z.std(axis=0, ddof=1) > 1e-12
        w = np.zeros(M)
        if not keep.any():
            return MetaCoefficients(kind, oof.candidates, w, float(y.mean()), info={"lambda": np.inf})
        Zk = Z[:, keep]
        lams = _lasso_lambdas(Zk, y)
        spec = ModelSpec("enet", REGRESSION, {"alpha": (1.0,), "lambda": lams}, seed, "meta_lasso")
        folds = make_kfold(np.arange(len(y)), lasso_folds, seed=derive_seed(seed, 7))
        res = cross_validate_grid(spec, Zk, y, folds, 0, seed)
        lam = res.points[res.chosen]["lambda"]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            model = fit_enet(Zk, y, 1.0, lam)
        b, slopes = unscaled_coefficients(model)
        w[keep] = np.asarray(slopes).ravel()
        return MetaCoefficients(kind, oof.candidates, w, float(np.ravel(b)[0]), model,
                                converged=model.converged and not caught, info={"lambda": lam})
    if kind == "rf":
        model = fit_rf(Z, y, ntrees=rf_ntrees, mtry=max(M // 3, 1), seed=seed)
        return MetaCoefficients(kind, oof.candidates, model=model)
    raise StackingError(f"unknown regression meta-learner {kind!r}; expected one of {META_REGRESSION}")


def _logistic_parts(w, b, blocks, Y):
    logits = b + sum(wm * P for wm, P in zip(w, blocks))
    logits = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits).sum(axis=1))
    loss = float(np.mean(lse - (logits * Y).sum(axis=1)))
    G = (np.exp(logits - lse[:, None]) - Y) / Y.shape[0]
    return loss, np.array([np.sum(G * P) for P in blocks]), G.sum(axis=0)


def logistic_meta_objective(w, b, blocks, labels, n_classes) -> float:
    """Mean multinomial log-loss of ``softmax(b + sum_m w_m P_m)``."""
    return _logistic_parts(np.asarray(w, float), np.asarray(b, float), blocks, one_hot(labels, n_classes))[0]


def fit_nonneg_logistic(blocks: Sequence[np.ndarray], labels, n_classes: int, tol: float = 1e-8,
                        max_iter: int = 5000, trace: list | None = None):
    """Projected gradient with Armijo backtracking for non-negative stacking weights.

    Returns ``(w, b, converged, grad_norm)``; ``b`` is a free per-class
    intercept.  The projected-gradient norm is the stopping criterion.
    """
    Y = one_hot(np.asarray(labels), n_classes)
    M = len(blocks)
    w = np.full(M, 1.0 / max(M, 1))
    prior = np.clip(Y.mean(axis=0), 1e-12, None)
    b = np.log(prior) - np.log(prior).mean()
    loss, gw, gb = _logistic_parts(w, b, blocks, Y)
    step = 1.0
    gnorm = np.inf
    for _ in range(max_iter):
        pg_w = np.where((w > 0) | (gw < 0), gw, 0.0)
        gnorm = float(np.sqrt(pg_w @ pg_w + gb @ gb))
        if trace is not None:
            trace.append(loss)
        if gnorm <= tol:
            return w, b, True, gnorm
        while True:
            w_new = np.maximum(w - step * gw, 0.0)
            b_new = b - step * gb
            new_loss, ngw, ngb = _logistic_parts(w_new, b_new, blocks, Y)
            decrease = gw @ (w - w_new) + gb @ (b - b_new)
            dist2 = (w - w_new) @ (w - w_new) + (b - b_new) @ (b - b_new)
            if new_loss <= loss - 0.5 * decrease + 1e-15 * abs(loss) or dist2 < 1e-30:
                break
            step *= 0.5
        if dist2 < 1e-30:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
        step = min(step * 2.0, 1e6)
    pg_w = np.where((w > 0) | (gw < 0), gw, 0.0)
    gnorm = float(np.sqrt(pg_w @ pg_w + gb @ gb))
    if trace is not None:
        trace.append(loss)
    return w, b, gnorm <= max(tol, 1e-6), gnorm


def fit_meta_classification(oof: OofPredictions, labels, kind: str = "nonneg_logistic", tol: float = 1e-8,
                            max_iter: int = 5000) -> MetaCoefficients:
    """Non-negative multinomial logistic stacking on candidate probabilities.

    ``logit_k = b_k + sum_m w_m p_mk`` with one weight per candidate shared
    across classes.
    """
    if kind not in META_CLASSIFICATION:
        raise StackingError(f"unknown classification meta-learner {kind!r}")
    if not oof.n_classes:
        raise StackingError("classification meta-learner needs probability blocks")
    labels = np.asarray(labels)
    if labels.shape[0] != oof.values.shape[0]:
        raise StackingError("labels are not aligned with the OOF rows")
    w, b, ok, gnorm = fit_nonneg_logistic(oof.blocks(), labels, oof.n_classes, tol, max_iter)
    if not ok:
        warnings.warn(f"nonneg logistic stacking stopped with projected gradient norm {gnorm:.3g}",
                      ConvergenceWarning, stacklevel=2)
    return MetaCoefficients(kind, oof.candidates, w, b, n_classes=oof.n_classes, converged=ok,
                            info={"grad_norm": gnorm})


def _ordered(meta_candidates, preds):
    if isinstance(preds, Mapping):
        if set(preds) != set(meta_candidates):
            raise StackingError(f"candidate set mismatch: fitted {sorted(meta_candidates)}, got {sorted(preds)}")
        return [np.asarray(preds[c], dtype=float) for c in meta_candidates]
    preds = [np.asarray(p, dtype=float) for p in preds]
    if len(preds) != len(meta_candidates):
        raise StackingError(f"expected {len(meta_candidates)} candidate predictions, got {len(preds)}")
    return preds


def blend(meta: MetaCoefficients, preds) -> Prediction:
    """Combine per-candidate test predictions with a fitted meta-learner.

    ``preds`` is a list in fit order or a mapping from candidate name.
    """
    P = _ordered(meta.candidates, preds)
    if meta.kind == "rf":
        return Prediction(values=predict_array(meta.model, np.column_stack(P)))
    if meta.kind == "majority_vote":
        return majority_vote(P)
    if meta.n_classes:
        logits = meta.intercept + sum(w * p for w, p in zip(meta.weights, P))
        return Prediction(proba=normalize_proba(softmax(logits)))
    out = meta.intercept + sum(w * p for w, p in zip(meta.weights, P))
    return Prediction(values=np.asarray(out, dtype=float))


def model_average(preds: Sequence[np.ndarray], candidates: Sequence[str] | None = None) -> Prediction:
    """Unweighted mean of the candidates' predictions (probabilities are renormalized)."""
    P = [np.asarray(p, dtype=float) for p in preds]
    if not P:
        raise StackingError("model average needs at least one candidate")
    mean = np.mean(P, axis=0)
    if mean.ndim == 2:
        return Prediction(proba=normalize_proba(mean))
    return Prediction(values=mean)


def model_average_meta(candidates: Sequence[str], n_classes: int = 0) -> MetaCoefficients:
    M = len(candidates)
    if M == 0:
        raise StackingError("model average needs at least one candidate")
    b = np.zeros(n_classes) if n_classes else 0.0
    return MetaCoefficients("model_average", tuple(candidates), np.full(M, 1.0 / M), b, n_classes=n_classes)


def majority_vote(probas: Sequence[np.ndarray]) -> Prediction:
    """Modal argmax label across candidates.

    Ties go to the tied class with the highest mean probability, then to the
    lowest class index.  The returned probabilities are one-hot on the winner.
    """
    P = [np.asarray(p, dtype=float) for p in probas]
    if not P:
        raise StackingError("majority vote needs at least one candidate")
    K = P[0].shape[1]
    if any(p.ndim != 2 or p.shape != P[0].shape for p in P):
        raise StackingError("candidates disagree on the class set")
    votes = sum(one_hot(np.argmax(p, axis=1), K) for p in P)
    mean = np.mean(P, axis=0)
    tied = votes == votes.max(axis=1, keepdims=True)
    score = np.where(tied, mean, -np.inf)
    best = score == score.max(axis=1, keepdims=True)
    winner = np.argmax(best, axis=1)
    return Prediction(proba=one_hot(winner, K).astype(float))


def regression_meta_loss(meta: MetaCoefficients, oof: OofPredictions, y) -> float:
    """In-sample mean squared error of the meta-learner on its training OOF rows."""
    pred = blend(meta, oof.blocks()).values
    return float(np.mean((np.asarray(y, float) - pred) ** 2))
