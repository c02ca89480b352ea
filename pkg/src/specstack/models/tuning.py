"""Grid tuning by inner cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeding import derive_seed
from .base import CLASSIFICATION, ModelError, ModelSpec
from .registry import grid_predictions


@dataclass(frozen=True)
class GridResult:
    """Inner-CV outcome for every grid point.

    ``oof[i]`` holds point ``i``'s out-of-fold predictions for all rows (or
    ``None`` if it failed on any fold); ``scores[i]`` is its mean per-fold
    RMSE (regression) or accuracy (classification).
    """

    points: list[dict]
    scores: np.ndarray
    oof: list
    chosen: int


def fold_score(pred, obs, task: str) -> float:
    if task == CLASSIFICATION:
        return float(np.mean(np.argmax(pred, axis=1) == obs))
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def complexity_key(point: dict) -> tuple:
    """Simpler first: fewer components, then larger lambda, then fewer trees."""
    return (
        point.get("ncomp", 0) or 0,
        -(point.get("lambda", 0.0) or 0.0),
        point.get("ntrees", 0) or 0,
    )


def choose_point(points: list[dict], scores: np.ndarray, task: str) -> int:
    valid = np.flatnonzero(np.isfinite(scores))
    if valid.size == 0:
        raise ModelError("every grid point failed to fit")
    best = scores[valid].max() if task == CLASSIFICATION else scores[valid].min()
    tied = [i for i in valid if abs(scores[i] - best) <= 1e-12 * max(1.0, abs(best))]
    return min(tied, key=lambda i: (complexity_key(points[i]), i))


def cross_validate_grid(spec: ModelSpec, X, y, folds: list[np.ndarray], n_classes: int = 0,
                        seed: int | None = None) -> GridResult:
    """Fit every grid point on each fold complement and predict the held-out fold.

    Fold ``f`` fits use seed ``derive_seed(seed, f)`` so results do not depend
    on evaluation order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    seed = spec.seed if seed is None else seed
    points = spec.points()
    n = X.shape[0]
    all_rows = np.concatenate(folds) if folds else np.empty(0, dtype=int)
    if sorted(all_rows.tolist()) != list(range(n)):
        raise ModelError("folds must partition the training rows")
    shape = (n, n_classes) if spec.task == CLASSIFICATION else (n,)
    oof = [np.zeros(shape) for _ in points]
    ok = np.ones(len(points), dtype=bool)
    per_fold = np.full((len(folds), len(points)), np.nan)
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test)
        preds = grid_predictions(spec.kind, X[train], y[train], X[test], points, spec.task, n_classes,
                                 derive_seed(seed, f))
        for i, pr in enumerate(preds):
            if pr is None or not np.all(np.isfinite(pr)):
                ok[i] = False
                continue
            oof[i][test] = pr
            per_fold[f, i] = fold_score(pr, y[test], spec.task)
    scores = np.where(ok, per_fold.mean(axis=0), np.nan)
    chosen = choose_point(points, scores, spec.task)
    return GridResult(points, scores, [o if k else None for o, k in zip(oof, ok)], chosen)


def tune(spec: ModelSpec, X, y, folds: list[np.ndarray], n_classes: int = 0, seed: int | None = None) -> dict:
    """Grid point with the best mean inner-CV score (ties go to the simpler point)."""
    res = cross_validate_grid(spec, X, y, folds, n_classes, seed)
    return dict(res.points[res.chosen])
