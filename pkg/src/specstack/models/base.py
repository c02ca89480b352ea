"""Shared types for candidate models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..data_pipeline import DataError, Standardizer, apply_standardizer

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASKS = (REGRESSION, CLASSIFICATION)


class ModelError(ValueError):
    """Invalid hyperparameters or data for a candidate model."""


class ConvergenceWarning(UserWarning):
    pass


FIT_ERRORS = (ModelError, DataError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class Prediction:
    """Regression values, or class probabilities with argmax labels."""

    values: np.ndarray | None = None
    proba: np.ndarray | None = None

    @property
    def labels(self) -> np.ndarray:
        if self.proba is None:
            raise AttributeError("regression predictions carry no labels")
        return np.argmax(self.proba, axis=1)

    @property
    def task(self) -> str:
        return CLASSIFICATION if self.proba is not None else REGRESSION

    def array(self) -> np.ndarray:
        return self.proba if self.proba is not None else self.values


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    task: str
    params: Mapping[str, Any]
    state: Any
    n_features: int
    n_classes: int = 0
    standardizer: Standardizer | None = None
    converged: bool = True

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ModelError(f"{self.kind}: expected {self.n_features} features, got shape {X.shape}")
        return apply_standardizer(self.standardizer, X) if self.standardizer is not None else X


@dataclass(frozen=True)
class ModelSpec:
    """A named candidate: model kind, task, tuning grid and base seed."""

    kind: str
    task: str
    grid: Mapping[str, tuple] = field(default_factory=dict)
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        from .registry import KINDS

        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.task not in KINDS[self.kind].tasks:
            raise ModelError(f"model kind {self.kind!r} does not support {self.task}")
        object.__setattr__(self, "grid", {k: tuple(v) for k, v in self.grid.items()})
        KINDS[self.kind].validate_grid(self.grid)
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def points(self) -> list[dict]:
        """Cartesian product of the grid, in declaration order."""
        from itertools import product

        from .registry import KINDS

        grid = {**KINDS[self.kind].default_grid(self.task), **self.grid}
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in product(*(grid[k] for k in keys))]


def check_xy(X, y, task: str, n_classes: int = 0):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ModelError("X must be a 2-D matrix")
    if task == CLASSIFICATION:
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            raise ModelError("classification targets must be integer class codes")
        if n_classes < 2:
            raise ModelError("classification needs n_classes >= 2")
        if y.min() < 0 or y.max() >= n_classes:
            raise ModelError("class codes outside [0, n_classes)")
    else:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ModelError("non-finite regression target")
    if y.shape[0] != X.shape[0]:
        raise ModelError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite feature value")
    return X, y


def normalize_proba(scores: np.ndarray) -> np.ndarray:
    """Clip class scores to [0, 1] and renormalize rows (uniform if all zero)."""
    P = np.clip(scores, 0.0, 1.0)
    s = P.sum(axis=1, keepdims=True)
    k = P.shape[1]
    out = np.where(s > 0, P / np.where(s > 0, s, 1.0), 1.0 / k)
    return out


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    Y = np.zeros((y.size, n_classes))
    Y[np.arange(y.size), y] = 1.0
    return Y


def warn_convergence(msg: str) -> None:
    warnings.warn(msg, ConvergenceWarning, stacklevel=3)
