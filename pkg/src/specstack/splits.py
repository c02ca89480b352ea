"""Outer random train/test splits and inner k-fold plans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import derive_rng


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[np.ndarray, ...]
    test: tuple[np.ndarray, ...]
    train_fraction: float
    master_seed: int
    stratified: bool = False

    @property
    def n_splits(self) -> int:
        return len(self.train)

    def __iter__(self):
        return iter(zip(self.train, self.test))


def _test_count(n: int, train_fraction: float) -> int:
    return int(np.floor(n * (1.0 - train_fraction) + 0.5))


def make_random_splits(n_rows: int, n_splits: int, train_fraction: float = 0.75, labels=None,
                       master_seed: int = 0) -> SplitPlan:
    """``n_splits`` independent random partitions into train and test rows.

    With ``labels`` each class contributes ``round(n_c * (1 - train_fraction))``
    test rows, so per-class test counts are within one row of the exact
    proportion.  Split ``s`` draws from stream ``(master_seed, 1, s)``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction={train_fraction} must lie strictly between 0 and 1")
    if n_splits < 1:
        raise SplitError("n_splits must be >= 1")
    rows = np.arange(n_rows)
    groups = [rows]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != n_rows:
            raise SplitError("labels length differs from n_rows")
        groups = [rows[labels == c] for c in np.unique(labels)]
    for g in groups:
        k = _test_count(g.size, train_fraction)
        if k < 1 or k > g.size - 1:
            what = "a class" if labels is not None else "the data"
            raise SplitError(f"{what} with {g.size} rows is too small for train_fraction={train_fraction}")
    trains, tests = [], []
    for s in range(n_splits):
        rng = derive_rng(master_seed, 1, s)
        test = np.concatenate([rng.permutation(g)[: _test_count(g.size, train_fraction)] for g in groups])
        test = np.sort(test)
        trains.append(np.setdiff1d(rows, test))
        tests.append(test)
    return SplitPlan(tuple(trains), tuple(tests), train_fraction, master_seed, labels is not None)


def make_kfold(rows, k: int = 10, labels=None, seed: int = 0) -> list[np.ndarray]:
    """Partition ``rows`` into ``k`` folds whose sizes differ by at most one.

    Rows are shuffled (within class when ``labels`` is given, classes laid end
    to end) and dealt round-robin, so the first ``len(rows) % k`` folds carry
    one extra row.
    """
    rows = np.asarray(rows)
    if k < 2:
        raise SplitError("k must be >= 2")
    if k > rows.size:
        raise SplitError(f"k={k} exceeds the {rows.size} training rows")
    rng = derive_rng(seed, 2)
    if labels is None:
        order = rng.permutation(rows.size)
    else:
        labels = np.asarray(labels)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    dealt = rows[order]
    return [np.sort(dealt[i::k]) for i in range(k)]


def fold_positions(folds: list[np.ndarray], rows) -> list[np.ndarray]:
    """Translate folds of row ids into positions within ``rows``."""
    pos = {int(r): i for i, r in enumerate(np.asarray(rows))}
    return [np.array([pos[int(r)] for r in f], dtype=int) for f in folds]
