"""Wavelength selection for classification: Fisher scores and a wrapper GA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import CLASSIFICATION, FIT_ERRORS, fit_model, predict_array
from .seeding import derive_rng
from .splits import make_kfold


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class FisherScores:
    scores: np.ndarray
    class_counts: np.ndarray


def fisher_scores(X, labels) -> FisherScores:
    """Between-class over within-class variance for every column.

    ``score_j = sum_k n_k (mu_kj - mu_j)^2 / sum_k n_k s2_kj`` with ``s2`` the
    within-class sample variance.  A column with zero within-class variance
    scores ``inf`` if its class means differ and ``0`` otherwise.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    classes, codes, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise SelectionError("fisher scores need at least two classes")
    if np.any(counts < 2):
        raise SelectionError(f"class {classes[np.argmin(counts)]!r} has fewer than 2 samples")
    grand = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for k, n_k in enumerate(counts):
        block = X[codes == k]
        between += n_k * (block.mean(axis=0) - grand) ** 2
        within += n_k * block.var(axis=0, ddof=1)
    # Exact-zero guard: rounding leaves ~1e-30 between-variance for equal means.
    scale = np.maximum(np.abs(X).max(axis=0), 1.0) ** 2
    between = np.where(between <= 1e-28 * scale, 0.0, between)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(within > 0, between / np.where(within > 0, within, 1.0),
                          np.where(between > 0, np.inf, 0.0))
    return FisherScores(scores, counts)


def select_top_k(scores: FisherScores | np.ndarray, k: int) -> np.ndarray:
    """Indices (0-based, ascending) of the ``k`` largest scores; ties go to lower index."""
    s = scores.scores if isinstance(scores, FisherScores) else np.asarray(scores, dtype=float)
    if not 1 <= k <= s.size:
        raise SelectionError(f"k={k} outside [1, {s.size}]")
    order = np.lexsort((np.arange(s.size), -s))
    return np.sort(order[:k])


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 30
    generations: int = 25
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    elitism: int = 1
    fitness_folds: int = 5
    seed: int = 0
    init_rate: float = 0.5

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "init_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SelectionError(f"{name}={v} outside [0, 1]")
        if self.population_size < 2:
            raise SelectionError("population_size must be >= 2")
        if not 0 <= self.elitism < self.population_size:
            raise SelectionError("elitism must satisfy 0 <= elitism < population_size")
        if self.generations < 0 or self.fitness_folds < 2:
            raise SelectionError("generations must be >= 0 and fitness_folds >= 2")


@dataclass(frozen=True)
class WrappedClassifier:
    """Classifier whose inner-CV accuracy is the GA fitness."""

    kind: str = "lda"
    params: dict = field(default_factory=dict)


@dataclass
class GaResult:
    selected: np.ndarray
    fitness: float
    best_per_generation: list[float]
    evaluations: int


class _Fitness:
    def __init__(self, X, codes, n_classes, folds, clf: WrappedClassifier):
        self.X, self.codes, self.K, self.folds, self.clf = X, codes, n_classes, folds, clf
        self.cache: dict[bytes, float] = {}
        n = X.shape[0]
        self.trains = [np.setdiff1d(np.arange(n), f) for f in folds]

    def __call__(self, chrom: np.ndarray) -> float:
        key = np.packbits(chrom).tobytes()
        if key in self.cache:
            return self.cache[key]
        if not chrom.any():
            val = -np.inf
        else:
            cols = np.flatnonzero(chrom)
            accs = []
            for tr, te in zip(self.trains, self.folds):
                try:
                    m = fit_model(self.clf.kind, self.X[np.ix_(tr, cols)], self.codes[tr], self.clf.params,
                                  CLASSIFICATION, self.K)
                    pred = np.argmax(predict_array(m, self.X[np.ix_(te, cols)]), axis=1)
                    accs.append(np.mean(pred == self.codes[te]))
                except FIT_ERRORS:
                    accs.append(0.0)
            val = float(np.mean(accs))
        self.cache[key] = val
        return val


def _rank_key(chrom: np.ndarray, fit: float):
    # best first: higher fitness, fewer wavelengths, then lexicographically smaller index set
    return (-fit, int(chrom.sum()), tuple(np.flatnonzero(chrom)))


def ga_select(X, labels, config: GaConfig = GaConfig(),
              fitness: WrappedClassifier = WrappedClassifier()) -> GaResult:
    """Binary-chromosome genetic algorithm over wavelength subsets.

    Fitness is the mean accuracy of ``fitness`` over a ``fitness_folds``-fold
    plan of the supplied rows (pass training rows only).  Operators: size-2
    tournament selection, uniform crossover, per-bit mutation and elitism.
    Individual ``i`` of generation ``g`` draws from stream ``(seed, g, i)``.
    """
    X = np.asarray(X, dtype=float)
    classes, codes = np.unique(np.asarray(labels), return_inverse=True)
    n, p = X.shape
    folds = make_kfold(np.arange(n), config.fitness_folds, codes, config.seed)
    fit = _Fitness(X, codes, classes.size, folds, fitness)

    pop = []
    for i in range(config.population_size):
        rng = derive_rng(config.seed, 0, i)
        pop.append(rng.random(p) < config.init_rate)
    scores = [fit(c) for c in pop]
    best_c, best_f = min(zip(pop, scores), key=lambda cs: _rank_key(*cs))
    history = [best_f]

    for g in range(1, config.generations + 1):
        ranked = sorted(range(len(pop)), key=lambda i: _rank_key(pop[i], scores[i]))
        new = [pop[i].copy() for i in ranked[: config.elitism]]
        for i in range(config.elitism, config.population_size):
            rng = derive_rng(config.seed, g, i)

            def tournament():
                a, b = rng.integers(0, len(pop), 2)
                return pop[a] if _rank_key(pop[a], scores[a]) <= _rank_key(pop[b], scores[b]) else pop[b]

            p1, p2 = tournament(), tournament()
            if rng.random() < config.crossover_rate:
                child = np.where(rng.random(p) < 0.5, p1, p2)
            else:
                child = p1.copy()
            child = child ^ (rng.random(p) < config.mutation_rate)
            new.append(child)
        pop = new
        scores = [fit(c) for c in pop]
        gen_c, gen_f = min(zip(pop, scores), key=lambda cs: _rank_key(*cs))
        if _rank_key(gen_c, gen_f) < _rank_key(best_c, best_f):
            best_c, best_f = gen_c, gen_f
        history.append(max(scores))
    return GaResult(np.flatnonzero(best_c), float(best_f), history, len(fit.cache))


def exhaustive_subset_fitness(X, labels, config: GaConfig = GaConfig(),
                              fitness: WrappedClassifier = WrappedClassifier()) -> dict[tuple, float]:
    """Fitness of every non-empty subset under the GA's own fold plan (small p only)."""
    X = np.asarray(X, dtype=float)
    classes, codes = np.unique(np.asarray(labels), return_inverse=True)
    n, p = X.shape
    if p > 16:
        raise SelectionError("exhaustive enumeration is limited to p <= 16")
    folds = make_kfold(np.arange(n), config.fitness_folds, codes, config.seed)
    fit = _Fitness(X, codes, classes.size, folds, fitness)
    out = {}
    for mask in range(1, 2 ** p):
        chrom = np.array([(mask >> j) & 1 for j in range(p)], dtype=bool)
        out[tuple(np.flatnonzero(chrom))] = fit(chrom)
    return out


def select_features(X, labels, train_rows, top_k: int | None = None, ga: GaConfig | None = None,
                    fitness: WrappedClassifier = WrappedClassifier()) -> np.ndarray:
    """Fisher top-k then optional GA, computed from ``train_rows`` alone.

    Returns 0-based column indices into ``X``; all columns when both stages are off.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    Xt, yt = X[train_rows], labels[train_rows]
    cols = np.arange(X.shape[1])
    if top_k is not None and top_k < cols.size:
        cols = select_top_k(fisher_scores(Xt, yt), top_k)
    if ga is not None:
        cols = cols[ga_select(Xt[:, cols], yt, ga, fitness).selected]
    return cols
