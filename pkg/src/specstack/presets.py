"""Flat configurations for the synthetic demonstrations and the count checks.

Each function returns a mapping accepted by :func:`specstack.config.build_run_config`.
Grids are deliberately small so the runs fit on a single core.
"""

from __future__ import annotations


def synthetic_regression(seed: int = 1, n_splits: int = 20) -> dict:
    """The five regression candidates with every regression ensemble."""
    return {
        "seed": seed,
        "splits.n": n_splits,
        "splits.inner_folds": 5,
        "roster.candidates": ["pls", "pca_lm", "enet", "rf", "gbm"],
        "roster.ensembles": ["ens_nonneg", "ens_LASSO", "ens_LM", "ens_RF", "ens_MA"],
        "model.pls.ncomp": [1, 2, 3, 4, 6, 8, 10, 12, 15],
        "model.pca_lm.ncomp": [2, 5, 10, 15, 20, 30],
        "model.enet.alpha": [0.5],
        "model.enet.lambda": [0.3, 0.1, 0.03, 0.01, 0.003],
        "model.rf.ntrees": 150,
        "model.gbm.ntrees": [100, 300],
        "model.gbm.depth": [2],
        "model.gbm.shrinkage": [0.05],
        "meta.rf_ntrees": 200,
    }


def synthetic_classification(seed: int = 1, n_splits: int = 20) -> dict:
    """The five classification candidates with every classification ensemble."""
    return {
        "seed": seed,
        "splits.n": n_splits,
        "splits.inner_folds": 5,
        "roster.candidates": ["plsda", "lda", "lasso", "enet", "rf"],
        "roster.ensembles": ["ens_nonneg", "ens_maj_vote", "ens_MA"],
        "model.plsda.ncomp": [1, 2, 3, 4, 6, 8, 10, 15],
        "model.lasso.lambda": [0.5, 0.3, 0.2, 0.1, 0.05],
        "model.enet.lambda": [1.0, 0.6, 0.4, 0.2, 0.1],
        "model.rf.ntrees": 150,
    }


def _toy_models(kinds: list[tuple[str, str, dict]]) -> dict:
    flat = {}
    for name, kind, grid in kinds:
        flat[f"model.{name}.kind"] = kind
        for k, v in grid.items():
            flat[f"model.{name}.{k}"] = v
    flat["roster.candidates"] = [name for name, _, _ in kinds]
    return flat


def toy_regression_counts(seed: int = 0) -> dict:
    """14 candidates + 5 ensembles = 19 models at minimal settings."""
    kinds = [
        ("pls", "pls", {"ncomp": [2]}),
        ("pls_small", "pls", {"ncomp": [1]}),
        ("pca_lm", "pca_lm", {"ncomp": [2]}),
        ("pca_lm_small", "pca_lm", {"ncomp": [1]}),
        ("lasso", "enet", {"alpha": [1.0], "lambda": [0.05]}),
        ("lasso_strong", "enet", {"alpha": [1.0], "lambda": [0.2]}),
        ("enet", "enet", {"alpha": [0.5], "lambda": [0.05]}),
        ("enet_strong", "enet", {"alpha": [0.5], "lambda": [0.2]}),
        ("ridge", "enet", {"alpha": [0.0], "lambda": [0.1]}),
        ("ridge_strong", "enet", {"alpha": [0.0], "lambda": [1.0]}),
        ("rf", "rf", {"ntrees": 5}),
        ("rf_deep", "rf", {"ntrees": 5, "min_node": 2}),
        ("gbm", "gbm", {"ntrees": [10], "depth": [2]}),
        ("gbm_stump", "gbm", {"ntrees": [10], "depth": [1]}),
    ]
    flat = {"seed": seed, "splits.n": 50, "splits.inner_folds": 2, "meta.rf_ntrees": 5, "meta.lasso_folds": 2,
            "roster.ensembles": ["ens_nonneg", "ens_LASSO", "ens_LM", "ens_RF", "ens_MA"]}
    flat.update(_toy_models(kinds))
    return flat


def toy_classification_counts(seed: int = 0) -> dict:
    """6 candidates + 3 ensembles = 9 models at minimal settings."""
    kinds = [
        ("plsda", "pls", {"ncomp": [2]}),
        ("lda", "lda", {}),
        ("lasso", "enet", {"alpha": [1.0], "lambda": [0.1]}),
        ("enet", "enet", {"alpha": [0.5], "lambda": [0.1]}),
        ("ridge", "enet", {"alpha": [0.0], "lambda": [0.5]}),
        ("rf", "rf", {"ntrees": 5}),
    ]
    flat = {"seed": seed, "splits.n": 10, "splits.inner_folds": 2,
            "roster.ensembles": ["ens_nonneg", "ens_maj_vote", "ens_MA"]}
    flat.update(_toy_models(kinds))
    return flat
