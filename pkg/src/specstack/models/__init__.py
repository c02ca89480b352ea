"""Candidate model library behind a uniform fit/predict/tune interface."""

from .base import (
    CLASSIFICATION,
    FIT_ERRORS,
    REGRESSION,
    ConvergenceWarning,
    ModelError,
    ModelSpec,
    Prediction,
    TrainedModel,
)
from .enet import enet_objective, enet_path, fit_enet, lambda_max, unscaled_coefficients
from .latent import fit_pca_lm, fit_pls, nipals_pls
from .lda import fit_lda, lda_project
from .registry import KINDS, fit_model, grid_predictions, predict_array, resolve_params
from .trees import fit_gbm, fit_rf, grow_tree, rf_tree_outputs
from .tuning import GridResult, cross_validate_grid, tune


def predict(model: TrainedModel, X) -> Prediction:
    out = predict_array(model, X)
    if model.task == CLASSIFICATION:
        return Prediction(proba=out)
    return Prediction(values=out)


__all__ = [
    "CLASSIFICATION", "REGRESSION", "FIT_ERRORS", "KINDS", "ConvergenceWarning", "GridResult", "ModelError",
    "ModelSpec", "Prediction", "TrainedModel", "cross_validate_grid", "enet_objective", "enet_path",
    "fit_enet", "fit_gbm", "fit_lda", "fit_model", "fit_pca_lm", "fit_pls", "fit_rf", "grid_predictions",
    "grow_tree", "lambda_max", "lda_project", "nipals_pls", "predict", "predict_array", "resolve_params",
    "rf_tree_outputs", "tune", "unscaled_coefficients",
]
