"""Repeated random-split benchmark that scores every candidate and ensemble.

One work unit is a (split, trait) pair for regression or a split for
classification.  Every random draw inside a unit derives from the master seed
and the unit's indices, so the performance table does not depend on the
number of workers or their scheduling.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .config import META_KIND, RunConfig
from .data_pipeline import SpectraDataset, load_dataset
from .feature_selection import select_features
from .models import (
    CLASSIFICATION,
    FIT_ERRORS,
    REGRESSION,
    ConvergenceWarning,
    TrainedModel,
    fit_model,
    predict_array,
)
from .seeding import derive_seed
from .splits import SplitError, SplitPlan, fold_positions, make_kfold, make_random_splits
from .stacking import (
    MetaCoefficients,
    OofPredictions,
    StackingError,
    blend,
    fit_meta_classification,
    fit_meta_regression,
    generate_oof,
    majority_vote,
    model_average,
)

log = logging.getLogger("specstack")

TABLE_COLUMNS = ["split_id", "model_id", "trait_id", "metric", "value"]


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class PerformanceRecord:
    split_id: int
    model_id: str
    trait_id: str
    metric: str
    value: float


def metric_rmse(pred, obs) -> float:
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape or pred.size == 0:
        raise HarnessError(f"rmse needs equal non-empty lengths, got {pred.shape} and {obs.shape}")
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def metric_accuracy(pred, obs) -> float:
    pred = np.asarray(pred)
    obs = np.asarray(obs)
    if pred.shape != obs.shape or pred.size == 0:
        raise HarnessError(f"accuracy needs equal non-empty lengths, got {pred.shape} and {obs.shape}")
    return float(np.mean(pred == obs))


# -- external predictions -------------------------------------------------------

@dataclass
class ExternalPredictions:
    """Per (split, trait) mapping of candidate id to predictions aligned to sorted rows."""

    candidates: tuple[str, ...]
    values: dict = field(default_factory=dict)  # (split, trait) -> {cand: array}

    def get(self, split_id: int, trait_id: str) -> dict:
        return self.values.get((split_id, trait_id), self.values.get((split_id, None), {}))


def ingest_external_predictions(path, plan: SplitPlan, n_classes: int = 0, rows: str = "test",
                                trait_ids=None) -> ExternalPredictions:
    """Read ``split_id,row_id,candidate_id[,trait_id],value...`` predictions.

    ``row_id`` is the 0-based dataset row.  Classification files carry one
    probability column per class after the key columns.  Every declared split
    must cover all of its test rows (``rows="test"``) or training rows
    (``rows="train"``, for OOF blocks) for every candidate.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    for col in ("split_id", "row_id", "candidate_id"):
        if col not in df.columns:
            raise HarnessError(f"external predictions {path} lack column {col!r}")
    has_trait = "trait_id" in df.columns
    keys = ["split_id", "row_id", "candidate_id"] + (["trait_id"] if has_trait else [])
    value_cols = [c for c in df.columns if c not in keys]
    want = n_classes if n_classes else 1
    if len(value_cols) != want:
        raise HarnessError(f"external predictions {path} need {want} value column(s), found {len(value_cols)}")
    df["candidate_id"] = df["candidate_id"].astype(str)
    if has_trait:
        df["trait_id"] = df["trait_id"].astype(str)
    if df.duplicated(keys).any():
        raise HarnessError(f"external predictions {path} repeat a (split, row, candidate) key")
    unknown = sorted(set(df["split_id"]) - set(range(plan.n_splits)))
    if unknown:
        raise HarnessError(f"external predictions name unknown split id {unknown[0]}")
    if has_trait and trait_ids is not None:
        bad = sorted(set(df["trait_id"]) - set(trait_ids))
        if bad:
            raise HarnessError(f"external predictions name unknown trait {bad[0]!r}")
    cands = tuple(sorted(df["candidate_id"].unique()))
    out = ExternalPredictions(cands)
    group_cols = ["split_id"] + (["trait_id"] if has_trait else [])
    for key, block in df.groupby(group_cols, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        split = int(key[0])
        trait = key[1] if has_trait else None
        needed = plan.test[split] if rows == "test" else plan.train[split]
        per = {}
        for cand, cb in block.groupby("candidate_id", sort=True):
            indexed = cb.set_index("row_id")
            missing = np.setdiff1d(needed, indexed.index.to_numpy())
            if missing.size:
                raise HarnessError(f"external candidate {cand!r} lacks split {split} row {int(missing[0])}")
            extra = np.setdiff1d(indexed.index.to_numpy(), needed)
            if extra.size:
                raise HarnessError(f"external candidate {cand!r} gives split {split} row {int(extra[0])}, "
                                   f"which is not a {rows} row")
            vals = indexed.loc[needed, value_cols].to_numpy(dtype=float)
            per[cand] = vals if n_classes else vals[:, 0]
        out.values[(split, trait)] = per
    return out


# -- one work unit --------------------------------------------------------------

@dataclass
class FittedUnit:
    """Everything learned from one split's training rows."""

    split_id: int
    trait_id: str
    columns: np.ndarray
    y_center: float
    y_scale: float
    folds: list
    models: dict[str, TrainedModel]
    chosen: dict[str, dict]
    oof: OofPredictions | None
    metas: dict[str, MetaCoefficients]
    failures: dict[str, str]
    n_warnings: int = 0


def _targets(data: SpectraDataset, cfg: RunConfig):
    """(trait ids, target arrays, class count)."""
    if cfg.task == CLASSIFICATION:
        if data.labels is None:
            raise HarnessError("classification run on a dataset without labels")
        codes = np.searchsorted(np.asarray(data.classes), np.asarray(data.labels, dtype=str))
        return (cfg.label_column or "label",), [codes], len(data.classes)
    if data.traits.empty:
        raise HarnessError("regression run on a dataset without traits")
    names = cfg.traits or tuple(data.traits.columns)
    unknown = [t for t in names if t not in data.traits.columns]
    if unknown:
        raise HarnessError(f"unknown trait {unknown[0]!r}")
    return tuple(names), [data.traits[t].to_numpy(dtype=float) for t in names], 0


def inner_folds(cfg: RunConfig, train_rows, labels=None, split_id: int = 0) -> list[np.ndarray]:
    lab = None if labels is None else labels[train_rows]
    folds = make_kfold(train_rows, cfg.inner_folds, lab, derive_seed(cfg.seed, 3, split_id))
    return fold_positions(folds, train_rows)


def fit_unit(cfg: RunConfig, X, target, train_rows, split_id: int, trait_index: int, trait_id: str,
             n_classes: int = 0, external_oof: dict | None = None) -> FittedUnit:
    """Fit everything one split needs from its training rows alone.

    Only ``train_rows`` of ``X`` and ``target`` are read.
    """
    train_rows = np.asarray(train_rows)
    Xtr_full = np.asarray(X)[train_rows]
    ytr_raw = np.asarray(target)[train_rows]
    failures: dict[str, str] = {}
    columns = np.arange(Xtr_full.shape[1])
    if cfg.task == CLASSIFICATION and (cfg.fs_top_k is not None or cfg.ga is not None):
        ga = None if cfg.ga is None else replace(cfg.ga, seed=derive_seed(cfg.seed, 7, split_id))
        columns = select_features(Xtr_full, ytr_raw, np.arange(len(train_rows)), cfg.fs_top_k, ga)
    Xtr = Xtr_full[:, columns]
    if cfg.task == REGRESSION:
        center = float(np.mean(ytr_raw))
        scale = float(np.std(ytr_raw, ddof=1)) if len(ytr_raw) > 1 else 1.0
        scale = scale if scale > 0 else 1.0
        ytr = (ytr_raw - center) / scale
    else:
        center, scale, ytr = 0.0, 1.0, ytr_raw
    folds = inner_folds(cfg, train_rows, target if cfg.task == CLASSIFICATION else None, split_id)
    specs = [c.spec(cfg.task) for c in cfg.candidates]
    n_warn = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        fits = generate_oof(specs, Xtr, ytr, folds, n_classes, derive_seed(cfg.seed, 4, trait_index),
                            split_id, row_ids=train_rows, on_error="skip")
        failures.update(fits.failures)
        models: dict[str, TrainedModel] = {}
        for m, spec in enumerate(specs):
            if spec.name not in fits.chosen:
                continue
            try:
                models[spec.name] = fit_model(spec.kind, Xtr, ytr, fits.chosen[spec.name], cfg.task, n_classes,
                                              derive_seed(cfg.seed, 5, trait_index, split_id, m))
            except FIT_ERRORS as err:
                failures[spec.name] = f"refit failed: {err}"
        n_warn += sum(issubclass(w.category, ConvergenceWarning) for w in caught)

    # stackable candidates: refit natives plus externals with OOF blocks
    names, blocks = [], []
    for m, name in enumerate(fits.oof.candidates):
        if name in models:
            names.append(name)
            blocks.append(fits.oof.block(m))
    for name, vals in sorted((external_oof or {}).items()):
        names.append(name)
        blocks.append((np.asarray(vals) - center) / scale if cfg.task == REGRESSION else np.asarray(vals))
    oof = None
    metas: dict[str, MetaCoefficients] = {}
    if names:
        values = np.column_stack(blocks) if cfg.task == REGRESSION else np.hstack(blocks)
        oof = OofPredictions(split_id, train_rows, fits.oof.fold_of_row, tuple(names), values, n_classes)
        meta_seed = derive_seed(cfg.seed, 6, trait_index, split_id)
        for ens in cfg.ensembles:
            if ens in ("ens_MA", "ens_maj_vote"):
                continue
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                try:
                    if cfg.task == REGRESSION:
                        metas[ens] = fit_meta_regression(oof, ytr, META_KIND[ens], meta_seed, cfg.meta_rf_ntrees,
                                                         cfg.meta_lasso_folds)
                    else:
                        metas[ens] = fit_meta_classification(oof, ytr)
                except (StackingError, *FIT_ERRORS) as err:
                    failures[ens] = str(err)
                n_warn += sum(issubclass(w.category, ConvergenceWarning) for w in caught)
    return FittedUnit(split_id, trait_id, columns, center, scale, folds, models, fits.chosen, oof, metas,
                      failures, n_warn)


@dataclass
class UnitResult:
    records: list[PerformanceRecord]
    cells: list[dict]
    predictions: list[tuple] = field(default_factory=list)
    oof_rows: list[tuple] = field(default_factory=list)
    chosen: dict = field(default_factory=dict)
    n_warnings: int = 0


def evaluate_unit(fitted: FittedUnit, cfg: RunConfig, X, target, test_rows, external_test: dict | None = None,
                  n_classes: int = 0, external_ids: tuple[str, ...] = ()) -> UnitResult:
    """Predict the test rows with every model and score them.

    Rows are processed in ascending row-id order so metrics do not depend on
    the order ``test_rows`` arrives in.
    """
    test_rows = np.sort(np.asarray(test_rows))
    Xte = np.asarray(X)[test_rows][:, fitted.columns]
    obs_raw = np.asarray(target)[test_rows]
    reg = cfg.task == REGRESSION
    obs = (obs_raw - fitted.y_center) / fitted.y_scale if reg else obs_raw
    metric = "rmse" if reg else "acc"
    preds: dict[str, np.ndarray] = {}
    failures = dict(fitted.failures)
    for name, model in fitted.models.items():
        preds[name] = predict_array(model, Xte)
    for name, vals in sorted((external_test or {}).items()):
        vals = np.asarray(vals, dtype=float)
        preds[name] = (vals - fitted.y_center) / fitted.y_scale if reg else vals
    candidate_ids = tuple(c.name for c in cfg.candidates) + tuple(external_ids)
    available = [c for c in candidate_ids if c in preds]
    for ens in cfg.ensembles:
        try:
            if ens == "ens_MA":
                if not available:
                    raise StackingError("no candidate predictions to average")
                preds[ens] = model_average([preds[c] for c in available]).array()
            elif ens == "ens_maj_vote":
                if not available:
                    raise StackingError("no candidate predictions to vote")
                preds[ens] = majority_vote([preds[c] for c in available]).proba
            elif ens in fitted.metas:
                meta = fitted.metas[ens]
                preds[ens] = blend(meta, {c: preds[c] for c in meta.candidates}).array()
            elif ens not in failures:
                failures[ens] = "no stackable candidates"
        except (StackingError, *FIT_ERRORS) as err:
            failures[ens] = str(err)
    records, cells, pred_rows = [], [], []
    for model_id in candidate_ids + tuple(cfg.ensembles):
        if model_id in preds:
            p = preds[model_id]
            value = metric_rmse(p, obs) if reg else metric_accuracy(np.argmax(p, axis=1), obs)
            cells.append({"split_id": fitted.split_id, "trait_id": fitted.trait_id, "model_id": model_id,
                          "status": "ok"})
            if cfg.save_predictions:
                raw = p * fitted.y_scale + fitted.y_center if reg else p
                for r, v in zip(test_rows, raw):
                    pred_rows.append((fitted.split_id, int(r), model_id, fitted.trait_id,
                                      *(np.atleast_1d(v).tolist())))
        else:
            value = math.nan
            msg = failures.get(model_id, "no prediction")
            log.warning("split %d trait %s model %s failed: %s", fitted.split_id, fitted.trait_id, model_id, msg)
            cells.append({"split_id": fitted.split_id, "trait_id": fitted.trait_id, "model_id": model_id,
                          "status": "failed", "error": msg})
        records.append(PerformanceRecord(fitted.split_id, model_id, fitted.trait_id, metric, value))
    oof_rows = []
    if cfg.save_predictions and fitted.oof is not None:
        for m, name in enumerate(fitted.oof.candidates):
            blk = fitted.oof.block(m)
            raw = blk * fitted.y_scale + fitted.y_center if reg else blk
            for r, v in zip(fitted.oof.row_ids, raw):
                oof_rows.append((fitted.split_id, int(r), name, fitted.trait_id, *(np.atleast_1d(v).tolist())))
    return UnitResult(records, cells, pred_rows, oof_rows, {name: dict(p) for name, p in fitted.chosen.items()},
                      fitted.n_warnings)


# -- the full loop --------------------------------------------------------------

_STATE: dict = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _run_unit(split_id: int, trait_index: int) -> UnitResult:
    st = _STATE
    cfg: RunConfig = st["cfg"]
    plan: SplitPlan = st["plan"]
    trait_id = st["trait_ids"][trait_index]
    target = st["targets"][trait_index]
    ext_key = None if cfg.task == CLASSIFICATION else trait_id
    ext_oof = st["ext_oof"].get(split_id, ext_key) if st["ext_oof"] is not None else {}
    ext_test = st["ext_test"].get(split_id, ext_key) if st["ext_test"] is not None else {}
    fitted = fit_unit(cfg, st["X"], target, plan.train[split_id], split_id, trait_index, trait_id,
                      st["n_classes"], ext_oof)
    return evaluate_unit(fitted, cfg, st["X"], target, plan.test[split_id], ext_test, st["n_classes"],
                         st["external_ids"])


@dataclass
class BenchmarkResult:
    table: pd.DataFrame
    manifest: dict
    predictions: pd.DataFrame | None = None
    oof: pd.DataFrame | None = None


def make_plan(cfg: RunConfig, data: SpectraDataset) -> SplitPlan:
    labels = data.labels if cfg.task == CLASSIFICATION else None
    return make_random_splits(data.n_samples, cfg.n_splits, cfg.train_fraction, labels, cfg.seed)


def run_benchmark(cfg: RunConfig, data: SpectraDataset | None = None, jobs: int = 1) -> BenchmarkResult:
    """Run every (split, trait) unit and collect the performance table.

    ``jobs`` caps the worker processes; the output is identical for any value.
    """
    if data is None:
        data = load_dataset(cfg.dataset, cfg.label_column)
    trait_ids, targets, n_classes = _targets(data, cfg)
    try:
        plan = make_plan(cfg, data)
    except SplitError as err:
        raise HarnessError(str(err)) from err
    ext_test = ext_oof = None
    external_ids: tuple[str, ...] = ()
    if cfg.external_predictions is not None:
        ext_test = ingest_external_predictions(cfg.external_predictions, plan, n_classes, "test", trait_ids)
        external_ids = ext_test.candidates
    if cfg.external_oof is not None:
        ext_oof = ingest_external_predictions(cfg.external_oof, plan, n_classes, "train", trait_ids)
        unknown = set(ext_oof.candidates) - set(external_ids)
        if unknown:
            raise HarnessError(f"OOF file names candidates without test predictions: {sorted(unknown)}")
    clash = set(external_ids) & set(cfg.model_ids)
    if clash:
        raise HarnessError(f"external candidate ids clash with roster names: {sorted(clash)}")
    state = {"cfg": cfg, "plan": plan, "X": data.absorbance, "targets": targets, "trait_ids": trait_ids,
             "n_classes": n_classes, "ext_test": ext_test, "ext_oof": ext_oof, "external_ids": external_ids}
    units = [(s, t) for s in range(plan.n_splits) for t in range(len(trait_ids))]
    if jobs <= 1:
        _init_worker(state)
        results = [_run_unit(s, t) for s, t in units]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as pool:
            results = list(pool.map(_run_unit, *zip(*units)))
    model_ids = tuple(c.name for c in cfg.candidates) + external_ids + cfg.ensembles
    table = records_frame([r for res in results for r in res.records], model_ids, trait_ids)
    cells = [c for res in results for c in res.cells]
    n_failed = sum(c["status"] != "ok" for c in cells)
    manifest = {
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.seed,
        "task": cfg.task,
        "n_splits": plan.n_splits,
        "traits": list(trait_ids),
        "models": list(model_ids),
        "n_records": int(len(table)),
        "n_failed_cells": int(n_failed),
        "n_convergence_warnings": int(sum(res.n_warnings for res in results)),
        "chosen": {f"{s}/{trait_ids[t]}": res.chosen for (s, t), res in zip(units, results)},
        "cells": cells,
    }
    preds = oof = None
    if cfg.save_predictions:
        value_cols = ["value"] if not n_classes else [f"p_{c}" for c in data.classes]
        cols = ["split_id", "row_id", "candidate_id", "trait_id"] + value_cols
        preds = pd.DataFrame([row for res in results for row in res.predictions], columns=cols)
        oof = pd.DataFrame([row for res in results for row in res.oof_rows], columns=cols)
    return BenchmarkResult(table, manifest, preds, oof)


def records_frame(records, model_ids=None, trait_ids=None) -> pd.DataFrame:
    df = pd.DataFrame([r.__dict__ for r in records], columns=TABLE_COLUMNS)
    if len(df) == 0:
        return df
    m_order = {m: i for i, m in enumerate(model_ids or sorted(df["model_id"].unique()))}
    t_order = {t: i for i, t in enumerate(trait_ids or sorted(df["trait_id"].unique()))}
    order = np.lexsort((df["model_id"].map(m_order).to_numpy(), df["trait_id"].map(t_order).to_numpy(),
                        df["split_id"].to_numpy()))
    return df.iloc[order].reset_index(drop=True)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(df: pd.DataFrame, path) -> None:
    """Delimited text with 17 significant digits; missing values are empty fields."""
    lines = [",".join(df.columns)]
    for row in df.itertuples(index=False):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"model_id": str, "trait_id": str})
    missing = [c for c in TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise HarnessError(f"performance table {path} lacks column {missing[0]!r}")
    return df
