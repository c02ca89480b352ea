"""Run configuration: flat ``key.sub: value`` YAML with environment overrides.

Nested mappings are flattened with dots, so ``splits: {n: 5}`` and
``splits.n: 5`` are equivalent.  ``SPECSTACK_SPLITS__N=5`` overrides
``splits.n`` (double underscore for a dot, case-insensitive); override values
are parsed as YAML scalars or lists.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data_pipeline import DEFAULT_NOISE_REGIONS, DEFAULT_SKEWNESS_CUTOFF
from .feature_selection import GaConfig
from .models import CLASSIFICATION, KINDS, REGRESSION, ModelError, ModelSpec

ENV_PREFIX = "SPECSTACK_"

REGRESSION_ENSEMBLES = ("ens_nonneg", "ens_LASSO", "ens_LM", "ens_RF", "ens_MA")
CLASSIFICATION_ENSEMBLES = ("ens_nonneg", "ens_maj_vote", "ens_MA")
META_KIND = {"ens_nonneg": "nonneg", "ens_LASSO": "lasso", "ens_LM": "lm", "ens_RF": "rf"}

DEFAULT_ROSTER = {
    REGRESSION: {
        "pls": {"kind": "pls"},
        "pca_lm": {"kind": "pca_lm"},
        "lasso": {"kind": "enet", "alpha": [1.0]},
        "enet": {"kind": "enet", "alpha": [0.5]},
        "rf": {"kind": "rf"},
        "gbm": {"kind": "gbm"},
    },
    CLASSIFICATION: {
        "plsda": {"kind": "pls"},
        "lda": {"kind": "lda"},
        "lasso": {"kind": "enet", "alpha": [1.0]},
        "enet": {"kind": "enet", "alpha": [0.5]},
        "rf": {"kind": "rf"},
    },
}


class ConfigError(ValueError):
    pass


def flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping) and not key.startswith("preprocess.target_roles"):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if name.upper().startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = yaml.safe_load(raw) if raw != "" else None
    return out


def read_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> dict:
    """File values, then environment overrides, then explicit ``overrides``."""
    flat: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"config file {path} is not valid YAML: {err}") from err
        if not isinstance(loaded, Mapping):
            raise ConfigError("config file must hold a mapping")
        flat = flatten(loaded)
        flat["_base_dir"] = str(path.parent.resolve())
    flat.update(env_overrides(environ))
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return flat


def _as_tuple(v) -> tuple:
    if v is None:
        return (None,)
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return (v,)


@dataclass(frozen=True)
class CandidateConfig:
    name: str
    kind: str
    grid: dict

    def spec(self, task: str, seed: int = 0) -> ModelSpec:
        return ModelSpec(self.kind, task, self.grid, seed, self.name)


@dataclass(frozen=True)
class RunConfig:
    dataset: Path | None
    task: str
    label_column: str | None = None
    traits: tuple[str, ...] | None = None
    seed: int = 0
    n_splits: int = 50
    train_fraction: float = 0.75
    inner_folds: int = 10
    candidates: tuple[CandidateConfig, ...] = ()
    ensembles: tuple[str, ...] = ()
    meta_rf_ntrees: int = 500
    meta_lasso_folds: int = 5
    fs_top_k: int | None = None
    ga: GaConfig | None = None
    external_predictions: Path | None = None
    external_oof: Path | None = None
    save_predictions: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.candidates) + self.ensembles

    def config_hash(self) -> str:
        keep = {k: v for k, v in self.raw.items() if k not in ("jobs", "out", "_base_dir")}
        blob = json.dumps(keep, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _resolve(base: str | None, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    return p


def _candidates(flat: dict, task: str) -> tuple[CandidateConfig, ...]:
    models: dict[str, dict] = {}
    for name, entry in DEFAULT_ROSTER[task].items():
        models[name] = dict(entry)
    for key, v in flat.items():
        if key.startswith("model."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigError(f"model keys take the form model.<name>.<param>, got {key!r}")
            models.setdefault(parts[1], {})[parts[2]] = v
    names = flat.get("roster.candidates")
    names = list(DEFAULT_ROSTER[task]) if names is None else list(_as_tuple(names))
    if len(set(names)) != len(names):
        raise ConfigError(f"candidate names are not unique: {names}")
    out = []
    for name in names:
        entry = models.get(name)
        if entry is None:
            raise ConfigError(f"unknown model name in roster: {name!r}")
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind not in KINDS:
            raise ConfigError(f"model {name!r} has unknown kind {kind!r}; expected one of {sorted(KINDS)}")
        grid = {k: _as_tuple(v) for k, v in entry.items()}
        try:
            ModelSpec(kind, task, grid, 0, name)
        except ModelError as err:
            raise ConfigError(f"model {name!r}: {err}") from err
        out.append(CandidateConfig(name, kind, grid))
    return tuple(out)


def _int(flat, key, default, lo=None):
    v = flat.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or int(v) != v:
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{key} must be >= {lo}, got {v}")
    return int(v)


def build_run_config(flat: dict, task: str | None = None, require_dataset: bool = True) -> RunConfig:
    """Validate a flat config mapping into a :class:`RunConfig`."""
    base = flat.get("_base_dir")
    dataset = _resolve(base, flat.get("dataset"))
    if require_dataset:
        if dataset is None:
            raise ConfigError("config lacks 'dataset'")
        if not dataset.exists():
            raise ConfigError(f"dataset not found: {dataset}")
    label = flat.get("label_column")
    task = task or flat.get("task") or (CLASSIFICATION if label else REGRESSION)
    if task not in (REGRESSION, CLASSIFICATION):
        raise ConfigError(f"task must be regression or classification, got {task!r}")
    ens = flat.get("roster.ensembles")
    allowed = REGRESSION_ENSEMBLES if task == REGRESSION else CLASSIFICATION_ENSEMBLES
    default_ens = allowed[:-1] if task == CLASSIFICATION else allowed
    ens = tuple(default_ens if ens is None else _as_tuple(ens))
    for e in ens:
        if e not in allowed:
            raise ConfigError(f"unknown ensemble {e!r} for {task}; expected one of {allowed}")
    if len(set(ens)) != len(ens):
        raise ConfigError("ensemble names are not unique")
    candidates = _candidates(flat, task)
    clash = set(ens) & {c.name for c in candidates}
    if clash:
        raise ConfigError(f"candidate names clash with ensembles: {sorted(clash)}")
    tf = float(flat.get("splits.train_fraction", 0.75))
    if not 0.0 < tf < 1.0:
        raise ConfigError(f"splits.train_fraction must lie in (0, 1), got {tf}")
    ga = None
    if flat.get("ga.enabled", False):
        ga_keys = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("ga.") and k != "ga.enabled"}
        try:
            ga = GaConfig(**ga_keys)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid ga settings: {err}") from err
    traits = flat.get("traits")
    ext = _resolve(base, flat.get("external.predictions"))
    ext_oof = _resolve(base, flat.get("external.oof"))
    for p in (ext, ext_oof):
        if p is not None and not p.exists():
            raise ConfigError(f"external predictions file not found: {p}")
    return RunConfig(
        dataset=dataset,
        task=task,
        label_column=label,
        traits=None if traits is None else tuple(str(t) for t in _as_tuple(traits)),
        seed=_int(flat, "seed", 0),
        n_splits=_int(flat, "splits.n", 50 if task == REGRESSION else 10, 1),
        train_fraction=tf,
        inner_folds=_int(flat, "splits.inner_folds", 10, 2),
        candidates=candidates,
        ensembles=ens,
        meta_rf_ntrees=_int(flat, "meta.rf_ntrees", 500, 1),
        meta_lasso_folds=_int(flat, "meta.lasso_folds", 5, 2),
        fs_top_k=_int(flat, "fs.top_k", None, 1),
        ga=ga,
        external_predictions=ext,
        external_oof=ext_oof,
        save_predictions=bool(flat.get("save_predictions", False)),
        raw=dict(flat),
    )


@dataclass(frozen=True)
class PreprocessConfig:
    input: Path
    output: Path
    noise_regions: tuple = DEFAULT_NOISE_REGIONS
    skewness_cutoff: float = DEFAULT_SKEWNESS_CUTOFF
    log_transform: bool = True
    label_column: str | None = None
    target_roles: dict = field(default_factory=dict)
    kind: str = "transmittance"


def build_preprocess_config(flat: dict, out_dir: Path | None = None) -> PreprocessConfig:
    base = flat.get("_base_dir")
    src = _resolve(base, flat.get("preprocess.input"))
    if src is None:
        raise ConfigError("config lacks 'preprocess.input'")
    if not src.exists():
        raise ConfigError(f"input table not found: {src}")
    out = flat.get("preprocess.output") or "dataset.csv"
    out = Path(out_dir) / Path(out).name if out_dir is not None else _resolve(base, out)
    regions = flat.get("preprocess.noise_regions")
    if regions is None:
        regions = DEFAULT_NOISE_REGIONS
    else:
        try:
            regions = tuple((float(a), float(b)) for a, b in regions)
        except (TypeError, ValueError) as err:
            raise ConfigError("preprocess.noise_regions must be a list of [low, high] pairs") from err
    kind = flat.get("preprocess.kind", "transmittance")
    if kind not in ("transmittance", "absorbance"):
        raise ConfigError(f"preprocess.kind must be transmittance or absorbance, got {kind!r}")
    return PreprocessConfig(
        input=src,
        output=out,
        noise_regions=regions,
        skewness_cutoff=float(flat.get("preprocess.skewness_cutoff", DEFAULT_SKEWNESS_CUTOFF)),
        log_transform=bool(flat.get("preprocess.log_transform", True)),
        label_column=flat.get("label_column"),
        target_roles=dict(flat.get("preprocess.target_roles") or {}),
        kind=kind,
    )
