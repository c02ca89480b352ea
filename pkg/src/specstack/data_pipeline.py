"""Spectral table ingestion, absorbance conversion and fold-local scaling."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

DEFAULT_NOISE_REGIONS: tuple[tuple[float, float], ...] = (
    (1600.0, 1710.0),
    (2990.0, 3690.0),
    (3822.0, math.inf),
)
DEFAULT_SKEWNESS_CUTOFF = 1.0
CONSTANT_SD_TOL = 1e-12

_WAVE_COL = re.compile(r"^w(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)$")


class DataError(ValueError):
    """Invalid input data, optionally carrying row/column context."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        ctx = []
        if row is not None:
            ctx.append(f"row {row}")
        if column is not None:
            ctx.append(f"column {column!r}")
        full = f"{message} ({', '.join(ctx)})" if ctx else message
        super().__init__(full)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class RawSpectraTable:
    sample_ids: tuple[str, ...]
    wavenumbers: np.ndarray
    values: np.ndarray
    targets: pd.DataFrame
    target_roles: Mapping[str, str]
    kind: str = "transmittance"

    def __post_init__(self):
        w = np.asarray(self.wavenumbers, dtype=float)
        if w.ndim != 1 or w.size != self.values.shape[1]:
            raise DataError("wavenumber count does not match spectral column count")
        if np.any(np.diff(w) <= 0):
            raise DataError("wavenumbers must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_wavelengths(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpectraDataset:
    """Absorbance matrix plus its wavenumber grid and targets.

    ``traits`` holds continuous targets (regression); ``labels`` holds a
    categorical vector whose values all belong to ``classes``.
    """

    absorbance: np.ndarray
    wavenumbers: np.ndarray
    sample_ids: tuple[str, ...]
    traits: pd.DataFrame = field(default_factory=pd.DataFrame)
    labels: np.ndarray | None = None
    classes: tuple[str, ...] = ()
    transform_log: Mapping[str, bool] = field(default_factory=dict)
    removed_wavenumbers: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.absorbance.shape[1] != len(self.wavenumbers):
            raise DataError("feature count does not match retained wavenumber count")
        if not np.all(np.isfinite(self.absorbance)):
            raise DataError("absorbance contains missing or non-finite values")
        if self.labels is not None:
            bad = set(np.unique(self.labels)) - set(self.classes)
            if bad:
                raise DataError(f"labels outside declared class set: {sorted(bad)}")

    @property
    def n_samples(self) -> int:
        return self.absorbance.shape[0]

    @property
    def task(self) -> str:
        return "classification" if self.labels is not None else "regression"


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    sds: np.ndarray
    fitted_on: tuple[int, ...]

    def __eq__(self, other):
        if not isinstance(other, Standardizer):
            return NotImplemented
        return (
            self.fitted_on == other.fitted_on
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.sds, other.sds)
        )


def wave_column_value(name: str) -> float | None:
    m = _WAVE_COL.match(name.strip())
    return float(m.group(1)) if m else None


def load_table(path: str | Path, target_roles: Mapping[str, str] | None = None) -> RawSpectraTable:
    """Read a comma-separated spectral table.

    The header must contain ``sample_id``, spectral columns named
    ``w<wavenumber>`` and any number of target columns.  ``target_roles`` maps
    target columns to ``"trait"``, ``"label"`` or ``"ignore"``; unmapped
    targets default to ``"trait"`` when numeric and ``"label"`` otherwise.
    Spectral columns may appear in any order and are sorted by wavenumber.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if "sample_id" not in df.columns:
        raise DataError("header lacks a 'sample_id' column")
    ids = df["sample_id"].str.strip()
    dup = ids[ids.duplicated()]
    if len(dup):
        row = int(dup.index[0]) + 1
        raise DataError(f"duplicate sample id {dup.iloc[0]!r}", row=row, column="sample_id")

    wave_cols = [(wave_column_value(c), c) for c in df.columns if wave_column_value(c) is not None]
    if not wave_cols:
        raise DataError("no spectral columns (expected names like 'w1000')")
    wave_cols.sort()
    grid = np.array([w for w, _ in wave_cols])
    if np.any(np.diff(grid) <= 0):
        raise DataError("duplicate wavenumber columns")

    values = np.empty((len(df), len(wave_cols)))
    for j, (_, col) in enumerate(wave_cols):
        parsed = pd.to_numeric(df[col].str.strip(), errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            r = int(bad[0])
            raise DataError(f"non-numeric spectral cell {df[col].iloc[r]!r}", row=r + 1, column=col)
        nonpos = np.flatnonzero(parsed <= 0)
        if nonpos.size:
            raise DataError("non-positive transmittance", row=int(nonpos[0]) + 1, column=col)
        values[:, j] = parsed

    target_cols = [c for c in df.columns if c != "sample_id" and wave_column_value(c) is None]
    roles = dict(target_roles or {})
    unknown = set(roles) - set(target_cols)
    if unknown:
        raise DataError(f"target_roles names unknown columns: {sorted(unknown)}")
    targets = {}
    final_roles = {}
    for c in target_cols:
        raw = df[c].str.strip()
        num = pd.to_numeric(raw, errors="coerce")
        role = roles.get(c) or ("trait" if num.notna().all() else "label")
        if role not in ("trait", "label", "ignore"):
            raise DataError(f"unknown target role {role!r}", column=c)
        if role == "ignore":
            continue
        if role == "trait":
            bad = np.flatnonzero(num.isna().to_numpy())
            if bad.size:
                r = int(bad[0])
                raise DataError(f"non-numeric trait value {raw.iloc[r]!r}", row=r + 1, column=c)
            targets[c] = num.to_numpy(dtype=float)
        else:
            targets[c] = raw.to_numpy(dtype=object)
        final_roles[c] = role
    return RawSpectraTable(
        sample_ids=tuple(ids),
        wavenumbers=grid,
        values=values,
        targets=pd.DataFrame(targets, index=range(len(df))),
        target_roles=final_roles,
    )


def to_absorbance(table: RawSpectraTable) -> RawSpectraTable:
    """Replace transmittance ``T`` by ``log10(1/T)``."""
    if table.kind != "transmittance":
        raise DataError("table is already in absorbance units")
    T = np.asarray(table.values, dtype=float)
    bad = np.argwhere(~(T > 0))
    if bad.size:
        r, c = bad[0]
        raise DataError("non-positive transmittance", row=int(r) + 1, column=f"w{table.wavenumbers[c]:g}")
    return replace(table, values=-np.log10(T), kind="absorbance")


def make_dataset(table: RawSpectraTable, label_column: str | None = None) -> SpectraDataset:
    """Assemble a :class:`SpectraDataset` from an absorbance table.

    With a label column present (or named) the dataset is a classification
    dataset; trait columns are then ignored.
    """
    if table.kind != "absorbance":
        raise DataError("convert to absorbance before building a dataset")
    label_cols = [c for c, r in table.target_roles.items() if r == "label"]
    if label_column is None and len(label_cols) > 1:
        raise DataError(f"several label columns {label_cols}; name one")
    label_column = label_column or (label_cols[0] if label_cols else None)
    if label_column is not None:
        labels = np.asarray(table.targets[label_column], dtype=str)
        return SpectraDataset(
            absorbance=table.values,
            wavenumbers=table.wavenumbers,
            sample_ids=table.sample_ids,
            labels=labels,
            classes=tuple(sorted(set(labels))),
        )
    trait_cols = [c for c, r in table.target_roles.items() if r == "trait"]
    return SpectraDataset(
        absorbance=table.values,
        wavenumbers=table.wavenumbers,
        sample_ids=table.sample_ids,
        traits=table.targets[trait_cols].astype(float),
        transform_log={c: False for c in trait_cols},
    )


def _normalize_regions(regions: Iterable[Sequence[float]]) -> list[tuple[float, float]]:
    out = []
    for reg in regions:
        lo, hi = (float(v) for v in reg)
        out.append((min(lo, hi), max(lo, hi)))
    return out


def noise_mask(wavenumbers: np.ndarray, regions: Iterable[Sequence[float]]) -> np.ndarray:
    """Boolean mask of grid points falling in any closed interval."""
    w = np.asarray(wavenumbers, dtype=float)
    mask = np.zeros(w.shape, dtype=bool)
    for lo, hi in _normalize_regions(regions):
        mask |= (w >= lo) & (w <= hi)
    return mask


def drop_noise_regions(data: SpectraDataset, regions: Iterable[Sequence[float]]) -> SpectraDataset:
    """Remove every wavenumber lying inside any of ``regions``.

    The removed grid points accumulate in ``removed_wavenumbers`` so the
    removal count survives repeated application.
    """
    mask = noise_mask(data.wavenumbers, regions)
    if mask.all():
        raise DataError("empty surviving grid")
    keep = ~mask
    removed = np.sort(np.concatenate([data.removed_wavenumbers, data.wavenumbers[mask]]))
    return replace(
        data,
        absorbance=data.absorbance[:, keep],
        wavenumbers=data.wavenumbers[keep],
        removed_wavenumbers=removed,
    )


def fit_standardizer(X: np.ndarray, rows: Sequence[int] | np.ndarray | None = None,
                     scale: bool = True) -> Standardizer:
    """Column means and sample standard deviations (n-1) over ``rows``.

    With ``scale=False`` only centring is applied (all sds are 1).
    """
    X = np.asarray(X, dtype=float)
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise DataError("standardizer needs at least one training row")
    block = X[rows]
    means = block.mean(axis=0)
    if not scale:
        return Standardizer(means=means, sds=np.ones(X.shape[1]), fitted_on=tuple(int(r) for r in rows))
    sds = block.std(axis=0, ddof=1) if rows.size > 1 else np.zeros(X.shape[1])
    const = np.flatnonzero(~(sds >= CONSTANT_SD_TOL))
    if const.size:
        raise DataError(f"constant column on training rows: index {int(const[0])}", column=str(int(const[0])))
    return Standardizer(means=means, sds=sds, fitted_on=tuple(int(r) for r in rows))


def apply_standardizer(std: Standardizer, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != std.means.size:
        raise DataError(f"expected {std.means.size} columns, got shape {X.shape}")
    return (X - std.means) / std.sds


def sample_skewness(x: np.ndarray) -> float:
    """Adjusted Fisher-Pearson skewness G1."""
    return float(stats.skew(np.asarray(x, dtype=float), bias=False))


def log_transform_traits(
    traits: pd.DataFrame, threshold: float = DEFAULT_SKEWNESS_CUTOFF
) -> tuple[pd.DataFrame, dict[str, bool]]:
    out = traits.copy()
    flags = {}
    for col in traits.columns:
        x = traits[col].to_numpy(dtype=float)
        skewed = x.size > 2 and sample_skewness(x) > threshold
        if skewed:
            if np.any(x <= 0):
                raise DataError("right-skewed trait has non-positive values; cannot log-transform", column=col)
            out[col] = np.log(x)
        flags[col] = bool(skewed)
    return out, flags


def transform_dataset_traits(data: SpectraDataset, threshold: float = DEFAULT_SKEWNESS_CUTOFF) -> SpectraDataset:
    if data.traits.empty:
        return data
    traits, flags = log_transform_traits(data.traits, threshold)
    return replace(data, traits=traits, transform_log=flags)


def save_dataset(data: SpectraDataset, path: str | Path) -> None:
    """Write a processed dataset in the same CSV layout :func:`load_table` reads."""
    cols = {"sample_id": list(data.sample_ids)}
    for j, w in enumerate(data.wavenumbers):
        cols[f"w{w:g}"] = data.absorbance[:, j]
    frame = pd.DataFrame(cols)
    if data.labels is not None:
        frame["label"] = data.labels
    for c in data.traits.columns:
        frame[c] = data.traits[c].to_numpy()
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def load_dataset(path: str | Path, label_column: str | None = None,
                 target_roles: Mapping[str, str] | None = None) -> SpectraDataset:
    """Read a processed (absorbance) dataset written by :func:`save_dataset`."""
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    roles = dict(target_roles or {})
    if "label" in df.columns and "label" not in roles:
        roles["label"] = "label"
    if label_column is not None:
        roles[label_column] = "label"
    # Absorbance may be <= 0, so bypass load_table's transmittance guard.
    wave_cols = sorted((wave_column_value(c), c) for c in df.columns if wave_column_value(c) is not None)
    values = np.empty((len(df), len(wave_cols)))
    for j, (_, col) in enumerate(wave_cols):
        parsed = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            raise DataError("non-numeric absorbance cell", row=int(bad[0]) + 1, column=col)
        values[:, j] = parsed
    target_cols = [c for c in df.columns if c != "sample_id" and wave_column_value(c) is None]
    targets, final = {}, {}
    for c in target_cols:
        role = roles.get(c, "trait")
        if role == "ignore":
            continue
        targets[c] = pd.to_numeric(df[c]).to_numpy(dtype=float) if role == "trait" else df[c].to_numpy(dtype=object)
        final[c] = role
    table = RawSpectraTable(
        sample_ids=tuple(df["sample_id"]),
        wavenumbers=np.array([w for w, _ in wave_cols]),
        values=values,
        targets=pd.DataFrame(targets, index=range(len(df))),
        target_roles=final,
        kind="absorbance",
    )
    return make_dataset(table, label_column)
