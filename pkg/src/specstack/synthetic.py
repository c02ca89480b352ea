"""Synthetic spectra with known structure for tests and demonstrations."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data_pipeline import SpectraDataset


def ar_spectra(rng: np.random.Generator, n: int, p: int, rho: float = 0.95, scale: float = 1.0) -> np.ndarray:
    """Rows of a stationary AR(1) process along the wavelength axis."""
    X = np.empty((n, p))
    X[:, 0] = rng.normal(size=n)
    innov = rng.normal(size=(n, p)) * np.sqrt(1.0 - rho ** 2)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + innov[:, j]
    return X * scale


def _bump(p: int, centre: float, width: float) -> np.ndarray:
    j = np.arange(p)
    return np.exp(-0.5 * ((j - centre * p) / (width * p)) ** 2)


def regression_spectra(n: int = 400, p: int = 150, n_traits: int = 1, seed: int = 0, rho: float = 0.95,
                       noise: float = 0.5, interaction: float = 0.6) -> SpectraDataset:
    """AR(1) spectra with traits mixing a smooth linear signal and one interaction.

    Trait ``t`` is ``X @ beta_t + interaction * x_a * x_b + noise``, with
    ``beta_t`` a sum of two Gaussian bumps over the wavelength axis.
    """
    rng = np.random.default_rng(seed)
    X = ar_spectra(rng, n, p, rho)
    traits = {}
    for t in range(n_traits):
        c1, c2 = rng.uniform(0.1, 0.9, 2)
        beta = _bump(p, c1, 0.03) - 0.7 * _bump(p, c2, 0.05)
        beta *= 1.0 / np.sqrt(beta @ beta) * 0.6
        a, b = rng.choice(p, 2, replace=False)
        lin = X @ beta
        y = lin / lin.std() + interaction * X[:, a] * X[:, b] + noise * rng.normal(size=n)
        traits[f"trait{t + 1}"] = y
    wn = np.linspace(1000.0, 1000.0 + 4.0 * (p - 1), p)
    return SpectraDataset(
        absorbance=X,
        wavenumbers=wn,
        sample_ids=tuple(f"s{i:04d}" for i in range(n)),
        traits=pd.DataFrame(traits),
        transform_log={k: False for k in traits},
    )


def classification_spectra(n_per_class=(134, 133, 133), p: int = 150, seed: int = 0, rho: float = 0.9,
                            separation: float = 1.2, overlap: float = 0.35) -> SpectraDataset:
    """Three-class Gaussian mixture over AR(1) spectra.

    Class ``A`` sits apart from ``B`` and ``C``; ``B`` and ``C`` differ only by a
    weak band of size ``overlap``, so they are frequently confused.
    """
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in n_per_class)
    mu_a = separation * (_bump(p, 0.3, 0.04) - 0.5 * _bump(p, 0.7, 0.06))
    mu_b = np.zeros(p)
    mu_c = overlap * _bump(p, 0.5, 0.05)
    blocks, labels = [], []
    for name, mu, k in zip("ABC", (mu_a, mu_b, mu_c), counts):
        blocks.append(ar_spectra(rng, k, p, rho) * 0.5 + mu)
        labels += [name] * k
    X = np.vstack(blocks)
    order = rng.permutation(X.shape[0])
    wn = np.linspace(1000.0, 1000.0 + 4.0 * (p - 1), p)
    return SpectraDataset(
        absorbance=X[order],
        wavenumbers=wn,
        sample_ids=tuple(f"s{i:04d}" for i in range(X.shape[0])),
        labels=np.asarray(labels, dtype=str)[order],
        classes=("A", "B", "C"),
    )


def transmittance_table(data: SpectraDataset, wavenumbers=None) -> pd.DataFrame:
    """Raw-table frame (``sample_id, w..., targets``) with transmittance ``10**-A``.

    Absorbance is shifted to be positive first, so every value lies in (0, 1).
    """
    A = data.absorbance - data.absorbance.min() + 0.05
    wn = data.wavenumbers if wavenumbers is None else np.asarray(wavenumbers)
    cols = {"sample_id": list(data.sample_ids)}
    for j, w in enumerate(wn):
        cols[f"w{w:g}"] = 10.0 ** (-A[:, j])
    df = pd.DataFrame(cols)
    if data.labels is not None:
        df["label"] = data.labels
    for c in data.traits.columns:
        df[c] = data.traits[c].to_numpy()
    return df


def performance_table(n_splits: int, models, traits=("t1",), ratio: float = 1.0, sigma_resid: float = 0.1,
                      model_effects=None, seed: int = 0, metric: str = "rmse") -> pd.DataFrame:
    """Long performance table with a known split-to-residual sd ratio.

    ``value = mu + model effect + split effect + noise`` with split effects of
    sd ``ratio * sigma_resid`` shared by every model and trait of a split.
    """
    rng = np.random.default_rng(seed)
    models = list(models)
    effects = np.zeros(len(models)) if model_effects is None else np.asarray(model_effects, dtype=float)
    split_eff = rng.normal(scale=ratio * sigma_resid, size=n_splits)
    rows = []
    for s in range(n_splits):
        for t in traits:
            for m, eff in zip(models, effects):
                rows.append((s, m, t, metric, 1.0 + eff + split_eff[s] + sigma_resid * rng.normal()))
    return pd.DataFrame(rows, columns=["split_id", "model_id", "trait_id", "metric", "value"])
