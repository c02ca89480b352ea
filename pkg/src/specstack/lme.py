"""Linear mixed model with one random intercept, fitted by REML.

With ``V = I + gamma Z Z'`` (``Z`` the group indicator matrix) the REML
log-likelihood is profiled over ``beta`` and the residual variance, leaving a
one-dimensional search over ``gamma = sigma2_split / sigma2_resid``.  Group
blocks are compound-symmetric, so

    V_g^{-1} = I - gamma / (1 + gamma n_g) 11',   log|V_g| = log(1 + gamma n_g)

and every quantity reduces to per-group column sums.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, stats

LOG_GAMMA_RANGE = (-18.42, 18.42)  # about 1e-8 .. 1e8
GRID_POINTS = 97


class LmeError(ValueError):
    pass


@dataclass(frozen=True)
class LmeSpec:
    """``fixed`` lists factors and ``a:b`` interactions; the intercept is implicit."""

    response: str = "value"
    fixed: tuple[str, ...] = ("model_id",)
    random_intercept: str = "split_id"

    @property
    def factors(self) -> tuple[str, ...]:
        out = []
        for term in self.fixed:
            for f in term.split(":"):
                if f not in out:
                    out.append(f)
        return tuple(out)


def regression_spec(response: str = "value") -> LmeSpec:
    return LmeSpec(response, ("model_id", "trait_id", "model_id:trait_id"), "split_id")


@dataclass
class Design:
    X: np.ndarray
    columns: list[str]
    term_of_column: list[str]
    levels: dict[str, list]


def _levels(series: pd.Series) -> list:
    return list(dict.fromkeys(series.tolist()))


def _rows_for(df: pd.DataFrame, spec: LmeSpec, levels: dict[str, list]) -> tuple[np.ndarray, list, list]:
    """Reference-coded design rows for the records in ``df``."""
    n = len(df)
    cols, names, terms = [np.ones(n)], ["(Intercept)"], ["(Intercept)"]
    dummies = {}
    for f in spec.factors:
        vals = df[f].to_numpy()
        dummies[f] = [(lv, (vals == lv).astype(float)) for lv in levels[f][1:]]
    for term in spec.fixed:
        parts = term.split(":")
        for combo in itertools.product(*(dummies[p] for p in parts)):
            col = np.ones(n)
            for _, d in combo:
                col = col * d
            cols.append(col)
            names.append(":".join(f"{p}[{lv}]" for p, (lv, _) in zip(parts, combo)))
            terms.append(term)
    return np.column_stack(cols), names, terms


def build_design(df: pd.DataFrame, spec: LmeSpec) -> Design:
    levels = {f: _levels(df[f]) for f in spec.factors}
    X, names, terms = _rows_for(df, spec, levels)
    return Design(X, names, terms, levels)


def aliased_columns(X: np.ndarray, names: list[str], tol: float = 1e-9) -> list[str]:
    """Columns that lie in the span of the columns before them."""
    Q = np.zeros((X.shape[0], 0))
    out = []
    for j in range(X.shape[1]):
        v = X[:, j].astype(float)
        norm = np.linalg.norm(v)
        r = v - Q @ (Q.T @ v)
        r = r - Q @ (Q.T @ r)
        if norm == 0 or np.linalg.norm(r) <= tol * max(norm, 1.0):
            out.append(names[j])
        else:
            Q = np.column_stack([Q, r / np.linalg.norm(r)])
    return out


@dataclass
class LmeFit:
    spec: LmeSpec
    design: Design
    beta: np.ndarray
    cov_beta: np.ndarray
    sigma2_split: float
    sigma2_resid: float
    gamma: float
    reml_loglik: float
    n_obs: int
    n_groups: int
    df: int
    n_dropped: int = 0
    boundary: bool = False
    degenerate: bool = False
    data: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    @property
    def columns(self) -> list[str]:
        return self.design.columns


class _Profile:
    """Sufficient statistics for the profiled REML criterion."""

    def __init__(self, X, y, groups):
        # Column 0 is the intercept, so centring y only moves beta[0]; it
        # keeps the residual sums free of cancellation under large offsets.
        self.shift = float(np.mean(y))
        y = y - self.shift
        self.X, self.y = X, y
        self.codes, self.n_g = np.unique(groups, return_inverse=True, return_counts=True)[1:]
        G = np.zeros((len(self.n_g), len(y)))
        G[self.codes, np.arange(len(y))] = 1.0
        self.S = G @ X  # group column sums
        self.t = G @ y
        self.XtX, self.Xty = X.T @ X, X.T @ y
        self.N, self.p = X.shape

    def solve(self, gamma):
        """(beta on the centred scale, rss, M, log|M|)."""
        c = gamma / (1.0 + gamma * self.n_g)
        M = self.XtX - (self.S.T * c) @ self.S
        b = self.Xty - self.S.T @ (c * self.t)
        L = np.linalg.cholesky(M)
        beta = np.linalg.solve(M, b)
        r = self.y - self.X @ beta
        r_sum = np.bincount(self.codes, weights=r, minlength=len(self.n_g))
        rss = float(r @ r - np.sum(c * r_sum ** 2))
        logdet_M = 2.0 * float(np.sum(np.log(np.diag(L))))
        return beta, max(rss, 0.0), M, logdet_M

    def beta(self, gamma):
        out = self.solve(gamma)[0].copy()
        out[0] += self.shift
        return out

    def loglik(self, gamma):
        _, rss, _, logdet_M = self.solve(gamma)
        nu = self.N - self.p
        if rss <= 0:
            return np.inf
        logdet_V = float(np.sum(np.log1p(gamma * self.n_g)))
        return -0.5 * (nu * np.log(rss / nu) + logdet_V + logdet_M + nu * (1.0 + np.log(2 * np.pi)))

    def score(self, gamma):
        """Derivative of the profiled REML log-likelihood in gamma."""
        beta, rss, M, _ = self.solve(gamma)
        d = 1.0 + gamma * self.n_g
        r_sum = self.t - self.S @ beta  # per-group residual sums
        quad = float(np.sum(r_sum ** 2 / d ** 2))
        nu = self.N - self.p
        B = self.S.T / d
        tr_fixed = float(np.trace(np.linalg.solve(M, B @ B.T)))
        return -0.5 * (-nu * quad / rss + float(np.sum(self.n_g / d)) - tr_fixed)


def _optimize_gamma(prof: _Profile) -> tuple[float, float]:
    grid = np.linspace(*LOG_GAMMA_RANGE, GRID_POINTS)
    vals = np.array([prof.loglik(np.exp(g)) for g in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda g: -prof.loglik(np.exp(g)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    best_lg = float(res.x) if -res.fun >= vals[i] else float(grid[i])
    gamma = np.exp(best_lg)
    # polish on the analytic score when it brackets a root
    a, b = gamma * np.exp(-0.05), gamma * np.exp(0.05)
    try:
        sa, sb = prof.score(a), prof.score(b)
        if np.sign(sa) != np.sign(sb):
            root = optimize.brentq(prof.score, a, b, xtol=1e-14 * gamma, rtol=4 * np.finfo(float).eps)
            ll_g = prof.loglik(gamma)
            # the profile is flat at the optimum; compare up to rounding
            if prof.loglik(root) >= ll_g - 1e-10 * max(1.0, abs(ll_g)):
                gamma = root
    except (ValueError, np.linalg.LinAlgError):
        pass
    ll = prof.loglik(gamma)
    ll0 = prof.loglik(0.0)
    if ll0 >= ll or gamma < np.exp(LOG_GAMMA_RANGE[0]) * 1.0001:
        return 0.0, ll0
    return float(gamma), float(ll)


def fit_lme(table: pd.DataFrame, spec: LmeSpec = LmeSpec()) -> LmeFit:
    """REML fit of ``response ~ fixed + (1 | random_intercept)``.

    Rows with a missing response are dropped (the count is kept in
    ``n_dropped``).  Residual df = ``n - rank(X) - (groups - 1)``.
    """
    needed = [spec.response, spec.random_intercept, *spec.factors]
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise LmeError(f"table lacks column {missing[0]!r}")
    y_all = pd.to_numeric(table[spec.response], errors="coerce").to_numpy(dtype=float)
    keep = ~np.isnan(y_all)
    if np.any(np.isinf(y_all)):
        raise LmeError("response contains non-finite values")
    n_dropped = int((~keep).sum())
    if n_dropped:
        warnings.warn(f"dropped {n_dropped} rows with a missing response", stacklevel=2)
    df = table.loc[keep].reset_index(drop=True)
    y = y_all[keep]
    groups = df[spec.random_intercept].to_numpy()
    n_groups = len(np.unique(groups))
    if n_groups < 2:
        raise LmeError(f"grouping column {spec.random_intercept!r} needs at least 2 levels")
    design = build_design(df, spec)
    X = design.X
    alias = aliased_columns(X, design.columns)
    if alias:
        raise LmeError(f"rank-deficient fixed design; aliased columns: {', '.join(alias)}")
    N, p = X.shape
    dof = N - p - (n_groups - 1)
    if N - p < 1:
        raise LmeError("not enough observations for the fixed design")
    prof = _Profile(X, y, groups)
    _, rss0, _, _ = prof.solve(0.0)
    scale = max(float(np.abs(y).max()), 1.0)
    if rss0 <= (1e-13 * scale) ** 2 * N:
        cov = np.zeros((p, p))
        return LmeFit(spec, design, prof.beta(0.0), cov, 0.0, 0.0, 0.0, np.inf, N, n_groups, dof, n_dropped,
                      boundary=True, degenerate=True, data=df)
    gamma, ll = _optimize_gamma(prof)
    _, rss, M, _ = prof.solve(gamma)
    beta = prof.beta(gamma)
    sigma2 = rss / (N - p)
    cov = sigma2 * np.linalg.inv(M)
    cov = 0.5 * (cov + cov.T)
    return LmeFit(spec, design, beta, cov, gamma * sigma2, sigma2, gamma, ll, N, n_groups, dof, n_dropped,
                  boundary=gamma == 0.0, data=df)


def reml_profile(fit: LmeFit, gammas) -> np.ndarray:
    """Profiled REML log-likelihood of ``fit``'s data at the given ratios."""
    y = pd.to_numeric(fit.data[fit.spec.response]).to_numpy(dtype=float)
    prof = _Profile(fit.design.X, y, fit.data[fit.spec.random_intercept].to_numpy())
    return np.array([prof.loglik(float(g)) for g in np.atleast_1d(gammas)])


def variance_ratio(fit: LmeFit) -> float:
    """``sqrt(sigma2_split) / sqrt(sigma2_resid)``."""
    if fit.sigma2_resid <= 0:
        raise LmeError("residual variance is zero; the ratio is undefined")
    return float(np.sqrt(fit.sigma2_split) / np.sqrt(fit.sigma2_resid))


# -- effects and contrasts ------------------------------------------------------

@dataclass(frozen=True)
class EffectEstimate:
    cell: tuple
    estimate: float
    se: float
    lower: float
    upper: float


def _t_quantile(fit: LmeFit, level: float = 0.95) -> float:
    return float(stats.t.ppf(0.5 + level / 2, max(fit.df, 1)))


def cell_contrast(fit: LmeFit, cell: dict) -> np.ndarray:
    """Design-row average for a partial level assignment.

    Factors absent from ``cell`` are averaged over their levels with equal
    weights, so on balanced data the result is the raw marginal mean.
    """
    lv = fit.design.levels
    for f, v in cell.items():
        if f not in lv:
            raise LmeError(f"{f!r} is not a factor of the fitted model")
        if v not in lv[f]:
            raise LmeError(f"level {v!r} of {f!r} is outside the fitted design")
    free = [f for f in fit.spec.factors if f not in cell]
    combos = list(itertools.product(*(lv[f] for f in free))) or [()]
    rows = {f: [] for f in fit.spec.factors}
    for combo in combos:
        for f in fit.spec.factors:
            rows[f].append(cell[f] if f in cell else combo[free.index(f)])
    X, _, _ = _rows_for(pd.DataFrame(rows, index=range(len(combos))), fit.spec, lv)
    return X.mean(axis=0)


def effect_estimates(fit: LmeFit, factors: tuple[str, ...] | str = ("model_id",), level: float = 0.95,
                     cells=None) -> list[EffectEstimate]:
    """Estimated marginal means with t-based confidence intervals.

    ``factors`` names the cell factors (empty for the grand mean); every
    level combination is returned unless ``cells`` lists specific tuples.
    """
    if isinstance(factors, str):
        factors = (factors,)
    q = _t_quantile(fit, level)
    lv = fit.design.levels
    for f in factors:
        if f not in lv:
            raise LmeError(f"{f!r} is not a factor of the fitted model")
    wanted = list(itertools.product(*(lv[f] for f in factors))) if cells is None else [tuple(c) for c in cells]
    out = []
    for cell in wanted:
        L = cell_contrast(fit, dict(zip(factors, cell)))
        est = float(L @ fit.beta)
        se = float(np.sqrt(max(L @ fit.cov_beta @ L, 0.0)))
        out.append(EffectEstimate(cell, est, se, est - q * se, est + q * se))
    return out


def holm_adjust(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adj = np.maximum.accumulate(adj)
    out = np.empty(m)
    out[order] = adj
    return out


def posthoc_pairwise(fit: LmeFit, factor: str = "model_id", alpha: float = 0.05) -> pd.DataFrame:
    """All pairwise differences of marginal means with Holm-adjusted p-values."""
    lv = fit.design.levels.get(factor)
    if lv is None:
        raise LmeError(f"{factor!r} is not a factor of the fitted model")
    if len(lv) < 2:
        raise LmeError(f"factor {factor!r} has fewer than 2 levels")
    Ls = {v: cell_contrast(fit, {factor: v}) for v in lv}
    rows = []
    for a, b in itertools.combinations(lv, 2):
        L = Ls[a] - Ls[b]
        diff = float(L @ fit.beta)
        se = float(np.sqrt(max(L @ fit.cov_beta @ L, 0.0)))
        if se > 0:
            t = diff / se
            p = float(2 * stats.t.sf(abs(t), max(fit.df, 1)))
        else:
            t, p = 0.0, 1.0
        rows.append({"level_a": a, "level_b": b, "difference": diff, "se": se, "t": t, "p_raw": p})
    df = pd.DataFrame(rows)
    df["p_holm"] = holm_adjust(df["p_raw"].to_numpy())
    df["significant"] = df["p_holm"] < alpha
    return df


@dataclass(frozen=True)
class WaldTest:
    term: str
    f_stat: float
    df_num: int
    df_den: int
    p_value: float


def wald_test(fit: LmeFit, term: str) -> WaldTest:
    """Wald F-type test that every coefficient of ``term`` is zero."""
    idx = [i for i, t in enumerate(fit.design.term_of_column) if t == term]
    if not idx:
        raise LmeError(f"term {term!r} has no columns in the fitted design")
    b = fit.beta[idx]
    C = fit.cov_beta[np.ix_(idx, idx)]
    q = len(idx)
    f = float(b @ np.linalg.solve(C, b)) / q
    den = max(fit.df, 1)
    return WaldTest(term, f, q, den, float(stats.f.sf(f, q, den)))
