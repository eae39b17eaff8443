"""Grouped binomial logit with outlet fixed effects.

The estimator follows the scikit-learn protocol; :func:`fit` wraps it for
panel frames produced by :mod:`newspulse.panel` and returns a :class:`GlmFit`
carrying coefficients, outlet-clustered covariance and fit statistics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit, gammaln
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import RankDeficient, Separation, SingularInformation
from .panel import COVARIATES, lag_covariates

LAGS = ("none", "cases", "deaths", "both")


# ---------------------------------------------------------------- likelihood pieces

def log_binom_coef(n, y):
    return gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)


def binomial_loglik(eta, y, n) -> float:
    """Grouped binomial log-likelihood at linear predictor ``eta``, constants included."""
    ll = y * eta - n * np.logaddexp(0.0, eta) + log_binom_coef(n, y)
    return float(ll.sum())


def null_loglik(y, n) -> float:
    """Intercept-only grouped binomial log-likelihood."""
    p0 = y.sum() / n.sum()
    return binomial_loglik(np.full(len(y), math.log(p0 / (1 - p0))), y, n)


def _dummies(codes: np.ndarray, n_groups: int) -> np.ndarray:
    d = np.zeros((len(codes), n_groups))
    d[np.arange(len(codes)), codes] = 1.0
    return d


def sandwich(design: np.ndarray, info: np.ndarray, scores: np.ndarray, clusters,
             small_sample: bool = True) -> np.ndarray:
    """Cluster-robust covariance ``A^-1 B A^-1``.

    ``scores`` holds one row per observation; they are summed within each
    cluster to form ``B``. With ``small_sample`` the result is scaled by
    ``G / (G - 1)`` for ``G`` clusters.
    """
    _, codes = np.unique(np.asarray(clusters), return_inverse=True)
    n_clusters = codes.max() + 1
    g = np.zeros((n_clusters, scores.shape[1]))
    np.add.at(g, codes, scores)
    meat = g.T @ g
    try:
        cho = linalg.cho_factor(info)
        bread = linalg.cho_solve(cho, np.eye(info.shape[0]))
    except linalg.LinAlgError as exc:
        raise SingularInformation(str(exc)) from exc
    v = bread @ meat @ bread
    v = (v + v.T) / 2
    if small_sample:
        if n_clusters < 2:
            # a single cluster carries no information about between-cluster spread
            warnings.warn("clustered covariance needs at least 2 clusters", RuntimeWarning, stacklevel=2)
            return np.full_like(v, np.nan)
        v *= n_clusters / (n_clusters - 1)
    return v


# ---------------------------------------------------------------- estimator

class FixedEffectsLogit(BaseEstimator):
    """Logit for (successes, trials) data with one intercept per group.

    Group intercepts enter as explicit dummy columns and are solved jointly
    with the slopes by iteratively reweighted least squares. Each Newton step
    is halved (up to ``max_halving`` times) until the log-likelihood does not
    decrease.

    Parameters
    ----------
    tol : float
        Convergence threshold on the largest absolute coefficient change.
    max_iter : int
    max_halving : int
    separation_tol : float
        A group whose fitted probabilities all lie within this distance of
        0 or 1 is reported as separated.
    """

    def __init__(self, tol=1e-8, max_iter=100, max_halving=10, separation_tol=1e-10):
        self.tol = tol
        self.max_iter = max_iter
        self.max_halving = max_halving
        self.separation_tol = separation_tol

    def _design(self, X, codes):
        return np.hstack([X, _dummies(codes, len(self.groups_))])

    def fit(self, X, y, trials, groups, feature_names=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        y = np.asarray(y, dtype=float)
        n = np.asarray(trials, dtype=float)
        groups = np.asarray(groups)
        if not (len(y) == len(n) == len(groups) == X.shape[0]):
            raise ValueError("X, y, trials and groups must have the same length")
        if np.any(n < 1) or np.any(y < 0) or np.any(y > n):
            raise ValueError("need 0 <= y <= trials and trials >= 1")
        self.groups_, codes = np.unique(groups, return_inverse=True)
        n_groups = len(self.groups_)
        sizes = np.bincount(codes, minlength=n_groups)
        if np.any(sizes < 2):
            raise ValueError(f"groups with fewer than 2 rows: {list(self.groups_[sizes < 2])}")
        self.feature_names_in_ = np.asarray(feature_names if feature_names is not None
                                            else [f"x{j}" for j in range(X.shape[1])], dtype=object)
        self.n_features_in_ = X.shape[1]

        y_g = np.bincount(codes, weights=y, minlength=n_groups)
        n_g = np.bincount(codes, weights=n, minlength=n_groups)
        for gi in np.flatnonzero((y_g == 0) | (y_g == n_g)):
            raise Separation(self.groups_[gi])

        D = self._design(X, codes)
        self._check_rank(D)

        share = np.clip(y_g / n_g, 1e-6, 1 - 1e-6)
        coef = np.concatenate([np.zeros(X.shape[1]), np.log(share / (1 - share))])
        ll = binomial_loglik(D @ coef, y, n)
        trace = [ll]
        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            p = expit(D @ coef)
            w = n * p * (1 - p)
            score = D.T @ (y - n * p)
            info = D.T @ (w[:, None] * D)
            try:
                step = linalg.solve(info, score, assume_a="pos")
            except linalg.LinAlgError as exc:
                raise SingularInformation(str(exc)) from exc
            t = 1.0
            for _ in range(self.max_halving + 1):
                cand = coef + t * step
                ll_cand = binomial_loglik(D @ cand, y, n)
                if ll_cand >= ll:
                    break
                t /= 2
            else:
                # no ascent possible at this precision: we are at the optimum
                cand, ll_cand = coef, ll
            delta = np.max(np.abs(cand - coef))
            coef, ll = cand, ll_cand
            trace.append(ll)
            if delta < self.tol:
                converged = True
                break

        eta = D @ coef
        p = expit(eta)
        for gi in range(n_groups):
            pg = p[codes == gi]
            if np.all(pg < self.separation_tol) or np.all(pg > 1 - self.separation_tol):
                raise Separation(self.groups_[gi])

        k = X.shape[1]
        self.coef_ = coef[:k]
        self.fe_ = coef[k:]
        self.loglik_ = ll
        self.loglik_trace_ = np.asarray(trace)
        self.n_iter_ = it
        self.converged_ = converged
        self.n_obs_ = len(y)
        self.fitted_ = p
        w = n * p * (1 - p)
        self.information_ = D.T @ (w[:, None] * D)
        self._design_ = D
        self._y, self._n, self._codes = y, n, codes
        self.vcov_full_ = sandwich(D, self.information_, self.scores(), codes)
        self.vcov_ = self.vcov_full_[:k, :k]
        return self

    def _check_rank(self, D):
        rank = np.linalg.matrix_rank(D)
        if rank < D.shape[1]:
            _, _, piv = linalg.qr(D, mode="economic", pivoting=True)
            names = list(self.feature_names_in_) + [f"fe[{g}]" for g in self.groups_]
            raise RankDeficient(sorted(names[j] for j in piv[rank:]))

    def scores(self) -> np.ndarray:
        """Per-observation score contributions ``x_i (y_i - n_i p_i)``."""
        check_is_fitted(self, "coef_")
        return self._design_ * (self._y - self._n * self.fitted_)[:, None]

    def clustered_vcov(self, clusters=None, small_sample=True) -> np.ndarray:
        """Slope covariance clustered on ``clusters`` (default: the fixed-effect groups)."""
        check_is_fitted(self, "coef_")
        clusters = self._codes if clusters is None else clusters
        full = sandwich(self._design_, self.information_, self.scores(), clusters, small_sample)
        k = self.n_features_in_
        return full[:k, :k]

    def decision_function(self, X, groups):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        idx = np.searchsorted(self.groups_, np.asarray(groups))
        if np.any(idx >= len(self.groups_)) or np.any(self.groups_[np.minimum(idx, len(self.groups_) - 1)] != groups):
            raise ValueError("unknown group in input")
        return X @ self.coef_ + self.fe_[idx]

    def predict_proba(self, X, groups):
        return expit(self.decision_function(X, groups))


# ---------------------------------------------------------------- panel-level API

@dataclass(frozen=True)
class ModelSpec:
    name: str
    covariates: tuple = COVARIATES
    lag: str = "none"
    filter: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if "weeks_since_2020" not in self.covariates:
            raise ValueError("weeks_since_2020 must be among the covariates")
        unknown = set(self.covariates) - set(COVARIATES)
        if unknown:
            raise ValueError(f"unknown covariates {sorted(unknown)}")
        if self.lag not in LAGS:
            raise ValueError(f"lag must be one of {LAGS}")
        if self.filter not in ("full", "limited"):
            raise ValueError("filter must be 'full' or 'limited'")

    def lagged(self) -> set:
        from .panel import LAG_GROUPS
        return set(LAG_GROUPS.get(self.lag, ())) & set(self.covariates)


_NO_STATE = tuple(c for c in COVARIATES if not c.endswith("_state"))
_NO_COUNTY = tuple(c for c in COVARIATES if not c.endswith("_county"))
_CASES = tuple(c for c in COVARIATES if not c.startswith("deaths"))

NAMED_MODELS = {
    "model1": ModelSpec("model1"),
    "model2": ModelSpec("model2", filter="limited"),
    "no_state": ModelSpec("no_state", _NO_STATE),
    "no_county": ModelSpec("no_county", _NO_COUNTY),
    "lag_both": ModelSpec("lag_both", lag="both"),
    "lag_cases": ModelSpec("lag_cases", lag="cases"),
    "lag_deaths": ModelSpec("lag_deaths", lag="deaths"),
}


@dataclass
class GlmFit:
    spec: ModelSpec
    beta: pd.Series
    fe: pd.Series
    vcov_clustered: pd.DataFrame
    loglik: float
    loglik_null: float
    bic: float
    squared_correlation: float
    pseudo_r2: float
    n_obs: int
    converged: bool
    iterations: int
    model: Optional[FixedEffectsLogit] = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        return len(self.beta) + len(self.fe)

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.vcov_clustered.to_numpy())), index=self.beta.index)

    def coef_table(self) -> pd.DataFrame:
        se = self.se
        z = self.beta / se
        p = 2 * stats.norm.sf(np.abs(z))
        q = stats.norm.ppf(0.975)
        return pd.DataFrame({
            "coef": self.beta, "se": se, "z": z, "p": p,
            "odds_change": odds_change(self.beta.to_numpy()),
            "odds_low": odds_change((self.beta - q * se).to_numpy()),
            "odds_high": odds_change((self.beta + q * se).to_numpy()),
            "linear_pct": 100 * self.beta, "linear_pct_se": 100 * se,
        })


def fit_stats(y, n, fitted, loglik, n_params):
    """Squared correlation, McFadden pseudo R-squared and BIC."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    obs = y / n
    if np.ptp(obs) == 0 or np.ptp(fitted) == 0:
        r = float("nan")
    else:
        r = np.corrcoef(obs, fitted)[0, 1]
    ll0 = null_loglik(y, n)
    return {
        "squared_correlation": float(r * r),
        "pseudo_r2": float(1.0 - loglik / ll0),
        "bic": float(-2.0 * loglik + n_params * math.log(len(y))),
        "loglik_null": ll0,
    }


def fit(rows: pd.DataFrame, spec: ModelSpec, **kwargs) -> GlmFit:
    """Fit one model specification to an (unlagged) outlet-week panel."""
    if spec.lag != "none":
        rows, _ = lag_covariates(rows, spec.lag)
    cols = list(spec.covariates)
    model = FixedEffectsLogit(**kwargs).fit(
        rows[cols].to_numpy(), rows["covid_count"].to_numpy(), trials=rows["total_count"].to_numpy(),
        groups=rows["outlet_id"].to_numpy(), feature_names=cols)
    n_params = len(cols) + len(model.groups_)
    st = fit_stats(rows["covid_count"], rows["total_count"], model.fitted_, model.loglik_, n_params)
    return GlmFit(
        spec=spec,
        beta=pd.Series(model.coef_, index=cols),
        fe=pd.Series(model.fe_, index=model.groups_),
        vcov_clustered=pd.DataFrame(model.vcov_, index=cols, columns=cols),
        loglik=model.loglik_, loglik_null=st["loglik_null"], bic=st["bic"],
        squared_correlation=st["squared_correlation"], pseudo_r2=st["pseudo_r2"],
        n_obs=model.n_obs_, converged=model.converged_, iterations=model.n_iter_, model=model,
    )


def clustered_vcov(fit_or_model, clusters=None, small_sample=True) -> np.ndarray:
    model = fit_or_model.model if isinstance(fit_or_model, GlmFit) else fit_or_model
    return model.clustered_vcov(clusters, small_sample)


def odds_change(beta):
    """Relative change in odds for a one-unit (one SD) covariate increase."""
    return np.expm1(beta)


def centered_fe(fit_or_fe) -> pd.Series:
    """Fixed effects as multipliers relative to the average outlet."""
    fe = fit_or_fe.fe if isinstance(fit_or_fe, GlmFit) else pd.Series(fit_or_fe)
    return np.exp(fe - fe.mean())


def compare_models(fits: Iterable[GlmFit]) -> pd.DataFrame:
    """Fit summaries ordered by BIC, fewer parameters first on ties."""
    rows = [{"model": f.spec.name, "filter": f.spec.filter, "lag": f.spec.lag, "n_obs": f.n_obs,
             "n_params": f.n_params, "loglik": f.loglik, "bic": f.bic,
             "squared_correlation": f.squared_correlation, "pseudo_r2": f.pseudo_r2}
            for f in fits]
    df = pd.DataFrame(rows, columns=["model", "filter", "lag", "n_obs", "n_params", "loglik", "bic",
                                     "squared_correlation", "pseudo_r2"])
    return df.sort_values(["bic", "n_params", "model"], kind="mergesort").reset_index(drop=True)


# ---------------------------------------------------------------- tables

VARIABLE_LABELS = {
    "weeks_since_2020": "Weeks Since 1/1/20",
    "cases_country": "N. Cases Country-level",
    "cases_county": "N. Cases County-level",
    "cases_state": "N. Cases State-level",
    "deaths_country": "N. Deaths Country-level",
    "deaths_state": "N. Deaths State-level",
    "deaths_county": "N. Deaths County-level",
}
_ROW_ORDER = ("weeks_since_2020", "cases_country", "cases_county", "cases_state",
              "deaths_country", "deaths_state", "deaths_county")


def _stars(p):
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def regression_table(fits: Sequence[GlmFit], notes: Sequence[str] = ()) -> str:
    """Plain-text side-by-side coefficient table with clustered SEs.

    ``notes`` are appended verbatim as footnote lines.
    """
    rows = []
    for var in _ROW_ORDER:
        for lagged in (False, True):
            if not any(var in f.beta.index and (var in f.spec.lagged()) == lagged for f in fits):
                continue
            label = VARIABLE_LABELS[var] + (" (Lag 1)" if lagged else "")
            coef_cells, se_cells = [], []
            for f in fits:
                if var in f.beta.index and (var in f.spec.lagged()) == lagged:
                    tab = f.coef_table().loc[var]
                    coef_cells.append(f"{tab['coef']:.4f}{_stars(tab['p'])}")
                    se_cells.append(f"({tab['se']:.4f})")
                else:
                    coef_cells.append("")
                    se_cells.append("")
            rows.append([label] + coef_cells)
            rows.append([""] + se_cells)
    header = [["Keyword Filter:"] + [f.spec.filter.capitalize() for f in fits],
              ["Model:"] + [f"({i + 1}) {f.spec.name}" for i, f in enumerate(fits)]]
    footer = [["Fixed-effects: outlet"] + ["Yes"] * len(fits),
              ["Observations"] + [f"{f.n_obs:,}" for f in fits],
              ["Squared Correlation"] + [f"{f.squared_correlation:.5f}" for f in fits],
              ["Pseudo R2"] + [f"{f.pseudo_r2:.4f}" for f in fits],
              ["BIC"] + [f"{f.bic:,.1f}" for f in fits]]
    table = header + [None] + rows + [None] + footer
    width = [max(len(r[j]) for r in table if r is not None) for j in range(len(fits) + 1)]
    rule = "-" * (sum(width) + 2 * len(fits))
    lines = []
    for r in table:
        if r is None:
            lines.append(rule)
            continue
        lines.append("  ".join([r[0].ljust(width[0])] + [c.rjust(width[j + 1]) for j, c in enumerate(r[1:])]))
    lines.append(rule)
    lines.append("One-way (outlet) clustered standard errors in parentheses")
    lines.append("Signif. codes: ***: 0.01, **: 0.05, *: 0.1")
    lines.extend(notes)
    return "\n".join(lines) + "\n"


def coefficients_frame(fits: Sequence[GlmFit]) -> pd.DataFrame:
    frames = []
    for f in fits:
        t = f.coef_table().reset_index().rename(columns={"index": "variable"})
        t.insert(0, "model", f.spec.name)
        frames.append(t)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
