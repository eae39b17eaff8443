"""Cubic B-spline basis over time for topic prevalence."""
from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import InsufficientSpan


def spline_knots(x, df: int = 10, degree: int = 3) -> np.ndarray:
    """Clamped knot vector with interior knots at quantiles of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    if df < degree + 1:
        raise InsufficientSpan(f"df must be at least {degree + 1}")
    uniq = np.unique(x)
    if len(uniq) < df:
        raise InsufficientSpan(f"{len(uniq)} distinct values cannot support df={df}")
    lo, hi = uniq[0], uniq[-1]
    n_inner = df - degree - 1
    probs = np.linspace(0, 1, n_inner + 2)[1:-1]
    inner = np.quantile(x, probs)
    if n_inner and (inner[0] <= lo or inner[-1] >= hi or np.any(np.diff(inner) <= 0)):
        # heavy ties in x: place knots on the distinct values instead
        inner = np.quantile(uniq, probs)
    return np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])


class BSplineBasis(BaseEstimator, TransformerMixin):
    """Transform a time covariate into ``df`` B-spline columns that sum to one.

    Values outside the fitted range are clamped to the boundary.
    """

    def __init__(self, df=10, degree=3):
        self.df = df
        self.degree = degree

    def fit(self, x, y=None):
        self.knots_ = spline_knots(x, self.df, self.degree)
        return self

    def transform(self, x):
        check_is_fitted(self, "knots_")
        x = np.asarray(x, dtype=float).ravel()
        t = self.knots_
        x = np.clip(x, t[0], t[-1])
        return BSpline.design_matrix(x, t, self.degree).toarray()


def spline_basis(weeks, df: int = 10, degree: int = 3) -> np.ndarray:
    return BSplineBasis(df=df, degree=degree).fit_transform(weeks)
