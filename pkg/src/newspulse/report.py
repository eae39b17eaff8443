"""Derived analyses and output files: trends, correlations, regression tables.

All numeric output is written with fixed formatting so that reruns on the
same inputs produce byte-identical files, listed with their SHA-256 in
``manifest.txt``.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import CollinearProfiles, IoError, ZeroVariance
from .geolink import AUDIENCE_VARIABLES
from .glm import GlmFit, centered_fe, coefficients_frame, compare_models, regression_table

FLOAT_FORMAT = "%.10g"
COLLINEARITY_THRESHOLD = 0.6


@dataclass(frozen=True)
class CorrelationCell:
    variable: str
    target: str
    r: float
    p: float
    n: int


def pearson(x, y, variable: str = "x", target: str = "y") -> CorrelationCell:
    """Product-moment correlation with a two-sided t-test p-value (n-2 df)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    for name, s, v in ((variable, sxx, x), (target, syy, y)):
        # tolerate rounding noise around a constant column
        if s <= (1e-14 * max(1.0, float(np.abs(v).max()))) ** 2 * n:
            raise ZeroVariance(f"{name} has zero variance")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1 - r * r))
        p = float(2 * stats.t.sf(abs(t), n - 2))
    return CorrelationCell(variable, target, r, min(max(p, 0.0), 1.0), n)


# ---------------------------------------------------------------- trends

def loess(x, y, span: float = 0.75, at=None) -> np.ndarray:
    """Local linear regression with tricube weights.

    Each fit uses the ``ceil(span * n)`` nearest points; the bandwidth is the
    distance to the farthest of them (slightly widened so it keeps weight).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    at = x if at is None else np.asarray(at, dtype=float)
    n = len(x)
    q = min(n, max(3, int(math.ceil(span * n))))
    out = np.empty(len(at))
    for i, x0 in enumerate(at):
        d = np.abs(x - x0)
        h = np.partition(d, q - 1)[q - 1]
        h = h * (1 + 1e-10) if h > 0 else 1.0
        w = np.clip(1 - (d / h) ** 3, 0, None) ** 3
        sw = w.sum()
        xm = (w @ x) / sw
        ym = (w @ y) / sw
        sxx = w @ (x - xm) ** 2
        slope = (w @ ((x - xm) * (y - ym))) / sxx if sxx > 0 else 0.0
        out[i] = ym + slope * (x0 - xm)
    return out


def coverage_trend(weekly, span: float = 0.75) -> pd.DataFrame:
    """Smoothed weekly coverage share.

    ``weekly`` is a Series indexed by week (or a two-column frame ``week``,
    ``share``). Returns columns ``week``, ``share``, ``smoothed``.
    """
    if isinstance(weekly, pd.DataFrame):
        weekly = weekly.set_index("week")["share"]
    weekly = pd.Series(weekly).sort_index()
    if len(weekly) < 10:
        raise ValueError("need at least 10 weekly points")
    smooth = loess(weekly.index.to_numpy(float), weekly.to_numpy(float), span)
    return pd.DataFrame({"week": weekly.index.to_numpy(), "share": weekly.to_numpy(float), "smoothed": smooth})


def weekly_coverage(rows: pd.DataFrame) -> pd.Series:
    """Pooled share of pandemic articles per week from panel rows."""
    g = rows.groupby("week")[["covid_count", "total_count"]].sum()
    return (g["covid_count"] / g["total_count"]).rename("share")


# ---------------------------------------------------------------- correlations

def _standardized(frame: pd.DataFrame) -> pd.DataFrame:
    return (frame - frame.mean()) / frame.std(ddof=1)


def collinear_pairs(profiles: pd.DataFrame, variables: Sequence[str] = AUDIENCE_VARIABLES,
                    threshold: float = COLLINEARITY_THRESHOLD) -> list[tuple[str, str, float]]:
    """Profile variable pairs with |r| above ``threshold``; each one is warned about."""
    pairs = []
    for a, b in itertools.combinations(variables, 2):
        try:
            r = pearson(profiles[a], profiles[b], a, b).r
        except ZeroVariance:
            continue
        if abs(r) > threshold:
            pairs.append((a, b, r))
            warnings.warn(f"{a} and {b} correlate at r={r:.2f}; their separate associations are "
                          "not reliably distinguishable", CollinearProfiles, stacklevel=2)
    return pairs


def fe_audience_table(multipliers, profiles: pd.DataFrame, variables: Sequence[str] = AUDIENCE_VARIABLES,
                      target: str = "log_multiplier"):
    """Correlate log fixed-effect multipliers with each audience variable.

    Returns ``(cells, scatter)`` where ``scatter`` holds the log multipliers
    alongside the standardized profile columns for the shared outlets.
    """
    if isinstance(multipliers, GlmFit):
        multipliers = centered_fe(multipliers)
    mult = pd.Series(multipliers, dtype=float)
    common = sorted(set(mult.index) & set(profiles.index))
    logm = np.log(mult.loc[common])
    prof = _standardized(profiles.loc[common, list(variables)].astype(float))
    collinear_pairs(profiles.loc[common], variables)
    cells = [pearson(prof[v], logm, v, target) for v in variables]
    scatter = prof.copy()
    scatter.insert(0, target, logm.to_numpy())
    scatter.index.name = "outlet_id"
    return cells, scatter


@dataclass
class Heatmap:
    r: pd.DataFrame
    p: pd.DataFrame
    alpha: float

    @property
    def masked(self) -> pd.DataFrame:
        """Correlations with non-significant cells (p >= alpha) set to NaN."""
        return self.r.where(self.p < self.alpha)


def topic_audience_heatmap(shares: pd.DataFrame, profiles: pd.DataFrame,
                           variables: Sequence[str] = AUDIENCE_VARIABLES, alpha: float = 0.01) -> Heatmap:
    """Topic x audience-variable correlations across outlets.

    ``shares`` is outlets x topics (percent of each outlet's pandemic coverage);
    cells with p not strictly below ``alpha`` are masked.
    """
    common = sorted(set(shares.index) & set(profiles.index))
    r = pd.DataFrame(index=list(shares.columns), columns=list(variables), dtype=float)
    p = r.copy()
    for t in shares.columns:
        for v in variables:
            try:
                cell = pearson(shares.loc[common, t], profiles.loc[common, v], str(v), str(t))
                r.loc[t, v], p.loc[t, v] = cell.r, cell.p
            except ZeroVariance:
                r.loc[t, v], p.loc[t, v] = np.nan, 1.0
    return Heatmap(r, p, alpha)


def cells_frame(cells: Sequence[CorrelationCell]) -> pd.DataFrame:
    return pd.DataFrame([asdict(c) for c in cells], columns=["variable", "target", "r", "p", "n"])


# ---------------------------------------------------------------- files

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False):
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")


def _write_text(text: str, path: Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


MANIFEST_HEADER = "# sha256\tbytes\tpath\n"


def emit_tables(fits: Sequence[GlmFit] = (), trends: Optional[Mapping[str, pd.DataFrame]] = None,
                correlations: Optional[Mapping[str, object]] = None, outdir=".",
                notes: Sequence[str] = ()) -> list[tuple[str, str]]:
    """Write every analysis output under ``outdir`` and a hashed manifest.

    ``trends`` maps names to frames from :func:`coverage_trend`;
    ``correlations`` maps names to cell lists, :class:`Heatmap` objects or
    plain frames; ``notes`` are footnotes for the regression table. Returns ``[(relative path, sha256), ...]`` in manifest order.
    """
    out = Path(outdir)
    written = []
    try:
        for sub in ("tables", "trends", "correlations"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        fits = list(fits)
        if fits:
            _write_text(regression_table(fits, notes), out / "tables" / "regression.txt")
            _write_csv(coefficients_frame(fits), out / "tables" / "coefficients.csv")
            _write_csv(compare_models(fits), out / "tables" / "model_comparison.csv")
            fe = pd.DataFrame({f.spec.name: centered_fe(f) for f in fits})
            fe.index.name = "outlet_id"
            _write_csv(fe.sort_index(), out / "tables" / "fe_multipliers.csv", index=True)
            written += ["tables/regression.txt", "tables/coefficients.csv",
                        "tables/model_comparison.csv", "tables/fe_multipliers.csv"]
        for name, frame in sorted((trends or {}).items()):
            _write_csv(frame, out / "trends" / f"{name}.csv")
            written.append(f"trends/{name}.csv")
        for name, obj in sorted((correlations or {}).items()):
            if isinstance(obj, Heatmap):
                for part, frame in (("r", obj.r), ("p", obj.p), ("masked", obj.masked)):
                    rel = f"correlations/{name}_{part}.csv"
                    frame = frame.copy()
                    frame.index.name = "topic"
                    _write_csv(frame, out / rel, index=True)
                    written.append(rel)
                continue
            frame = obj if isinstance(obj, pd.DataFrame) else cells_frame(obj)
            rel = f"correlations/{name}.csv"
            _write_csv(frame, out / rel, index=frame.index.name is not None)
            written.append(rel)
        manifest = [(rel, _sha256(out / rel), (out / rel).stat().st_size) for rel in sorted(written)]
        _write_text(MANIFEST_HEADER + "".join(f"{h}\t{size}\t{rel}\n" for rel, h, size in manifest),
                    out / "manifest.txt")
    except OSError as exc:
        raise IoError(f"cannot write report output under {out}: {exc}") from exc
    return [(rel, h) for rel, h, _ in manifest]


def read_manifest(path) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        return [(parts[2], parts[0]) for parts in (line.rstrip("\n").split("\t") for line in fh)
                if parts[0] and not parts[0].startswith("#")]
