"""Outlet-week analysis panel with standardized epidemic covariates."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import CoverageGap, DegenerateColumn
from .geolink import US_ID, county_geo, log_rate_per_1000, state_of

logger = logging.getLogger(__name__)

RATE_COVARIATES = ("cases_county", "cases_state", "cases_country",
                   "deaths_county", "deaths_state", "deaths_country")
COVARIATES = ("weeks_since_2020",) + RATE_COVARIATES
PANEL_COLUMNS = ("outlet_id", "week", "covid_count", "total_count") + COVARIATES
LAG_GROUPS = {"cases": ("cases_county", "cases_state", "cases_country"),
              "deaths": ("deaths_county", "deaths_state", "deaths_country")}
LAG_GROUPS["both"] = LAG_GROUPS["cases"] + LAG_GROUPS["deaths"]


@dataclass(frozen=True)
class ScalingRecord:
    variable: str
    mean: float
    sd: float


def standardize(values, name: str = "x"):
    """Center and scale to unit sample SD (n - 1 denominator).

    Returns ``(z, ScalingRecord)``. A constant column raises
    :class:`DegenerateColumn` naming the variable.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError(f"standardizing {name!r} needs at least 2 values")
    mean = x.mean()
    sd = x.std(ddof=1)
    if not sd > 0 or np.ptp(x) == 0:
        raise DegenerateColumn(name)
    return (x - mean) / sd, ScalingRecord(name, float(mean), float(sd))


def combine_epi(*frames: pd.DataFrame) -> dict:
    """Index epidemic frames as ``{(geo_id, week): (cases, deaths, population)}``."""
    lookup = {}
    for df in frames:
        for geo, week, c, d, p in df[["geo_id", "week", "new_cases", "new_deaths", "population"]].itertuples(index=False):
            lookup[(str(geo), int(week))] = (float(c), float(d), float(p))
    return lookup


def _rates(lookup, geo, week):
    rec = lookup.get((geo, week))
    if rec is None:
        return None
    c, d, p = rec
    return log_rate_per_1000(c, p), log_rate_per_1000(d, p)


def build_panel(articles: Iterable, epi: Mapping, county_of: Mapping[str, str], filter_name: str = "full",
                outlets: Optional[Iterable[str]] = None):
    """Assemble one row per outlet-week with at least one article.

    Parameters
    ----------
    articles : iterable of StoredArticle (or a CorpusStore)
    epi : mapping from :func:`combine_epi` covering county, state and ``US`` geos
    county_of : outlet id -> headquarters county FIPS
    filter_name : ``"full"`` or ``"limited"``
    outlets : restrict to these outlet ids (the curated sample)

    Returns
    -------
    rows : DataFrame
        Panel columns plus ``raw_*`` (logged, unscaled) and ``lag_*`` (raw at
        week t-1) columns used by :func:`lag_covariates`.
    scalings : dict of ScalingRecord
    gaps : list of ``(outlet_id, week)`` dropped for missing epidemic data
    """
    if filter_name not in ("full", "limited"):
        raise ValueError(f"unknown filter {filter_name!r}")
    if hasattr(articles, "articles"):
        articles = articles.articles(outlets)
    keep = set(outlets) if outlets is not None else None
    counts: dict[tuple[str, int], list[int]] = {}
    for art in articles:
        if keep is not None and art.outlet_id not in keep:
            continue
        flag = art.is_covid_full if filter_name == "full" else art.is_covid_limited
        c = counts.setdefault((art.outlet_id, art.published_week), [0, 0])
        c[0] += int(flag)
        c[1] += 1

    records, gaps = [], []
    for (oid, week) in sorted(counts):
        y, n = counts[(oid, week)]
        fips = county_of.get(oid)
        if fips is None:
            gaps.append((oid, week))
            continue
        cgeo = county_geo(fips)
        geos = (cgeo, state_of(cgeo), US_ID)
        now = [_rates(epi, g, week) for g in geos]
        if any(r is None for r in now):
            gaps.append((oid, week))
            continue
        prev = [_rates(epi, g, week - 1) for g in geos]
        rec = {"outlet_id": oid, "week": week, "covid_count": y, "total_count": n,
               "raw_weeks_since_2020": float(week)}
        for level, r_now, r_prev in zip(("county", "state", "country"), now, prev):
            rec[f"raw_cases_{level}"], rec[f"raw_deaths_{level}"] = r_now
            rec[f"lag_cases_{level}"], rec[f"lag_deaths_{level}"] = r_prev if r_prev else (np.nan, np.nan)
        records.append(rec)
    if gaps:
        logger.warning("%d outlet-weeks lack epidemic data and were dropped", len(gaps))
        logger.debug("coverage gaps: %s", gaps)

    rows = pd.DataFrame.from_records(records)
    if rows.empty:
        raise CoverageGap("no outlet-week has both articles and epidemic data")
    rows, scalings = _standardize_rows(rows)
    return rows, scalings, gaps


def _standardize_rows(rows: pd.DataFrame):
    rows = rows.copy()
    scalings = {}
    for name in COVARIATES:
        z, rec = standardize(rows[f"raw_{name}"].to_numpy(), name)
        rows[name] = z
        scalings[name] = rec
    front = list(PANEL_COLUMNS)
    rest = [c for c in rows.columns if c not in front]
    return rows[front + rest].reset_index(drop=True), scalings


def lag_covariates(rows: pd.DataFrame, which: str):
    """Swap in week t-1 rates for the chosen covariate group.

    ``which`` is ``"cases"``, ``"deaths"`` or ``"both"``. The first observed
    week of each outlet is dropped, as is any row whose t-1 rate is missing;
    every covariate is then re-standardized over the remaining rows.
    Returns ``(rows, scalings)``.
    """
    if which not in LAG_GROUPS:
        raise ValueError(f"which must be one of {sorted(LAG_GROUPS)}")
    rows = rows.sort_values(["outlet_id", "week"]).copy()
    first = rows.groupby("outlet_id")["week"].transform("min")
    rows = rows[rows["week"] != first]
    for name in LAG_GROUPS[which]:
        rows[f"raw_{name}"] = rows[f"lag_{name}"]
    lagged = [f"raw_{n}" for n in LAG_GROUPS[which]]
    rows = rows.dropna(subset=lagged)
    return _standardize_rows(rows)


def export_panel(rows: pd.DataFrame, path):
    rows.loc[:, list(PANEL_COLUMNS)].to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def scalings_frame(scalings: Mapping[str, ScalingRecord]) -> pd.DataFrame:
    return pd.DataFrame([vars(s) for s in scalings.values()])
