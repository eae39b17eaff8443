"""County linkage: epidemic series, aggregation and audience covariates.

Epidemic series are long DataFrames with columns
``geo_id, week, new_cases, new_deaths`` (plus ``population`` once attached).
County geo ids are 5-digit FIPS strings, except the five New York City
boroughs, which share the synthetic id ``"NYC"`` as in the source case data.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .corpus import WEEK_ZERO
from .errors import InvalidPopulation, MissingCounty, ParseError, SchemaError

NYC_ID = "NYC"
NYC_FIPS = ("36005", "36047", "36061", "36081", "36085")
US_ID = "US"

STATE_FIPS = {
    "01": "AL", "02": "AK", "04": "AZ", "05": "AR", "06": "CA", "08": "CO", "09": "CT",
    "10": "DE", "11": "DC", "12": "FL", "13": "GA", "15": "HI", "16": "ID", "17": "IL",
    "18": "IN", "19": "IA", "20": "KS", "21": "KY", "22": "LA", "23": "ME", "24": "MD",
    "25": "MA", "26": "MI", "27": "MN", "28": "MS", "29": "MO", "30": "MT", "31": "NE",
    "32": "NV", "33": "NH", "34": "NJ", "35": "NM", "36": "NY", "37": "NC", "38": "ND",
    "39": "OH", "40": "OK", "41": "OR", "42": "PA", "44": "RI", "45": "SC", "46": "SD",
    "47": "TN", "48": "TX", "49": "UT", "50": "VT", "51": "VA", "53": "WA", "54": "WV",
    "55": "WI", "56": "WY", "60": "AS", "66": "GU", "69": "MP", "72": "PR", "78": "VI",
}

CASE_COLUMNS = ("date", "county", "state", "fips", "cases", "deaths")
SHARE_CLIP = (0.001, 0.999)


def county_geo(fips: str) -> str:
    """Epidemic geo id for a county FIPS code."""
    return NYC_ID if fips in NYC_FIPS else fips


def state_of(geo_id: str) -> str:
    if geo_id == NYC_ID:
        return "NY"
    try:
        return STATE_FIPS[geo_id[:2]]
    except KeyError:
        raise ParseError(f"unknown state FIPS prefix in {geo_id!r}") from None


def log_rate_per_1000(count, population):
    """``ln(1 + 1000 * count / population)``; works elementwise on arrays."""
    pop = np.asarray(population, dtype=float)
    if np.any(~(pop > 0)):
        raise InvalidPopulation(f"population must be positive, got {population!r}")
    cnt = np.asarray(count, dtype=float)
    if np.any(cnt < 0):
        raise ValueError("count must be non-negative")
    out = np.log1p(1000.0 * cnt / pop)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- case data

def _read_csv(path, required, dtype=None) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=dtype, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    return df


def load_case_data(path) -> pd.DataFrame:
    """Weekly new cases and deaths per county from cumulative daily counts.

    Daily cumulatives are differenced per county (the first report counts as
    all new), negative corrections clipped to zero and the result summed into
    weeks counted from 2020-01-01. Each county's weeks run contiguously from
    the first week in the file to its last report, zero-filled before its
    first report. Rows lacking a FIPS code are dropped, apart from
    "New York City", which becomes geo id ``NYC``.
    """
    df = _read_csv(path, CASE_COLUMNS, dtype=str)
    records = []
    for i, row in enumerate(df.itertuples(index=False), start=2):
        county, fips = row.county.strip(), row.fips.strip()
        if county == "New York City":
            geo = NYC_ID
        elif fips:
            if not fips.isdigit():
                raise ParseError(f"bad fips {fips!r}", line=i)
            geo = county_geo(fips.zfill(5))
        else:
            continue
        try:
            date = pd.Timestamp(row.date.strip(), tz="UTC")
            cases = float(row.cases) if row.cases.strip() else 0.0
            deaths = float(row.deaths) if row.deaths.strip() else 0.0
        except ValueError as exc:
            raise ParseError(str(exc), line=i) from None
        if date < WEEK_ZERO:
            raise ParseError(f"date {row.date} precedes 2020-01-01", line=i)
        records.append((geo, date, cases, deaths))
    if not records:
        return pd.DataFrame(columns=["geo_id", "week", "new_cases", "new_deaths"])

    daily = pd.DataFrame(records, columns=["geo_id", "date", "cases", "deaths"])
    daily = daily.groupby(["geo_id", "date"], as_index=False)[["cases", "deaths"]].sum()
    daily = daily.sort_values(["geo_id", "date"])
    g = daily.groupby("geo_id")
    for col, new in (("cases", "new_cases"), ("deaths", "new_deaths")):
        diff = g[col].diff()
        diff = diff.fillna(daily[col])
        daily[new] = diff.clip(lower=0)
    daily["week"] = ((daily["date"] - pd.Timestamp(WEEK_ZERO)).dt.days // 7).astype(int)
    weekly = daily.groupby(["geo_id", "week"], as_index=False)[["new_cases", "new_deaths"]].sum()

    first_week = int(weekly["week"].min())
    frames = []
    for geo, part in weekly.groupby("geo_id", sort=True):
        weeks = pd.RangeIndex(first_week, int(part["week"].max()) + 1, name="week")
        part = part.set_index("week")[["new_cases", "new_deaths"]].reindex(weeks, fill_value=0.0)
        part = part.reset_index()
        part.insert(0, "geo_id", geo)
        frames.append(part)
    return pd.concat(frames, ignore_index=True)


def load_population(path) -> dict[str, float]:
    """``fips,pop_2019`` → county populations, with an ``NYC`` total added."""
    df = _read_csv(path, ("fips", "pop_2019"), dtype=str)
    pops = {}
    for i, row in enumerate(df.itertuples(index=False), start=2):
        try:
            pops[row.fips.strip().zfill(5)] = float(row.pop_2019)
        except ValueError:
            raise ParseError(f"bad population {row.pop_2019!r}", line=i) from None
    if all(f in pops for f in NYC_FIPS):
        pops[NYC_ID] = sum(pops[f] for f in NYC_FIPS)
    return pops


def attach_population(series: pd.DataFrame, populations: Mapping[str, float]) -> pd.DataFrame:
    """Add a ``population`` column; geos without a population are dropped."""
    out = series[series["geo_id"].isin(populations.keys())].copy()
    out["population"] = out["geo_id"].map(populations).astype(float)
    return out.reset_index(drop=True)


def aggregate_geo(county: pd.DataFrame, populations: Optional[Mapping[str, float]] = None):
    """Sum county series into state and national series.

    Returns ``(state, national)`` frames with the same columns as the input.
    Population of a state or the nation is the sum over its counties.
    """
    if "population" not in county.columns:
        if populations is None:
            raise ValueError("county populations required")
        county = attach_population(county, populations)
    county = county.copy()
    county["state"] = county["geo_id"].map(state_of)
    pop = county.drop_duplicates("geo_id")[["geo_id", "state", "population"]]
    state_pop = pop.groupby("state")["population"].sum()
    cols = ["new_cases", "new_deaths"]
    state = county.groupby(["state", "week"], as_index=False)[cols].sum()
    state = state.rename(columns={"state": "geo_id"})
    state["population"] = state["geo_id"].map(state_pop)
    nat = county.groupby("week", as_index=False)[cols].sum()
    nat.insert(0, "geo_id", US_ID)
    nat["population"] = pop["population"].sum()
    return state.reset_index(drop=True), nat.reset_index(drop=True)


# ---------------------------------------------------------------- profiles

@dataclass(frozen=True)
class OutletProfile:
    outlet_id: str
    county_fips: str
    trump_logodds_2020: float
    trump_share_2016: float
    log_population: float
    cre_risk0: float
    cre_risk12: float
    cre_risk3plus: float
    popularity: float

    def as_dict(self):
        return asdict(self)


AUDIENCE_VARIABLES = ("popularity", "trump_logodds_2020", "log_population", "cre_risk12", "cre_risk3plus")


def load_votes(path) -> dict[str, float]:
    """Two-party Trump share per county.

    Accepts ``fips,votes_trump,votes_biden`` or, for 2016 returns,
    ``fips,votes_trump,votes_clinton``.
    """
    df = _read_csv(path, ("fips", "votes_trump"), dtype=str)
    other = next((c for c in ("votes_biden", "votes_clinton") if c in df.columns), None)
    if other is None:
        raise SchemaError(f"{path}: need votes_biden or votes_clinton column")
    shares = {}
    for i, row in enumerate(df.itertuples(index=False), start=2):
        rec = row._asdict()
        try:
            t, o = float(rec["votes_trump"]), float(rec[other])
        except ValueError:
            raise ParseError("bad vote count", line=i) from None
        if t + o <= 0:
            continue
        shares[rec["fips"].strip().zfill(5)] = t / (t + o)
    return shares


def load_cre(path, tol: float = 0.5) -> dict[str, tuple[float, float, float]]:
    """``fips,pct_0,pct_1_2,pct_3plus``; each row must sum to 100 within ``tol``."""
    df = _read_csv(path, ("fips", "pct_0", "pct_1_2", "pct_3plus"), dtype=str)
    out = {}
    for i, row in enumerate(df.itertuples(index=False), start=2):
        try:
            vals = (float(row.pct_0), float(row.pct_1_2), float(row.pct_3plus))
        except ValueError:
            raise ParseError("bad percentage", line=i) from None
        if abs(sum(vals) - 100.0) > tol:
            raise ParseError(f"risk percentages sum to {sum(vals):.2f}, not 100", line=i)
        out[row.fips.strip().zfill(5)] = vals
    return out


def load_ranks(path) -> dict[str, float]:
    df = _read_csv(path, ("outlet_id", "rank"), dtype=str)
    out = {}
    for i, row in enumerate(df.itertuples(index=False), start=2):
        if not row.rank.strip():
            continue
        try:
            out[row.outlet_id.strip()] = float(row.rank)
        except ValueError:
            raise ParseError(f"bad rank {row.rank!r}", line=i) from None
    return out


def logodds(share: float) -> float:
    s = min(max(share, SHARE_CLIP[0]), SHARE_CLIP[1])
    return math.log(s / (1.0 - s))


def build_profile(outlet_id: str, county_fips: str, votes_2020: Mapping[str, float],
                  votes_2016: Mapping[str, float], populations: Mapping[str, float],
                  cre: Mapping[str, tuple], ranks: Mapping[str, float],
                  fallback_rank: Optional[float] = None) -> OutletProfile:
    """Join one outlet to its headquarters county.

    An outlet missing from ``ranks`` takes ``fallback_rank``, which defaults to
    the largest (least popular) rank in ``ranks``.
    """
    for table, name in ((populations, "population"), (cre, "CRE"), (votes_2020, "2020 votes"),
                        (votes_2016, "2016 votes")):
        if county_fips not in table:
            raise MissingCounty(outlet_id, county_fips, name)
    rank = ranks.get(outlet_id)
    if rank is None:
        rank = fallback_rank if fallback_rank is not None else max(ranks.values())
    if rank <= 0:
        raise ValueError(f"rank for {outlet_id!r} must be positive")
    r0, r12, r3 = cre[county_fips]
    return OutletProfile(
        outlet_id=outlet_id,
        county_fips=county_fips,
        trump_logodds_2020=logodds(votes_2020[county_fips]),
        trump_share_2016=float(votes_2016[county_fips]),
        log_population=math.log(populations[county_fips]),
        cre_risk0=r0, cre_risk12=r12, cre_risk3plus=r3,
        popularity=-math.log(rank),
    )


def build_profiles(outlets: Iterable[tuple[str, str]], votes_2020, votes_2016, populations, cre, ranks):
    """Profiles for ``(outlet_id, county_fips)`` pairs.

    Returns ``(profiles, exclusions)`` where exclusions maps outlets that could
    not be linked to a reason string. Missing ranks are imputed with the worst
    rank among the outlets being profiled.
    """
    outlets = list(outlets)
    present = [ranks[o] for o, _ in outlets if o in ranks]
    fallback = max(present) if present else (max(ranks.values()) if ranks else 1.0)
    profiles, exclusions = [], {}
    for oid, fips in outlets:
        if fips[:2] == "02":
            exclusions[oid] = "alaska"
            continue
        try:
            profiles.append(build_profile(oid, fips, votes_2020, votes_2016, populations, cre, ranks,
                                          fallback_rank=fallback))
        except MissingCounty as exc:
            exclusions[oid] = f"missing {exc.table} data"
    return profiles, exclusions


def profiles_frame(profiles: Iterable[OutletProfile]) -> pd.DataFrame:
    rows = [p.as_dict() for p in profiles]
    cols = list(OutletProfile.__dataclass_fields__)
    return pd.DataFrame(rows, columns=cols).set_index("outlet_id").sort_index()


def vote_share_correlation(votes_2020: Mapping[str, float], votes_2016: Mapping[str, float]) -> float:
    common = sorted(set(votes_2020) & set(votes_2016))
    a = np.array([votes_2020[f] for f in common])
    b = np.array([votes_2016[f] for f in common])
    return float(np.corrcoef(a, b)[0, 1])


def write_series(df: pd.DataFrame, path):
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
