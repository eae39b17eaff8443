"""Regenerate the checked-in fixture corpus and external data files.

Run from this directory: ``python make_fixtures.py``. Output is fully
determined by the fixed seed below.
"""
from __future__ import annotations

import csv
import json
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

SEED = 20200301
HERE = Path(__file__).parent
DATA = HERE / "data"

# state fips -> (usps, number of ordinary counties)
STATES = {"17": 20, "55": 20, "36": 5}
NYC_BOROUGHS = ("36005", "36047", "36061", "36081", "36085")
OUTLETS = (("riverton-ledger", "17031", "IL"), ("lakeside-courier", "55025", "WI"))

COVID_SENTENCES = {
    "masks": [
        "Health officials urged residents to wear a mask in every indoor public space.",
        "Stores began requiring masks at the door and limiting the number of shoppers.",
        "The county mask order was extended after coronavirus cases climbed again.",
        "Volunteers handed out cloth masks and hand sanitizer at the farmers market.",
    ],
    "testing": [
        "A new drive-through testing site opened at the fairgrounds on Monday.",
        "The health department reported more positive covid-19 tests this week.",
        "Testing capacity doubled as the state lab processed thousands of samples.",
        "Residents with symptoms of the coronavirus can schedule a free test online.",
    ],
    "economy": [
        "Small businesses applied for pandemic relief loans as sales collapsed.",
        "Unemployment claims surged after restaurants closed dining rooms during the pandemic.",
        "The chamber of commerce surveyed owners about the lockdown and reopening plans.",
        "Workers who lost jobs because of covid waited weeks for unemployment benefits.",
    ],
}
LOCAL_SENTENCES = {
    "sports": [
        "The varsity football team won its conference opener with a late touchdown.",
        "The coach praised the defense after the basketball team beat its rival.",
        "Fans packed the bleachers to watch the baseball championship game.",
        "The track team set a school record in the relay at the regional meet.",
    ],
    "council": [
        "The city council approved the budget after a long debate over road repairs.",
        "Aldermen voted to rezone the lot on Main Street for new housing.",
        "The mayor proposed raising property taxes to fund the library expansion.",
        "Residents spoke at the council meeting about the new water treatment plant.",
    ],
    "weather": [
        "A line of thunderstorms knocked out power to several neighborhoods overnight.",
        "Forecasters expect heavy snow and strong wind through the weekend.",
        "The river crested below flood stage after a week of steady rain.",
        "Farmers welcomed the warm weather and dry fields for spring planting.",
    ],
}
FILLER = [
    "Officials said more information would be released later this week.",
    "Readers can find updates on the newspaper website and in the weekend edition.",
    "The report was compiled from interviews and public records.",
]


def _article_text(rng, is_covid: bool, covid_theme: str, local_theme: str) -> list[str]:
    pool = COVID_SENTENCES[covid_theme] if is_covid else LOCAL_SENTENCES[local_theme]
    n = int(rng.integers(4, 7))
    paras = [pool[int(rng.integers(len(pool)))] + " " + pool[int(rng.integers(len(pool)))] for _ in range(n)]
    paras.append(FILLER[int(rng.integers(len(FILLER)))])
    return paras


def make_articles(rng) -> list[dict]:
    start = datetime(2020, 3, 2, 9, 0, tzinfo=timezone.utc)
    articles = []
    for o, (oid, _, _) in enumerate(OUTLETS):
        for i in range(100):
            published = start + timedelta(days=int(2.3 * i) + o, hours=int(rng.integers(0, 8)))
            week_frac = i / 100
            # coverage share falls from about 0.7 to 0.25 over the period
            p_covid = 0.7 - 0.45 * week_frac + (0.05 if o == 0 else -0.05)
            is_covid = bool(rng.random() < p_covid)
            covid_theme = ("masks", "testing", "economy")[int(rng.integers(3))]
            local_theme = ("sports", "council", "weather")[int(rng.integers(3))]
            paras = _article_text(rng, is_covid, covid_theme, local_theme)
            title = (paras[0].split(".")[0])[:60]
            articles.append({
                "outlet_id": oid, "path": f"/{oid}/news/{i:03d}.html", "title": title,
                "published": published.isoformat(), "paragraphs": paras,
                "planted_covid": is_covid,
            })
    return articles


def _counties():
    out = []
    for st, n in STATES.items():
        for j in range(n):
            out.append(f"{st}{(2 * j + 1):03d}")
    for o in OUTLETS:
        if o[1] not in out:
            out.append(o[1])
    return sorted(set(out) | set(NYC_BOROUGHS))


def make_external(rng):
    counties = _counties()
    pops = {f: int(rng.integers(20_000, 900_000)) for f in counties}
    with open(DATA / "population.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "pop_2019"])
        for f in counties:
            w.writerow([f, pops[f]])

    for year, other in ((2020, "votes_biden"), (2016, "votes_clinton")):
        with open(DATA / f"votes_{year}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fips", "votes_trump", other])
            for f in counties:
                total = pops[f] // 2
                base = 0.35 + 0.3 * ((int(f[2:]) * 37) % 100) / 100
                share = base + (0.01 if year == 2020 else 0.0) + rng.normal(0, 0.01)
                w.writerow([f, int(total * share), total - int(total * share)])

    with open(DATA / "cre.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "pct_0", "pct_1_2", "pct_3plus"])
        for f in counties:
            r3 = round(float(rng.uniform(15, 30)), 1)
            r12 = round(float(rng.uniform(35, 50)), 1)
            w.writerow([f, round(100 - r3 - r12, 1), r12, r3])

    with open(DATA / "ranks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outlet_id", "rank"])
        w.writerow([OUTLETS[0][0], 1200])
        w.writerow([OUTLETS[1][0], 45000])

    # NYT-style cumulative daily counts; NYC boroughs reported as one row
    day0, day1 = date(2020, 1, 21), date(2020, 12, 27)
    reporting = [f for f in counties if f not in NYC_BOROUGHS] + ["NYC"]
    onset = {g: day0 + timedelta(days=int(rng.integers(0, 70))) for g in reporting}
    cum = {g: [0, 0] for g in reporting}
    rows = []
    d = day0
    while d <= day1:
        for g in reporting:
            if d < onset[g]:
                continue
            pop = sum(pops[b] for b in NYC_BOROUGHS) if g == "NYC" else pops[g]
            lam = pop * 4e-5 * (1 + np.sin((d - day0).days / 40.0) ** 2)
            new_c = int(rng.poisson(lam))
            new_d = int(rng.poisson(lam * 0.02))
            cum[g][0] += new_c
            cum[g][1] += new_d
            cases = cum[g][0]
            if rng.random() < 0.01 and cases > 5:
                cases -= 3  # occasional downward revision
            if g == "NYC":
                rows.append([d.isoformat(), "New York City", "New York", "", cases, cum[g][1]])
            else:
                rows.append([d.isoformat(), f"County {g}", _state_name(g[:2]), g, cases, cum[g][1]])
        if d.day == 15:
            rows.append([d.isoformat(), "Unknown", "Illinois", "", 7, 0])
        d += timedelta(days=1)
    with open(DATA / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "county", "state", "fips", "cases", "deaths"])
        w.writerows(rows)


def _state_name(st):
    return {"17": "Illinois", "55": "Wisconsin", "36": "New York"}[st]


def main():
    DATA.mkdir(exist_ok=True)
    rng = np.random.default_rng(SEED)
    articles = make_articles(rng)
    with open(DATA / "articles.json", "w", encoding="utf-8") as fh:
        json.dump(articles, fh, indent=1, sort_keys=True)
        fh.write("\n")
    make_external(rng)
    with open(DATA / "registry_template.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outlet_id", "feed_url", "homepage_url", "county_fips", "state"])
        for oid, fips, st in OUTLETS:
            w.writerow([oid, "{base}/" + oid + "/feed.xml", "{base}/" + oid + "/", fips, st])
    with open(DATA / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["topic", "annotator", "label"])
        for t, (a, b) in enumerate([("covid", "covid"), ("non-covid", "non-covid"), ("covid", "covid"),
                                    ("non-covid", "covid"), ("covid", "covid"), ("non-covid", "non-covid")]):
            w.writerow([t, "a1", a])
            w.writerow([t, "a2", b])
        w.writerow([3, "final", "covid"])


if __name__ == "__main__":
    main()
