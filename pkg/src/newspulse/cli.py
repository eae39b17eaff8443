"""Command line front end: one subcommand per pipeline stage.

Every stage reads an INI-style config file (sections per stage, ``key = value``;
simple quoted TOML values are accepted too), lets command-line flags override
it, and prints one JSON run summary to standard error. Exit status is 0 on
success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import classify, corpus, geolink, glm, ingest, panel, report
from .errors import DataError
from . import topics as tp

logger = logging.getLogger("newspulse")

STORE_ENV = "NEWSPULSE_STORE"
STAGES = ("crawl", "classify", "curate", "link", "panel", "regress", "topics", "report")
PATH_KEYS = ("registry", "full_keywords", "limited_keywords", "cases", "votes_2020", "votes_2016",
             "population", "cre", "ranks", "labels")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- configuration

@dataclass
class PipelineConfig:
    store: Optional[Path] = None
    work: Optional[Path] = None
    paths: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    seed: int = 0

    def get(self, section: str, key: str, default=None, cast=str):
        value = self.sections.get(section, {}).get(key)
        if value is None or value == "":
            return default
        return cast(value)

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise DataError(f"no path configured for {key!r}")
            return None
        p = Path(value)
        if not p.exists():
            raise DataError(f"{key} file not found: {p}")
        return p

    def validate(self) -> "PipelineConfig":
        """Check that every configured input file exists."""
        for key in PATH_KEYS + ("exclusions",):
            if self.paths.get(key) is not None:
                self.path(key)
        return self

    @property
    def work_dir(self) -> Path:
        if self.work is not None:
            return self.work
        if self.store is None:
            raise DataError("no store directory configured")
        return self.store / "derived"


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a config file; relative paths resolve against its directory."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise DataError(f"{p}: {exc}") from exc
    base = p.parent
    sections = {s: {k: _unquote(v) for k, v in parser.items(s)} for s in parser.sections()}
    cfg.sections = sections

    def resolve(v):
        q = Path(v).expanduser()
        return q if q.is_absolute() else base / q

    paths = sections.get("paths", {})
    for k, v in paths.items():
        if v:
            cfg.paths[k] = resolve(v)
    if paths.get("store"):
        cfg.store = resolve(paths["store"])
    if paths.get("work"):
        cfg.work = resolve(paths["work"])
    cfg.seed = int(sections.get("run", {}).get("seed", 0) or 0)
    return cfg


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    env = os.environ.get(STORE_ENV)
    if env:
        cfg.store = Path(env)
    if getattr(args, "store", None):
        cfg.store = Path(args.store)
    if getattr(args, "work", None):
        cfg.work = Path(args.work)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key in PATH_KEYS:
        v = getattr(args, key, None)
        if v:
            cfg.paths[key] = Path(v)
    return cfg


def _store(cfg: PipelineConfig, create: bool = False) -> corpus.CorpusStore:
    if cfg.store is None:
        raise DataError(f"no store directory: set [paths] store, --store or {STORE_ENV}")
    return corpus.CorpusStore(cfg.store, create=create)


def _work(cfg: PipelineConfig, *parts) -> Path:
    d = cfg.work_dir.joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path} (run the earlier stage first)")
    return path


# ---------------------------------------------------------------- stages

def stage_crawl(cfg, args) -> dict:
    registry = ingest.load_registry(cfg.path("registry"))
    store = _store(cfg, create=True)
    policy = ingest.CrawlPolicy(
        per_host_delay=cfg.get("crawl", "per_host_delay", 5.0, float),
        retries=cfg.get("crawl", "retries", 2, int),
        timeout=cfg.get("crawl", "timeout", 20.0, float),
        max_workers=cfg.get("crawl", "max_workers", 8, int),
    )
    cycles = 1 if args.once else cfg.get("crawl", "cycles", 1, int)
    interval = cfg.get("crawl", "interval", 3600.0, float)
    totals = {"fetched": 0, "new": 0, "failed": 0}
    for i in range(cycles):
        rep = ingest.crawl_cycle(registry, store, policy)
        for k in totals:
            totals[k] += getattr(rep, k)
        if i + 1 < cycles:
            time.sleep(interval)
    return {"inputs": len(registry), "outputs": totals["new"], **totals, "cycles": cycles}


def stage_classify(cfg, args) -> dict:
    filters = classify.load_filters(cfg.paths.get("full_keywords"), cfg.paths.get("limited_keywords"))
    store = _store(cfg)
    counts = classify.reclassify_store(store, filters)
    return {"inputs": len(store), "outputs": counts["full"], "full": counts["full"],
            "limited": counts["limited"]}


def _curated_path(cfg):
    return cfg.work_dir / "outlets.csv"


def stage_curate(cfg, args) -> dict:
    store = _store(cfg)
    th = corpus.CurationThresholds(
        min_articles=cfg.get("curate", "min_articles", 50, int),
        min_covid_share=cfg.get("curate", "min_covid_share", 0.10, float),
        max_covid_share=cfg.get("curate", "max_covid_share", 0.95, float),
    )
    exclusions = {}
    manual = cfg.paths.get("exclusions")
    if manual:
        exclusions.update(corpus.load_exclusions(cfg.path("exclusions")))
    for oid in corpus.spanish_outlets(store):
        exclusions.setdefault(oid, "spanish")
    stats = corpus.outlet_stats(store)
    keep = corpus.curate_outlets(stats, th, exclusions)
    for oid, (n, n_cov) in stats.items():
        if oid not in keep and oid not in exclusions:
            exclusions[oid] = "below article minimum" if n <= th.min_articles else "covid share out of range"
    out = _work(cfg)
    corpus.write_exclusions(exclusions, out / "exclusions.csv")
    pd.DataFrame({"outlet_id": sorted(keep)}).to_csv(_curated_path(cfg), index=False, lineterminator="\n")
    return {"inputs": len(stats), "outputs": len(keep), "excluded": len(exclusions)}


def _registry_counties(cfg) -> dict:
    return {e.outlet_id: e.county_fips for e in ingest.load_registry(cfg.path("registry")) if e.county_fips}


def stage_link(cfg, args) -> dict:
    pops = geolink.load_population(cfg.path("population"))
    county = geolink.attach_population(geolink.load_case_data(cfg.path("cases")), pops)
    state, national = geolink.aggregate_geo(county)
    out = _work(cfg)
    geolink.write_series(county, out / "epi_county.csv")
    geolink.write_series(state, out / "epi_state.csv")
    geolink.write_series(national, out / "epi_national.csv")

    votes20 = geolink.load_votes(cfg.path("votes_2020"))
    votes16 = geolink.load_votes(cfg.path("votes_2016"))
    cre = geolink.load_cre(cfg.path("cre"))
    ranks = geolink.load_ranks(cfg.path("ranks"))
    counties = _registry_counties(cfg)
    profiles, excluded = geolink.build_profiles(sorted(counties.items()), votes20, votes16, pops, cre, ranks)
    frame = geolink.profiles_frame(profiles)
    frame.to_csv(out / "profiles.csv", float_format="%.10g", lineterminator="\n")
    corpus.write_exclusions(excluded, out / "link_exclusions.csv")
    r = geolink.vote_share_correlation(votes20, votes16)
    return {"inputs": len(counties), "outputs": len(profiles), "excluded": len(excluded),
            "geos": int(county["geo_id"].nunique()), "vote_share_r_2016_2020": round(r, 6)}


def _sample_outlets(cfg) -> list:
    keep = pd.read_csv(_need(_curated_path(cfg), "curated outlet list"), dtype=str)["outlet_id"].tolist()
    link_ex = cfg.work_dir / "link_exclusions.csv"
    dropped = set(corpus.load_exclusions(link_ex)) if link_ex.exists() else set()
    return sorted(set(keep) - dropped)


def _epi(cfg) -> dict:
    frames = [pd.read_csv(_need(cfg.work_dir / f"epi_{lvl}.csv", f"{lvl} epidemic series"),
                          dtype={"geo_id": str}) for lvl in ("county", "state", "national")]
    return panel.combine_epi(*frames)


def stage_panel(cfg, args) -> dict:
    store = _store(cfg)
    outlets = _sample_outlets(cfg)
    epi = _epi(cfg)
    counties = _registry_counties(cfg)
    out = _work(cfg)
    summary = {"inputs": len(outlets)}
    for name in ("full", "limited"):
        rows, scalings, gaps = panel.build_panel(store, epi, counties, name, outlets)
        panel.export_panel(rows, out / f"panel_{name}.csv")
        rows.to_csv(out / f"panel_{name}_detail.csv", index=False, float_format="%.17g", lineterminator="\n")
        panel.scalings_frame(scalings).to_csv(out / f"scalings_{name}.csv", index=False,
                                              float_format="%.12g", lineterminator="\n")
        summary[f"rows_{name}"] = len(rows)
        summary[f"gaps_{name}"] = len(gaps)
    summary["outputs"] = summary["rows_full"]
    return summary


def _model_names(cfg, args) -> list:
    if getattr(args, "model", None):
        names = args.model
    else:
        names = [n.strip() for n in cfg.get("regress", "models", "model1,model2").split(",") if n.strip()]
    unknown = [n for n in names if n not in glm.NAMED_MODELS]
    if unknown:
        raise UsageError(f"unknown model(s) {unknown}; choose from {sorted(glm.NAMED_MODELS)}")
    return names


def _fit_models(cfg, names) -> list:
    panels = {}
    fits = []
    for n in names:
        spec = glm.NAMED_MODELS[n]
        if spec.filter not in panels:
            panels[spec.filter] = pd.read_csv(_need(cfg.work_dir / f"panel_{spec.filter}_detail.csv", "panel"),
                                              dtype={"outlet_id": str})
        fits.append(glm.fit(panels[spec.filter], spec))
    return fits


RECONSTRUCTED_NOTE = "Full filter: bundled reconstructed keyword list"


def _table_notes(cfg) -> list:
    return [] if cfg.paths.get("full_keywords") else [RECONSTRUCTED_NOTE]


def stage_regress(cfg, args) -> dict:
    names = _model_names(cfg, args)
    fits = _fit_models(cfg, names)
    out = _work(cfg, "regress")
    (out / "regression.txt").write_text(glm.regression_table(fits, _table_notes(cfg)), encoding="utf-8")
    glm.coefficients_frame(fits).to_csv(out / "coefficients.csv", index=False, float_format="%.10g",
                                        lineterminator="\n")
    glm.compare_models(fits).to_csv(out / "model_comparison.csv", index=False, float_format="%.10g",
                                    lineterminator="\n")
    return {"inputs": int(sum(f.n_obs for f in fits)), "outputs": len(fits), "models": names,
            "converged": all(f.converged for f in fits)}


def _topic_docs(cfg, store):
    keep = _curated_path(cfg)
    outlets = _sample_outlets(cfg) if keep.exists() else None
    return list(store.articles(outlets))


def stage_topics(cfg, args) -> dict:
    store = _store(cfg)
    arts = _topic_docs(cfg, store)
    min_df = cfg.get("topics", "min_df", 5, int)
    df = cfg.get("topics", "spline_df", 10, int)
    vocab, counts, empty = tp.build_vocab([a.text for a in arts], min_df=min_df)
    keep = np.flatnonzero(~empty)
    arts = [arts[i] for i in keep]
    counts = counts[keep]
    weeks = np.array([a.published_week for a in arts], dtype=float)
    spline = tp.BSplineBasis(df=df).fit(weeks)
    basis = spline.transform(weeks)
    fit_kw = {"max_iter": cfg.get("topics", "max_iter", 200, int)}
    out = _work(cfg, "topics")
    summary = {"inputs": len(arts), "vocabulary": len(vocab)}

    grid = cfg.get("topics", "k_grid", None)
    if args.k is not None:
        k = args.k
    elif grid:
        grid = [int(x) for x in grid.split(",") if x.strip()]
        k, table = tp.select_k(counts, basis, grid, cfg.get("topics", "holdout_fraction", 0.1, float),
                               seed=cfg.seed, **fit_kw)
        table.to_csv(out / "select_k.csv", index=False, float_format="%.10g", lineterminator="\n")
    else:
        k = cfg.get("topics", "k", 10, int)
    model = tp.fit_model(counts, basis, k, seed=cfg.seed, **fit_kw)
    model.terms = tuple(vocab.terms)
    model.knots = spline.knots_
    tp.save_model(model, out / "model.bin")
    m = cfg.get("topics", "top_words", 7, int)
    pd.DataFrame({"topic": range(k), "top_words": [" ".join(tp.top_words(model, t, m)) for t in range(k)]}) \
        .to_csv(out / "top_words.csv", index=False, lineterminator="\n")
    docs = pd.DataFrame({"article_id": [a.article_id for a in arts], "outlet_id": [a.outlet_id for a in arts],
                         "week": weeks.astype(int)})
    theta = pd.DataFrame(model.theta, columns=[f"topic_{i}" for i in range(k)])
    pd.concat([docs, theta], axis=1).to_csv(out / "theta.csv", index=False, float_format="%.10g",
                                            lineterminator="\n")
    summary.update({"outputs": k, "k": k, "iterations": len(model.elbo_trace), "converged": model.converged,
                    "final_elbo": float(model.elbo_trace[-1])})

    labels_path = cfg.paths.get("labels")
    if labels_path:
        labels = tp.load_labels(cfg.path("labels"))
        table = tp.label_table(labels)
        alpha = tp.krippendorff_alpha(table) if table.shape[1] >= 2 and len(table) >= 2 else float("nan")
        covid = sorted(t for t, tl in labels.items() if tl.final == "covid")
        (out / "agreement.txt").write_text(f"krippendorff_alpha\t{alpha:.6f}\ncovid_topics\t"
                                           + ",".join(map(str, covid)) + "\n", encoding="utf-8")
        summary.update({"alpha": alpha, "covid_topics": len(covid)})
    return summary


def stage_report(cfg, args) -> dict:
    names = _model_names(cfg, args)
    fits = _fit_models(cfg, names)
    span = cfg.get("report", "span", 0.75, float)
    alpha = cfg.get("report", "alpha", 0.01, float)
    trends, correlations = {}, {}
    for name in ("full", "limited"):
        rows = pd.read_csv(_need(cfg.work_dir / f"panel_{name}_detail.csv", "panel"), dtype={"outlet_id": str})
        weekly = report.weekly_coverage(rows)
        if len(weekly) >= 10:
            trends[f"coverage_{name}"] = report.coverage_trend(weekly, span)

    profiles_path = cfg.work_dir / "profiles.csv"
    profiles = pd.read_csv(profiles_path, dtype={"outlet_id": str, "county_fips": str}).set_index("outlet_id") \
        if profiles_path.exists() else None
    by_name = {f.spec.name: f for f in fits}
    skipped = []
    if profiles is not None and len(profiles) < 3:
        skipped.append(f"audience correlations need at least 3 profiled outlets, have {len(profiles)}")
        profiles = None
    for f in fits:
        if profiles is not None:
            cells, scatter = report.fe_audience_table(glm.centered_fe(f), profiles)
            correlations[f"fe_audience_{f.spec.name}"] = cells
            correlations[f"fe_scatter_{f.spec.name}"] = scatter
    if "model1" in by_name and "model2" in by_name and len(by_name["model1"].fe) >= 3:
        a, b = glm.centered_fe(by_name["model1"]), glm.centered_fe(by_name["model2"])
        common = sorted(set(a.index) & set(b.index))
        correlations["fe_full_vs_limited"] = [report.pearson(np.log(a[common]), np.log(b[common]),
                                                             "model1", "model2")]

    topic_dir = cfg.work_dir / "topics"
    agreement = topic_dir / "agreement.txt"
    if (topic_dir / "theta.csv").exists():
        theta = pd.read_csv(topic_dir / "theta.csv", dtype={"outlet_id": str})
        cols = [c for c in theta.columns if c.startswith("topic_")]
        covid = list(range(len(cols)))
        if agreement.exists():
            line = agreement.read_text(encoding="utf-8").splitlines()[1].split("\t")
            covid = [int(x) for x in line[1].split(",")] if len(line) > 1 and line[1] else []
        shares = tp.weekly_topic_shares(theta[cols].to_numpy(), theta["week"].to_numpy())
        shares.columns = cols
        shares.index.name = "week"
        trends["topic_shares"] = shares.reset_index()
        if covid and profiles is not None:
            outlet_shares = tp.outlet_topic_shares(theta[cols].to_numpy(), theta["outlet_id"].to_numpy(), covid)
            outlet_shares.columns = [f"topic_{t}" for t in covid]
            correlations["topic_audience"] = report.topic_audience_heatmap(outlet_shares, profiles, alpha=alpha)
    outdir = Path(args.out) if getattr(args, "out", None) else cfg.work_dir / "report"
    manifest = report.emit_tables(fits, trends, correlations, outdir, _table_notes(cfg))
    return {"inputs": len(fits), "outputs": len(manifest), "outdir": str(outdir), "skipped": skipped}


STAGE_FUNCS = {"crawl": stage_crawl, "classify": stage_classify, "curate": stage_curate, "link": stage_link,
               "panel": stage_panel, "regress": stage_regress, "topics": stage_topics, "report": stage_report}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="config file with per-stage sections")
    common.add_argument("--store", help=f"article store directory (overrides config and ${STORE_ENV})")
    common.add_argument("--work", help="directory for derived outputs (default: <store>/derived)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="newspulse", description="Local news pandemic coverage pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(STAGES) + "}", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("crawl", parents=[common], help="fetch feeds and store new articles")
    p.add_argument("--registry")
    p.add_argument("--once", action="store_true", help="run a single crawl cycle")
    p = sub.add_parser("classify", parents=[common], help="flag pandemic-related articles")
    p.add_argument("--full-keywords", dest="full_keywords")
    p.add_argument("--limited-keywords", dest="limited_keywords")
    sub.add_parser("curate", parents=[common], help="select outlets for the analysis sample")
    p = sub.add_parser("link", parents=[common], help="weekly epidemic series and outlet profiles")
    for key in ("registry", "cases", "votes_2020", "votes_2016", "population", "cre", "ranks"):
        p.add_argument("--" + key.replace("_", "-"), dest=key)
    p = sub.add_parser("panel", parents=[common], help="build outlet-week panels")
    p.add_argument("--registry")
    p = sub.add_parser("regress", parents=[common], help="fit fixed-effects logit models")
    p.add_argument("--model", action="append", help="model name (repeatable)")
    p = sub.add_parser("topics", parents=[common], help="fit the topic model")
    p.add_argument("--k", type=int, help="number of topics (skips grid search)")
    p.add_argument("--labels")
    p = sub.add_parser("report", parents=[common], help="trends, correlations and tables")
    p.add_argument("--model", action="append")
    p.add_argument("--out", help="output directory (default: <work>/report)")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = _apply_overrides(load_config(args.config), args).validate()
        summary = STAGE_FUNCS[args.command](cfg, args)
    except UsageError as exc:
        print(f"newspulse {args.command}: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"newspulse {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"newspulse {args.command}: data error: missing file {exc.filename}", file=sys.stderr)
        return 2
    record = {"stage": args.command, "wall_seconds": round(time.perf_counter() - t0, 3), "seed": cfg.seed}
    record.update(summary)
    line = json.dumps(record, sort_keys=True, default=str)
    print(line, file=sys.stderr)
    try:
        with open(_work(cfg) / "runs.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    except (OSError, DataError):
        pass
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
