"""Article persistence, deduplication and outlet curation.

Store layout::

    <root>/articles/<outlet>.jsonl   append-only article records
    <root>/index.tsv                 article_id, outlet_id, canonical url
    <root>/flags.tsv                 article_id, full, limited (rewritten by classify)

Records are appended as whole lines and fsynced; readers ignore a trailing
line without its newline, so a crash mid-write never exposes a partial record.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional
from urllib.parse import quote

from .errors import StoreUnavailable

WEEK_ZERO = datetime(2020, 1, 1, tzinfo=timezone.utc)


def week_index(ts: datetime) -> int:
    """Whole weeks elapsed since 2020-01-01 00:00 UTC."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    days = (ts - WEEK_ZERO).total_seconds() / 86400.0
    if days < 0:
        raise ValueError(f"timestamp {ts.isoformat()} precedes 2020-01-01")
    return int(days // 7)


def content_hash(outlet_id: str, text: str) -> str:
    norm = " ".join(text.split())
    return hashlib.sha256(f"{outlet_id}\x00{norm}".encode("utf-8")).hexdigest()


class IngestStatus(str, enum.Enum):
    INSERTED = "inserted"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class StoredArticle:
    article_id: str
    outlet_id: str
    url: str
    published_week: int
    text: str
    is_covid_full: bool = False
    is_covid_limited: bool = False
    fetched_at: str = ""
    published: str = ""


@dataclass(frozen=True)
class CurationThresholds:
    min_articles: int = 50
    min_covid_share: float = 0.10
    max_covid_share: float = 0.95

    def __post_init__(self):
        if not 0 <= self.min_covid_share < self.max_covid_share <= 1:
            raise ValueError("need 0 <= min_covid_share < max_covid_share <= 1")


def _read_lines(path: Path) -> Iterator[str]:
    if not path.exists():
        return
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.endswith("\n"):
                yield line[:-1]


class CorpusStore:
    """Directory-backed article store with single-writer semantics."""

    def __init__(self, root, create: bool = True):
        self.root = Path(root)
        try:
            if create:
                (self.root / "articles").mkdir(parents=True, exist_ok=True)
            elif not (self.root / "articles").is_dir():
                raise StoreUnavailable(f"no store at {self.root}")
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc
        self._lock = threading.Lock()
        self._ids: set[str] = set()
        self._urls: set[tuple[str, str]] = set()
        for line in _read_lines(self.root / "index.tsv"):
            aid, oid, url = line.split("\t", 2)
            self._ids.add(aid)
            self._urls.add((oid, url))

    def _outlet_path(self, outlet_id: str) -> Path:
        return self.root / "articles" / f"{quote(outlet_id, safe='')}.jsonl"

    def __len__(self):
        return len(self._ids)

    def has_url(self, outlet_id: str, url: str) -> bool:
        return (outlet_id, url) in self._urls

    def ingest_article(self, raw) -> IngestStatus:
        """Append ``raw`` unless its URL or text was already stored for the outlet."""
        if not raw.text:
            raise ValueError("article text is empty")
        aid = content_hash(raw.outlet_id, raw.text)
        stamp = raw.published or raw.fetched_at
        week = week_index(stamp)
        record = {
            "article_id": aid,
            "outlet_id": raw.outlet_id,
            "url": raw.url,
            "fetched_at": raw.fetched_at.isoformat(),
            "published": raw.published.isoformat() if raw.published else "",
            "published_week": week,
            "text": raw.text,
        }
        with self._lock:
            if aid in self._ids or (raw.outlet_id, raw.url) in self._urls:
                return IngestStatus.DUPLICATE
            try:
                self._append(self._outlet_path(raw.outlet_id), json.dumps(record, ensure_ascii=False))
                self._append(self.root / "index.tsv", f"{aid}\t{raw.outlet_id}\t{raw.url}")
            except OSError as exc:
                raise StoreUnavailable(str(exc)) from exc
            self._ids.add(aid)
            self._urls.add((raw.outlet_id, raw.url))
        return IngestStatus.INSERTED

    @staticmethod
    def _append(path: Path, line: str):
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def outlets(self) -> list[str]:
        from urllib.parse import unquote
        return sorted(unquote(p.stem) for p in (self.root / "articles").glob("*.jsonl"))

    def read_flags(self) -> dict[str, tuple[bool, bool]]:
        flags = {}
        for line in _read_lines(self.root / "flags.tsv"):
            aid, full, lim = line.split("\t")
            flags[aid] = (full == "1", lim == "1")
        return flags

    def write_flags(self, flags: Mapping[str, tuple[bool, bool]]):
        tmp = self.root / "flags.tsv.tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                for aid in sorted(flags):
                    full, lim = flags[aid]
                    fh.write(f"{aid}\t{int(full)}\t{int(lim)}\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.root / "flags.tsv")
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc

    def articles(self, outlets: Optional[Iterable[str]] = None) -> Iterator[StoredArticle]:
        """Yield committed articles outlet by outlet, in insertion order."""
        flags = self.read_flags()
        wanted = sorted(set(outlets)) if outlets is not None else self.outlets()
        for oid in wanted:
            for line in _read_lines(self._outlet_path(oid)):
                rec = json.loads(line)
                full, lim = flags.get(rec["article_id"], (False, False))
                yield StoredArticle(
                    article_id=rec["article_id"], outlet_id=rec["outlet_id"], url=rec["url"],
                    published_week=rec["published_week"], text=rec["text"],
                    is_covid_full=full, is_covid_limited=lim,
                    fetched_at=rec.get("fetched_at", ""), published=rec.get("published", ""),
                )


# ---------------------------------------------------------------- curation

def outlet_stats(store: CorpusStore) -> dict[str, tuple[int, int]]:
    """Article count and full-filter COVID count per outlet."""
    stats: dict[str, list[int]] = {}
    for art in store.articles():
        s = stats.setdefault(art.outlet_id, [0, 0])
        s[0] += 1
        s[1] += int(art.is_covid_full)
    return {k: (v[0], v[1]) for k, v in stats.items()}


def curate_outlets(store, thresholds: CurationThresholds = CurationThresholds(),
                   exclusions: Optional[Mapping[str, str]] = None) -> set[str]:
    """Outlets that enter the analysis sample.

    An outlet is kept when it has strictly more than ``min_articles`` articles,
    its full-filter COVID share lies in ``[min_covid_share, max_covid_share]``
    and it carries no exclusion reason. ``store`` may also be a mapping of
    outlet id to ``(n_articles, n_covid)``.
    """
    stats = store if isinstance(store, Mapping) else outlet_stats(store)
    exclusions = exclusions or {}
    keep = set()
    for oid, (n, n_covid) in stats.items():
        if oid in exclusions or n <= thresholds.min_articles:
            continue
        share = n_covid / n
        if thresholds.min_covid_share <= share <= thresholds.max_covid_share:
            keep.add(oid)
    return keep


def load_exclusions(path) -> dict[str, str]:
    """Read an ``outlet_id,reason`` CSV; repeated outlets join their reasons."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            oid = row["outlet_id"].strip()
            reason = (row.get("reason") or "").strip()
            out[oid] = f"{out[oid]};{reason}" if oid in out else reason
    return out


def write_exclusions(exclusions: Mapping[str, str], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outlet_id", "reason"])
        for oid in sorted(exclusions):
            w.writerow([oid, exclusions[oid]])


_WORD_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


def _wordlist(name: str) -> frozenset[str]:
    text = resources.files("newspulse.data").joinpath(name).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def is_primarily_spanish(texts: Iterable[str]) -> bool:
    """Compare how much of the corpus is Spanish vs English function words."""
    es, en = _wordlist("function_words_es.txt"), _wordlist("function_words_en.txt")
    n_es = n_en = total = 0
    for text in texts:
        for w in _WORD_RE.findall(text.lower()):
            total += 1
            if w in es:
                n_es += 1
            elif w in en:
                n_en += 1
    if total == 0:
        return False
    return n_es / total > n_en / total


def spanish_outlets(store: CorpusStore) -> set[str]:
    return {oid for oid in store.outlets()
            if is_primarily_spanish(a.text for a in store.articles([oid]))}
