"""RSS/Atom crawling and full-text extraction for local news outlets."""
from __future__ import annotations

import csv
import logging
import re
import threading
import time
import xml.etree.ElementTree as ET
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from typing import Callable, Iterable, Optional
from urllib.parse import parse_qsl, urlencode, urljoin, urlsplit, urlunsplit

import requests
from bs4 import BeautifulSoup, Comment, NavigableString, Tag

from .errors import EmptyBody, FetchError, MalformedFeed, UnsupportedFormat

logger = logging.getLogger(__name__)

MIN_BODY_CHARS = 140

ATOM_NS = "http://www.w3.org/2005/Atom"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RSS1_NS = "http://purl.org/rss/1.0/"
DC_NS = "http://purl.org/dc/elements/1.1/"

DEFAULT_PORTS = {"http": 80, "https": 443}


@dataclass(frozen=True)
class FeedEntry:
    feed_url: str
    item_guid: str
    link: str
    title: str = ""
    published: Optional[datetime] = None


@dataclass(frozen=True)
class RawArticle:
    outlet_id: str
    url: str
    fetched_at: datetime
    html: bytes
    text: str
    published: Optional[datetime] = None


@dataclass(frozen=True)
class RegistryEntry:
    outlet_id: str
    feed_url: str
    homepage_url: str = ""
    county_fips: str = ""
    state: str = ""


@dataclass
class CrawlPolicy:
    per_host_delay: float = 5.0
    retries: int = 2
    backoff: float = 1.0
    timeout: float = 20.0
    max_workers: int = 8
    user_agent: str = "newspulse/0.1 (+local news monitor)"


@dataclass
class OutletReport:
    fetched: int = 0
    new: int = 0
    duplicate: int = 0
    failed: int = 0
    errors: list = field(default_factory=list)


@dataclass
class CrawlReport:
    outlets: dict = field(default_factory=dict)

    def outlet(self, outlet_id: str) -> OutletReport:
        return self.outlets.setdefault(outlet_id, OutletReport())

    @property
    def new(self) -> int:
        return sum(r.new for r in self.outlets.values())

    @property
    def fetched(self) -> int:
        return sum(r.fetched for r in self.outlets.values())

    @property
    def failed(self) -> int:
        return sum(r.failed for r in self.outlets.values())


# ---------------------------------------------------------------- registry

def load_registry(path) -> list[RegistryEntry]:
    """Read the feed registry CSV (``outlet_id,feed_url,homepage_url,county_fips,state``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"outlet_id", "feed_url"} - set(reader.fieldnames or ())
        if missing:
            from .errors import SchemaError
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for row in reader:
            fips = (row.get("county_fips") or "").strip()
            out.append(RegistryEntry(
                outlet_id=row["outlet_id"].strip(),
                feed_url=row["feed_url"].strip(),
                homepage_url=(row.get("homepage_url") or "").strip(),
                county_fips=fips.zfill(5) if fips else "",
                state=(row.get("state") or "").strip().upper(),
            ))
    return out


# ---------------------------------------------------------------- urls

def canonical_url(url: str) -> str:
    """Normalize a link so trivially different variants compare equal.

    Scheme and host are lowercased, default ports and fragments dropped and
    ``utm_*`` tracking parameters removed. Path and remaining query order are
    kept as-is.
    """
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    netloc = host
    if parts.username:
        netloc = f"{parts.username}@{netloc}"
    if port is not None and DEFAULT_PORTS.get(scheme) != port:
        netloc = f"{netloc}:{port}"
    query = [(k, v) for k, v in parse_qsl(parts.query, keep_blank_values=True)
             if not k.lower().startswith("utm_")]
    path = parts.path or "/"
    return urlunsplit((scheme, netloc, path, urlencode(query), ""))


def host_of(url: str) -> str:
    parts = urlsplit(url)
    return (parts.netloc or "").lower()


# ---------------------------------------------------------------- feeds

def _parse_date(value: Optional[str]) -> Optional[datetime]:
    if not value:
        return None
    value = value.strip()
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError):
        try:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _text(el: Optional[ET.Element]) -> str:
    return (el.text or "").strip() if el is not None else ""


def parse_feed(raw: bytes, feed_url: str = "") -> list[FeedEntry]:
    """Parse an RSS 2.0, RSS 1.0 (RDF) or Atom 1.0 document.

    Returns one entry per item in document order. Relative links are resolved
    against ``feed_url``. Items without any link are skipped.
    """
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise MalformedFeed(str(exc)) from exc

    tag = root.tag
    entries = []
    if tag == "rss":
        channel = root.find("channel")
        items = channel.findall("item") if channel is not None else []
        for item in items:
            link = _text(item.find("link"))
            guid = _text(item.find("guid"))
            published = _parse_date(_text(item.find("pubDate")) or _text(item.find(f"{{{DC_NS}}}date")))
            entries.append((guid, link, _text(item.find("title")), published))
    elif tag == f"{{{ATOM_NS}}}feed":
        for item in root.findall(f"{{{ATOM_NS}}}entry"):
            link = ""
            for ln in item.findall(f"{{{ATOM_NS}}}link"):
                rel = ln.get("rel", "alternate")
                if rel == "alternate" and ln.get("href"):
                    link = ln.get("href")
                    break
            guid = _text(item.find(f"{{{ATOM_NS}}}id"))
            published = _parse_date(_text(item.find(f"{{{ATOM_NS}}}published"))
                                    or _text(item.find(f"{{{ATOM_NS}}}updated")))
            entries.append((guid, link, _text(item.find(f"{{{ATOM_NS}}}title")), published))
    elif tag == f"{{{RDF_NS}}}RDF":
        for item in root.findall(f"{{{RSS1_NS}}}item"):
            link = _text(item.find(f"{{{RSS1_NS}}}link"))
            guid = item.get(f"{{{RDF_NS}}}about", "")
            published = _parse_date(_text(item.find(f"{{{DC_NS}}}date")))
            entries.append((guid, link, _text(item.find(f"{{{RSS1_NS}}}title")), published))
    else:
        raise UnsupportedFormat(f"root element {tag!r} is neither RSS nor Atom")

    out = []
    for guid, link, title, published in entries:
        if not link:
            continue
        link = urljoin(feed_url, link) if feed_url else link
        out.append(FeedEntry(feed_url=feed_url, item_guid=guid or link, link=link,
                             title=title, published=published))
    return out


# ---------------------------------------------------------------- extraction

_DROP_TAGS = ("script", "style", "noscript", "nav", "footer", "header", "aside", "form",
              "iframe", "svg", "button", "select", "template", "menu")
_BLOCK_TAGS = ("p", "h1", "h2", "h3", "h4", "h5", "h6", "blockquote", "pre", "li")
_CHARSET_RE = re.compile(rb"""<meta[^>]+charset\s*=\s*["']?\s*([A-Za-z0-9._-]+)""", re.I)
_WS_RE = re.compile(r"\s+")
_TAGLIKE_RE = re.compile(r"<(?=[A-Za-z/!?])")


def decode_html(html: bytes, http_charset: Optional[str] = None) -> str:
    """Decode using the HTTP charset, then a meta declaration, then lossy UTF-8."""
    for cand in (http_charset, _meta_charset(html)):
        if not cand:
            continue
        try:
            return html.decode(cand)
        except (LookupError, UnicodeDecodeError):
            continue
    return html.decode("utf-8", errors="replace")


def _meta_charset(html: bytes) -> Optional[str]:
    m = _CHARSET_RE.search(html[:4096])
    return m.group(1).decode("ascii") if m else None


def _block_text(el: Tag) -> str:
    return _WS_RE.sub(" ", el.get_text(" ")).strip()


def _is_block(el: Tag) -> bool:
    if el.name in _BLOCK_TAGS:
        # a <li> wrapping a paragraph is counted through its child instead
        return not (el.name == "li" and el.find("p") is not None)
    if el.name == "div":
        # divs used as paragraphs: direct text and no nested block children
        own = "".join(s for s in el.find_all(string=True, recursive=False)
                      if not isinstance(s, Comment)).strip()
        return bool(own) and el.find(["div", *_BLOCK_TAGS]) is None
    return False


def extract_text(html: bytes, http_charset: Optional[str] = None) -> str:
    """Extract the main article body from an HTML page.

    Chrome (scripts, navigation, headers and footers) is stripped, then every
    paragraph-like block credits its text length to its parent and, at half
    weight, its grandparent. The highest scoring container wins, with ties
    broken by text-to-tag density. Its blocks are emitted one per line, each
    distinct block once.

    Raises
    ------
    EmptyBody
        If the winning region holds fewer than 140 characters.
    """
    soup = BeautifulSoup(decode_html(html, http_charset), "html.parser")
    for el in soup.find_all(_DROP_TAGS):
        el.decompose()
    for c in soup.find_all(string=lambda s: isinstance(s, Comment)):
        c.extract()

    blocks = [el for el in soup.find_all(True) if _is_block(el)]
    scores: dict[int, float] = defaultdict(float)
    nodes: dict[int, Tag] = {}
    for el in blocks:
        n = len(_block_text(el))
        if n == 0:
            continue
        parent = el.parent
        if parent is None:
            continue
        nodes[id(parent)] = parent
        scores[id(parent)] += n
        grand = parent.parent
        if grand is not None:
            nodes[id(grand)] = grand
            scores[id(grand)] += n / 2.0
    if not scores:
        raise EmptyBody("no text blocks found")

    def density(node: Tag) -> float:
        n_tags = 1 + len(node.find_all(True))
        return len(node.get_text()) / n_tags

    order = {id(el): i for i, el in enumerate(soup.find_all(True))}
    best_id = max(scores, key=lambda k: (scores[k], density(nodes[k]), -order.get(k, 0)))
    best = nodes[best_id]

    seen = set()
    lines = []
    for el in best.find_all(True):
        if not _is_block(el):
            continue
        txt = _block_text(el)
        if not txt or txt in seen:
            continue
        # skip blocks nested inside an already emitted block
        if any(isinstance(p, Tag) and _is_block(p) for p in el.parents if p is not best and _within(p, best)):
            continue
        seen.add(txt)
        lines.append(txt)
    text = "\n".join(lines)
    # literal "<tag" sequences in text are defanged so output never looks like markup
    text = _TAGLIKE_RE.sub("< ", text)
    if len(text) < MIN_BODY_CHARS:
        raise EmptyBody(f"longest text region has {len(text)} characters")
    return text


def _within(node: Tag, ancestor: Tag) -> bool:
    return any(p is ancestor for p in node.parents)


# ---------------------------------------------------------------- fetching

class HostThrottle:
    """Serializes requests per host and spaces their start times."""

    def __init__(self, delay: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.delay = delay
        self.clock = clock
        self.sleep = sleep
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()
        self._last: dict[str, float] = {}
        self.log: list[tuple[str, float, str]] = []

    def _lock(self, host):
        with self._guard:
            return self._locks[host]

    def run(self, url: str, fn):
        host = host_of(url)
        with self._lock(host):
            last = self._last.get(host)
            if last is not None:
                wait = self.delay - (self.clock() - last)
                if wait > 0:
                    self.sleep(wait)
            start = self.clock()
            self._last[host] = start
            with self._guard:
                self.log.append((host, start, url))
            return fn()


@dataclass
class Response:
    status: int
    content: bytes
    charset: Optional[str] = None


class Fetcher:
    """HTTP GET with bounded retries and per-host politeness."""

    def __init__(self, policy: CrawlPolicy, session: Optional[requests.Session] = None,
                 throttle: Optional[HostThrottle] = None):
        self.policy = policy
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", policy.user_agent)
        self.throttle = throttle or HostThrottle(policy.per_host_delay)

    def get(self, url: str) -> Response:
        attempt = 0
        while True:
            try:
                resp = self.throttle.run(url, lambda: self.session.get(url, timeout=self.policy.timeout))
            except requests.RequestException as exc:
                if attempt >= self.policy.retries:
                    raise FetchError(f"{url}: {exc}") from exc
                time.sleep(self.policy.backoff * 2 ** attempt)
                attempt += 1
                continue
            if resp.status_code >= 400:
                raise FetchError(f"{url}: HTTP {resp.status_code}")
            charset = None
            ctype = resp.headers.get("Content-Type", "")
            m = re.search(r"charset=([\w.-]+)", ctype, re.I)
            if m:
                charset = m.group(1)
            return Response(resp.status_code, resp.content, charset)


# ---------------------------------------------------------------- crawl

def _crawl_outlet(entry: RegistryEntry, store, fetcher: Fetcher, report: OutletReport, lock):
    try:
        resp = fetcher.get(entry.feed_url)
        items = parse_feed(resp.content, entry.feed_url)
    except (FetchError, MalformedFeed, UnsupportedFormat) as exc:
        with lock:
            report.failed += 1
            report.errors.append(f"feed: {exc}")
        return
    for item in items:
        url = canonical_url(item.link)
        if store.has_url(entry.outlet_id, url):
            continue
        try:
            page = fetcher.get(item.link)
            with lock:
                report.fetched += 1
            text = extract_text(page.content, page.charset)
        except (FetchError, EmptyBody) as exc:
            with lock:
                report.failed += 1
                report.errors.append(f"{url}: {exc}")
            continue
        raw = RawArticle(outlet_id=entry.outlet_id, url=url, fetched_at=datetime.now(timezone.utc),
                         html=page.content, text=text, published=item.published)
        try:
            status = store.ingest_article(raw)
        except ValueError as exc:
            # e.g. a publication date before the week index starts
            with lock:
                report.failed += 1
                report.errors.append(f"{url}: {exc}")
            continue
        with lock:
            if status == "inserted":
                report.new += 1
            else:
                report.duplicate += 1


def crawl_cycle(registry: Iterable[RegistryEntry], store, policy: Optional[CrawlPolicy] = None,
                fetcher: Optional[Fetcher] = None) -> CrawlReport:
    """Attempt every feed once and store any new articles behind it.

    Outlets run concurrently; requests to the same host are serialized by the
    fetcher's throttle. Failures are recorded per outlet and never abort the
    cycle.
    """
    policy = policy or CrawlPolicy()
    fetcher = fetcher or Fetcher(policy)
    registry = list(registry)
    report = CrawlReport()
    lock = threading.Lock()
    for entry in registry:
        report.outlet(entry.outlet_id)
    with ThreadPoolExecutor(max_workers=max(1, policy.max_workers)) as pool:
        futures = [pool.submit(_crawl_outlet, e, store, fetcher, report.outlet(e.outlet_id), lock)
                   for e in registry]
        for f in futures:
            f.result()
    for oid, r in sorted(report.outlets.items()):
        logger.info("crawl %s fetched=%d new=%d failed=%d", oid, r.fetched, r.new, r.failed)
    return report
