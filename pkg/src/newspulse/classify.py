"""Keyword tagging of COVID-related articles under the full and limited filters."""
from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple, Optional

logger = logging.getLogger(__name__)

LIMITED_TERMS = ("covid", "covid19", "coronavirus", "sars-cov-2")

_DASHES = dict.fromkeys(map(ord, "‐‑‒–—―−﹘﹣－"), "-")
_ATOM_RE = re.compile(r"[0-9a-z]+")
_COVID_SUFFIX_RE = re.compile(r"covid[0-9]+")


def _atoms(text: str) -> list[str]:
    """Lowercase alphanumeric pieces; hyphens and spaces both separate."""
    text = unicodedata.normalize("NFKC", text).translate(_DASHES).lower()
    return _ATOM_RE.findall(text)


@dataclass(frozen=True)
class KeywordFilter:
    name: str
    keywords: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.name not in ("full", "limited"):
            raise ValueError(f"filter name must be 'full' or 'limited', got {self.name!r}")
        for term in self.keywords:
            if term != term.lower():
                raise ValueError(f"keyword {term!r} is not lowercase")
            if term.startswith(("#", "@")):
                raise ValueError(f"keyword {term!r} is Twitter-specific")
            if not _atoms(term):
                raise ValueError(f"keyword {term!r} has no alphanumeric content")
        object.__setattr__(self, "_phrases", {t: tuple(_atoms(t)) for t in self.keywords})

    @classmethod
    def limited(cls) -> "KeywordFilter":
        return cls("limited", frozenset(LIMITED_TERMS))


class Match(NamedTuple):
    match: bool
    hits: list


def classify_text(text: str, kw_filter: KeywordFilter) -> Match:
    """Match ``text`` against a filter's terms.

    Single words match whole tokens, phrases match consecutive tokens, and
    ``covid`` also matches numeric suffixes such as ``covid19``.
    """
    atoms = _atoms(text or "")
    if not atoms:
        return Match(False, [])
    tokens = set(atoms)
    hits = []
    for term in sorted(kw_filter.keywords):
        phrase = kw_filter._phrases[term]
        if len(phrase) == 1:
            word = phrase[0]
            found = word in tokens or (word == "covid" and any(_COVID_SUFFIX_RE.fullmatch(t) for t in tokens))
        else:
            found = _contains(atoms, phrase)
        if found:
            hits.append(term)
    return Match(bool(hits), hits)


def _contains(seq: list, phrase: tuple) -> bool:
    n = len(phrase)
    first = phrase[0]
    for i, tok in enumerate(seq):
        if tok == first and tuple(seq[i:i + n]) == phrase:
            return True
    return False


def load_keyword_file(path=None) -> frozenset:
    """Read one term per line, skipping blanks and ``#`` comments.

    With no path the bundled reconstruction of the full list is used.
    ``@``-prefixed lines are dropped as Twitter mentions.
    """
    if path is None:
        text = resources.files("newspulse.data").joinpath("full_keywords.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    terms = set()
    for line in text.splitlines():
        term = line.strip()
        if not term or term.startswith("#"):
            continue
        if term.startswith("@"):
            logger.warning("dropping Twitter-specific keyword %r", term)
            continue
        terms.add(term.lower())
    return frozenset(terms)


def load_filters(full_path=None, limited_path=None) -> dict[str, KeywordFilter]:
    """Build both filters; the limited terms are always folded into the full set."""
    limited = KeywordFilter("limited", load_keyword_file(limited_path)) if limited_path else KeywordFilter.limited()
    full_terms = load_keyword_file(full_path)
    missing = limited.keywords - full_terms
    if missing:
        logger.info("adding limited terms %s to the full filter", sorted(missing))
    full = KeywordFilter("full", full_terms | limited.keywords)
    return {"full": full, "limited": limited}


def reclassify_store(store, filters: Optional[dict] = None) -> dict[str, int]:
    """Recompute both flags for every stored article; returns match counts."""
    filters = filters or load_filters()
    flags = {}
    counts = {"full": 0, "limited": 0}
    for art in store.articles():
        full = classify_text(art.text, filters["full"]).match
        lim = classify_text(art.text, filters["limited"]).match
        flags[art.article_id] = (full, lim)
        counts["full"] += full
        counts["limited"] += lim
    store.write_flags(flags)
    return counts
