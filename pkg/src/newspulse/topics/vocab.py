"""Tokenization, stemming and the document-term matrix."""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from nltk.stem.porter import PorterStemmer
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import EmptyVocabulary

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)*")


def default_stopwords() -> frozenset:
    text = resources.files("newspulse.data").joinpath("stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple
    doc_freq: np.ndarray

    def __len__(self):
        return len(self.terms)

    def index(self) -> dict:
        return {t: i for i, t in enumerate(self.terms)}


class StemmedVectorizer(BaseEstimator, TransformerMixin):
    """Bag-of-stems counts over a vocabulary learned from the training docs.

    Tokens are lowercased alphanumeric runs; stopwords, digit-only tokens and
    tokens shorter than ``min_len`` are removed before Porter stemming. Stems
    found in fewer than ``min_df`` documents are dropped.
    """

    def __init__(self, min_df=5, stopwords=None, stem=True, min_len=3):
        self.min_df = min_df
        self.stopwords = stopwords
        self.stem = stem
        self.min_len = min_len

    def _analyzer(self):
        stop = default_stopwords() if self.stopwords is None else frozenset(self.stopwords)
        stemmer = PorterStemmer() if self.stem else None
        cache: dict[str, str] = {}

        def analyze(doc: str) -> list[str]:
            out = []
            for tok in _TOKEN_RE.findall(doc.lower().replace("’", "'")):
                if tok in stop or tok.isdigit() or len(tok) < self.min_len:
                    continue
                tok = tok.replace("'", "")
                if stemmer is not None:
                    s = cache.get(tok)
                    if s is None:
                        s = cache[tok] = stemmer.stem(tok)
                    tok = s
                out.append(tok)
            return out

        return analyze

    def fit(self, docs, y=None):
        self.fit_transform(docs)
        return self

    def fit_transform(self, docs, y=None):
        analyze = self._analyzer()
        tokenized = [analyze(d) for d in docs]
        df: dict[str, int] = {}
        for toks in tokenized:
            for t in set(toks):
                df[t] = df.get(t, 0) + 1
        terms = tuple(sorted(t for t, n in df.items() if n >= self.min_df))
        if not terms:
            raise EmptyVocabulary(f"no term occurs in at least {self.min_df} documents")
        self.vocabulary_ = Vocabulary(terms, np.array([df[t] for t in terms]))
        self._index = self.vocabulary_.index()
        return self._count(tokenized)

    def transform(self, docs):
        check_is_fitted(self, "vocabulary_")
        analyze = self._analyzer()
        return self._count([analyze(d) for d in docs])

    def _count(self, tokenized):
        rows, cols = [], []
        for i, toks in enumerate(tokenized):
            for t in toks:
                j = self._index.get(t)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        data = np.ones(len(rows), dtype=np.int64)
        m = sp.csr_matrix((data, (rows, cols)), shape=(len(tokenized), len(self.vocabulary_.terms)))
        m.sum_duplicates()
        m.sort_indices()
        return m


def build_vocab(docs: Iterable[str], min_df: int = 5, stopwords: Optional[Iterable[str]] = None,
                stem: bool = True, min_len: int = 3):
    """Returns ``(vocabulary, counts, empty)``; ``empty`` flags docs with no retained token."""
    vec = StemmedVectorizer(min_df=min_df, stopwords=stopwords, stem=stem, min_len=min_len)
    counts = vec.fit_transform(list(docs))
    empty = np.asarray(counts.sum(axis=1)).ravel() == 0
    return vec.vocabulary_, counts, empty
