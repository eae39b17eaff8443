"""Model selection by document completion, and summaries of fitted topics."""
from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..errors import EmptyWeek
from .stm import StructuralTopicModel, TopicModel

logger = logging.getLogger(__name__)

# mixed into phi when scoring so words unseen in training stay finite
SCORING_SMOOTH = 1e-8


def split_heldout(counts, fraction: float = 0.1, seed: int = 0):
    """Hold out half the tokens of a random ``fraction`` of documents.

    Returns ``(observed, heldout, docs)``: two count matrices that sum to
    ``counts`` and the indices of the documents that lost tokens.
    """
    counts = sp.csr_matrix(counts)
    rng = np.random.default_rng(seed)
    lengths = np.asarray(counts.sum(axis=1)).ravel()
    eligible = np.flatnonzero(lengths >= 2)
    n_pick = max(1, int(round(fraction * counts.shape[0])))
    docs = np.sort(rng.choice(eligible, size=min(n_pick, len(eligible)), replace=False))
    rows, cols = [], []
    for d in docs:
        lo, hi = counts.indptr[d], counts.indptr[d + 1]
        tokens = np.repeat(counts.indices[lo:hi], counts.data[lo:hi].astype(int))
        rng.shuffle(tokens)
        held = tokens[: len(tokens) // 2]
        rows.extend([d] * len(held))
        cols.extend(held)
    heldout = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=counts.shape)
    heldout.sum_duplicates()
    observed = (counts - heldout).tocsr()
    observed.eliminate_zeros()
    return observed, heldout, docs


def heldout_loglik(model: TopicModel, heldout, docs) -> tuple[float, int]:
    """Log-likelihood and token count of held-out words under each doc's theta."""
    heldout = sp.csr_matrix(heldout)
    phi = (1 - SCORING_SMOOTH) * model.phi + SCORING_SMOOTH / model.V
    ll, tokens = 0.0, 0
    for d in docs:
        lo, hi = heldout.indptr[d], heldout.indptr[d + 1]
        if lo == hi:
            continue
        words, c = heldout.indices[lo:hi], heldout.data[lo:hi]
        p = model.theta[d] @ phi[:, words]
        ll += float(np.sum(c * np.log(p)))
        tokens += int(c.sum())
    return ll, tokens


def select_k(counts, basis, k_grid: Iterable[int], holdout_fraction: float = 0.1, seed: int = 0,
             **fit_kwargs):
    """Grid search over topic counts by held-out document completion.

    Every K is fit on the same split with the same seed. The best K maximizes
    the held-out log-likelihood (equivalently minimizes perplexity).

    Returns ``(best_k, table)`` with one row per K.
    """
    grid = sorted(set(int(k) for k in k_grid))
    if not grid:
        raise ValueError("k grid is empty")
    observed, heldout, docs = split_heldout(counts, holdout_fraction, seed)
    rows = []
    for k in grid:
        est = StructuralTopicModel(n_topics=k, seed=seed, **fit_kwargs).fit(observed, basis)
        ll, n_tok = heldout_loglik(est.model_, heldout, docs)
        rows.append({"k": k, "heldout_loglik": ll, "heldout_tokens": n_tok,
                     "perplexity": float(np.exp(-ll / n_tok)), "iterations": est.n_iter_,
                     "final_elbo": float(est.model_.elbo_trace[-1])})
        logger.info("k=%d heldout loglik %.2f perplexity %.3f", k, ll, rows[-1]["perplexity"])
    table = pd.DataFrame(rows)
    best = int(table.loc[table["heldout_loglik"].idxmax(), "k"])
    return best, table


def top_words(model: TopicModel, topic: int, m: int = 7, terms: Sequence[str] = None) -> list[str]:
    """The ``m`` most probable terms of a topic, ties broken alphabetically."""
    if not 0 <= topic < model.K:
        raise IndexError(f"topic {topic} out of range for K={model.K}")
    terms = list(terms if terms is not None else model.terms)
    row = model.phi[topic]
    order = np.lexsort((np.array(terms, dtype=object), -row))
    return [terms[i] for i in order[:m]]


def expected_topic_share(theta, doc_weeks, week) -> np.ndarray:
    """Average topic proportion (in percent) over the documents of one week."""
    theta = theta.theta if isinstance(theta, TopicModel) else np.asarray(theta)
    mask = np.asarray(doc_weeks) == week
    if not mask.any():
        raise EmptyWeek(f"no documents in week {week}")
    return 100.0 * theta[mask].sum(axis=0) / mask.sum()


def weekly_topic_shares(theta, doc_weeks) -> pd.DataFrame:
    """Expected topic percentage for every week with documents."""
    theta = theta.theta if isinstance(theta, TopicModel) else np.asarray(theta)
    df = pd.DataFrame(100.0 * theta)
    df["week"] = np.asarray(doc_weeks)
    return df.groupby("week").mean().sort_index()


def outlet_topic_shares(theta, doc_outlets, topics: Sequence[int]) -> pd.DataFrame:
    """Per-outlet share of coverage in ``topics``, renormalized over those topics.

    Each outlet's summed proportions on the selected topics are scaled to add
    to 100 percent.
    """
    theta = theta.theta if isinstance(theta, TopicModel) else np.asarray(theta)
    topics = list(topics)
    df = pd.DataFrame(theta[:, topics], columns=topics)
    df["outlet_id"] = np.asarray(doc_outlets)
    sums = df.groupby("outlet_id").sum()
    return 100.0 * sums.div(sums.sum(axis=1), axis=0)


def permute_topics(model: TopicModel, order: Sequence[int]) -> TopicModel:
    """Same model with topics relabeled; ``order[i]`` is the old index of new topic i."""
    order = np.asarray(order)
    from dataclasses import replace
    return replace(model, phi=model.phi[order], theta=model.theta[:, order])
