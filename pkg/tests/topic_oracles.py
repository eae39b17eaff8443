"""Synthetic corpora with known topics, plus reference B-spline and alpha computations."""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp


def planted_corpus(D=1000, words_per_topic=30, K=3, seed=0, doc_len=(40, 100), n_weeks=50, conc=0.5):
    """Documents mixing K topics over disjoint vocabulary blocks.

    Returns ``(counts, beta, weeks, theta)`` where ``beta`` is the generating
    topic-word matrix.
    """
    rng = np.random.default_rng(seed)
    V = K * words_per_topic
    beta = np.zeros((K, V))
    for k in range(K):
        beta[k, k * words_per_topic:(k + 1) * words_per_topic] = rng.dirichlet(np.ones(words_per_topic))
    weeks = rng.integers(0, n_weeks, D)
    theta = rng.dirichlet(np.full(K, conc), size=D)
    rows, cols = [], []
    for d in range(D):
        z = rng.choice(K, size=int(rng.integers(*doc_len)), p=theta[d])
        for k in range(K):
            m = int((z == k).sum())
            if m:
                rows += [d] * m
                cols += list(rng.choice(V, size=m, p=beta[k]))
    X = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(D, V))
    X.sum_duplicates()
    return X, beta, weeks, theta


def drifting_corpus(D=600, seed=0, n_weeks=40):
    """Two themes whose mix shifts from theme A to theme B over time."""
    rng = np.random.default_rng(seed)
    V = 40
    beta = np.zeros((2, V))
    beta[0, :20] = rng.dirichlet(np.ones(20))
    beta[1, 20:] = rng.dirichlet(np.ones(20))
    weeks = rng.integers(0, n_weeks, D)
    share_a = 0.9 - 0.8 * weeks / (n_weeks - 1)
    rows, cols = [], []
    for d in range(D):
        n = int(rng.integers(30, 60))
        n_a = rng.binomial(n, share_a[d])
        for k, m in ((0, n_a), (1, n - n_a)):
            if m:
                rows += [d] * m
                cols += list(rng.choice(V, size=m, p=beta[k]))
    X = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(D, V))
    X.sum_duplicates()
    return X, beta, weeks


def best_cosines(phi, beta):
    """For each generating topic, the best cosine similarity with any fitted topic."""
    num = beta @ phi.T
    den = np.linalg.norm(beta, axis=1)[:, None] * np.linalg.norm(phi, axis=1)[None, :]
    return (num / den).max(axis=1)


def cox_de_boor(x, knots, degree):
    """Evaluate every B-spline basis function at ``x`` by the recursive definition."""
    t = list(knots)
    n_basis = len(t) - degree - 1

    def N(i, p, u):
        if p == 0:
            if t[i] <= u < t[i + 1]:
                return 1.0
            # close the last non-empty interval on the right
            if u == t[-1] and t[i] < t[i + 1] == t[-1]:
                return 1.0
            return 0.0
        left = 0.0 if t[i + p] == t[i] else (u - t[i]) / (t[i + p] - t[i]) * N(i, p - 1, u)
        right = 0.0 if t[i + p + 1] == t[i + 1] else (t[i + p + 1] - u) / (t[i + p + 1] - t[i + 1]) * N(i + 1, p - 1, u)
        return left + right

    return np.array([[N(i, degree, float(u)) for i in range(n_basis)] for u in np.atleast_1d(x)])


def alpha_by_pairs(table):
    """Nominal Krippendorff alpha from its pairwise-disagreement definition.

    Observed disagreement averages mismatched ordered pairs within each unit
    (weighted by 1/(m_u - 1)); expected disagreement uses every ordered pair of
    pairable values drawn from different positions across the whole table.
    """
    units = [[v for v in row if v is not None] for row in table]
    units = [u for u in units if len(u) >= 2]
    values = [v for u in units for v in u]
    n = len(values)
    d_o = sum(sum(a != b for a, b in itertools.permutations(u, 2)) / (len(u) - 1) for u in units) / n
    d_e = sum(a != b for a, b in itertools.permutations(values, 2)) / (n * (n - 1))
    return 1.0 - d_o / d_e


def alpha_by_coincidence(table):
    """Nominal Krippendorff alpha from an explicitly tallied coincidence matrix."""
    units = [[v for v in row if v is not None] for row in table]
    units = [u for u in units if len(u) >= 2]
    cats = sorted({v for u in units for v in u}, key=str)
    idx = {c: i for i, c in enumerate(cats)}
    o = np.zeros((len(cats), len(cats)))
    for u in units:
        m = len(u)
        for i in range(m):
            for j in range(m):
                if i != j:
                    o[idx[u[i]], idx[u[j]]] += 1.0 / (m - 1)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    observed = o.sum() - np.trace(o)
    expected = (n * n - (n_c ** 2).sum()) / (n - 1)
    return 1.0 - observed / expected
