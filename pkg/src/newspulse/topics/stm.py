"""Logistic-normal topic model with covariate-dependent prevalence.

Each document's topic log-ratios ``eta_d`` (K-1 free, the last topic pinned
at 0) are drawn from ``N(x_d' gamma, sigma)``, where ``x_d`` is the time
spline basis row. Inference is variational EM with a diagonal Gaussian
posterior ``q(eta_d) = N(lam_d, diag(nu_d))``. Word assignments and the
log-normalizer auxiliary are optimized in closed form, leaving a per-document
bound in ``(lam, nu)``::

    sum_v c_dv log sum_k beta_kv exp(lam_k)
    - N_d log(1 + sum_k exp(lam_k + nu_k / 2))
    - 1/2 (lam - mu)' S^-1 (lam - mu) - 1/2 tr(S^-1 diag nu) - 1/2 log|2 pi S|
    + 1/2 sum_k log(2 pi e nu_k)

The E-step only ever accepts steps that raise this bound and the M-step
updates are exact maximizers, so the bound never decreases across
iterations apart from rounding.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import Diverged

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


@dataclass
class TopicModel:
    """Fitted topic model state."""

    K: int
    phi: np.ndarray          # K x V topic-word distributions
    theta: np.ndarray        # D x K document-topic proportions
    gamma: np.ndarray        # P x (K-1) prevalence coefficients
    sigma: np.ndarray        # (K-1) x (K-1) prevalence covariance
    elbo_trace: np.ndarray
    terms: tuple = ()
    lam: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int = 0
    converged: bool = False

    @property
    def V(self):
        return self.phi.shape[1]

    @property
    def D(self):
        return self.theta.shape[0]

    @property
    def df(self):
        return self.gamma.shape[0]

    def prevalence(self, basis: np.ndarray) -> np.ndarray:
        """Prior mean topic proportions at the given basis rows."""
        eta = np.hstack([basis @ self.gamma, np.zeros((basis.shape[0], 1))])
        return _softmax(eta)


def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


class _Corpus:
    """Sparse counts flattened to nonzero triplets ordered by document."""

    def __init__(self, counts):
        counts = sp.csr_matrix(counts, dtype=float)
        counts.sum_duplicates()
        counts.sort_indices()
        self.D, self.V = counts.shape
        self.indptr = counts.indptr.astype(np.int64)
        self.lens = np.diff(self.indptr)
        self.doc = np.repeat(np.arange(self.D), self.lens)
        self.word = counts.indices.astype(np.int64)
        self.count = counts.data.astype(float)
        self.N = np.asarray(counts.sum(axis=1)).ravel()
        self.by_word = sp.csr_matrix((np.ones(len(self.count)), (self.word, np.arange(len(self.count)))),
                                     shape=(self.V, len(self.count)))
        self.csr = counts


class _Block:
    """A subset of documents with their nonzero entries, for vectorized E-steps."""

    def __init__(self, corpus: _Corpus, docs: np.ndarray, beta_nz: np.ndarray):
        starts = corpus.indptr[docs]
        lens = corpus.lens[docs]
        offsets = np.concatenate([[0], np.cumsum(lens)[:-1]]) if len(lens) else np.zeros(0, dtype=np.int64)
        nz = np.repeat(starts - offsets, lens) + np.arange(lens.sum())
        self.n = len(docs)
        self.lens = lens
        self.offsets = offsets
        self.local = np.repeat(np.arange(self.n), lens)
        self.count = corpus.count[nz]
        self.beta_nz = beta_nz[nz]
        self.N = corpus.N[docs]

    def segsum(self, values):
        """Sum rows of ``values`` (one per nonzero) within each document."""
        out = np.zeros((self.n,) + values.shape[1:])
        keep = self.lens > 0
        if keep.any():
            out[keep] = np.add.reduceat(values, self.offsets[keep], axis=0)
        return out


def _word_terms(block: _Block, lam):
    """Per-doc ``sum_v c log sum_k beta exp(lam)`` and the responsibilities."""
    lam_full = np.hstack([lam, np.zeros((lam.shape[0], 1))])
    m = lam_full.max(axis=1)
    e = np.exp(lam_full - m[:, None])
    weighted = block.beta_nz * e[block.local]
    s = np.einsum("nk->n", weighted)
    with np.errstate(divide="ignore"):
        ll = np.bincount(block.local, weights=block.count * (np.log(s) + m[block.local]), minlength=block.n)
    resp = weighted / np.where(s > 0, s, 1.0)[:, None]
    return ll, resp


def _log_zeta(lam, nu):
    a = np.hstack([lam + nu / 2, np.zeros((lam.shape[0], 1))])
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))).ravel()


def _prior_terms(N, lam, nu, mu, sig_inv, logdet):
    k1 = lam.shape[1]
    r = lam - mu
    quad = np.einsum("dk,kl,dl->d", r, sig_inv, r)
    tr = nu @ np.diag(sig_inv)
    return (-N * _log_zeta(lam, nu) - 0.5 * quad - 0.5 * tr - 0.5 * (logdet + k1 * LOG_2PI)
            + 0.5 * np.sum(np.log(nu) + 1 + LOG_2PI, axis=1))


def _bound(block: _Block, lam, nu, mu, sig_inv, logdet):
    return _word_terms(block, lam)[0] + _prior_terms(block.N, lam, nu, mu, sig_inv, logdet)


def _line_search(objective, x, step, f, positive=False, max_halving=30):
    """Per-row backtracking: accept the largest ``2^-j`` step that does not lower ``f``.

    ``objective(rows, cand)`` evaluates the bound for the given row subset.
    Returns the new point, its bound and the max-abs move of each row.
    """
    x_out, f_out = x.copy(), f.copy()
    moved = np.zeros(x.shape[0])
    todo = np.flatnonzero(np.any(step != 0, axis=1))
    t = 1.0
    for _ in range(max_halving):
        if len(todo) == 0:
            break
        cand = x[todo] + t * step[todo]
        ok = np.all(cand > 0, axis=1) if positive else np.ones(len(todo), dtype=bool)
        f_cand = np.full(len(todo), -np.inf)
        if ok.any():
            f_cand[ok] = objective(todo[ok], cand[ok])
        good = ok & (f_cand >= f[todo])
        rows = todo[good]
        x_out[rows] = cand[good]
        f_out[rows] = f_cand[good]
        moved[rows] = np.max(np.abs(cand[good] - x[rows]), axis=1)
        todo = todo[~good]
        t /= 2
    return x_out, f_out, moved


def e_step(corpus: _Corpus, beta, lam, nu, mu, sig_inv, logdet, tol=1e-6, max_iter=50):
    """Raise each document's bound by alternating damped Newton steps in lam and nu.

    Every accepted step is checked to not lower the bound. Documents drop out
    once neither parameter moves by ``tol``.
    """
    beta_nz = beta[:, corpus.word].T
    k1 = lam.shape[1]
    lam, nu = lam.copy(), nu.copy()
    eye = np.eye(k1)
    diag_inv = np.diag(sig_inv)
    active = np.arange(corpus.D)
    for _ in range(max_iter):
        if len(active) == 0:
            break
        blk = _Block(corpus, active, beta_nz)
        la, na, ma = lam[active], nu[active], mu[active]
        f = _bound(blk, la, na, ma, sig_inv, logdet)

        # lam: exact Newton where the Hessian is negative definite, else the
        # concave minorizer's curvature (always an ascent direction)
        _, resp = _word_terms(blk, la)
        r = resp[:, :k1]
        g_word = blk.segsum(blk.count[:, None] * r)
        pi = np.exp(la + na / 2 - _log_zeta(la, na)[:, None])
        grad = g_word - blk.N[:, None] * pi - (la - ma) @ sig_inv
        curv = blk.N[:, None, None] * (pi[:, :, None] * eye - pi[:, :, None] * pi[:, None, :]) + sig_inv
        outer = blk.count[:, None, None] * (r[:, :, None] * eye - r[:, :, None] * r[:, None, :])
        exact = curv - blk.segsum(outer)
        use_exact = np.linalg.eigvalsh(exact)[:, 0] > 1e-8
        hess = np.where(use_exact[:, None, None], exact, curv)
        step = np.linalg.solve(hess, grad[:, :, None])[:, :, 0]

        def f_lam(rows, cand):
            sub = _Block(corpus, active[rows], beta_nz)
            return _bound(sub, cand, na[rows], ma[rows], sig_inv, logdet)

        la_new, f_new, moved_l = _line_search(f_lam, la, step, f)

        # nu: Newton on the concave nu-subproblem, kept positive
        pi = np.exp(la_new + na / 2 - _log_zeta(la_new, na)[:, None])
        grad_nu = -blk.N[:, None] * pi / 2 - diag_inv / 2 + 1 / (2 * na)
        hess_nu = (blk.N[:, None, None] / 4 * (pi[:, :, None] * eye - pi[:, :, None] * pi[:, None, :])
                   + (1 / (2 * na ** 2))[:, :, None] * eye)
        step_nu = np.linalg.solve(hess_nu, grad_nu[:, :, None])[:, :, 0]

        def f_nu(rows, cand):
            # word terms do not depend on nu
            return word_ll[rows] + _prior_terms(blk.N[rows], la_new[rows], cand, ma[rows], sig_inv, logdet)

        word_ll = _word_terms(blk, la_new)[0]
        na_new, _, moved_n = _line_search(f_nu, na, step_nu, f_new, positive=True)

        lam[active], nu[active] = la_new, na_new
        active = active[np.maximum(moved_l, moved_n) >= tol]
    return lam, nu


def parallel_e_step(corpus: _Corpus, beta, lam, nu, mu, sig_inv, logdet, tol=1e-6, max_iter=50,
                    n_jobs=1):
    """:func:`e_step` run over document chunks in a thread pool."""
    if n_jobs is None or n_jobs <= 1 or corpus.D < 2 * n_jobs:
        return e_step(corpus, beta, lam, nu, mu, sig_inv, logdet, tol, max_iter)
    chunks = np.array_split(np.arange(corpus.D), n_jobs)
    csr = corpus.csr

    def run(idx):
        sub = _Corpus(csr[idx[0]:idx[-1] + 1])
        return e_step(sub, beta, lam[idx], nu[idx], mu[idx], sig_inv, logdet, tol, max_iter)

    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(run, chunks))
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def _seed_topics(corpus: _Corpus, K: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point choice of K documents from a random start, blended with Dirichlet noise."""
    X = corpus.csr
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    U = sp.diags(1.0 / np.where(norms > 0, norms, 1.0)) @ X
    candidates = np.flatnonzero(corpus.N > 0)
    chosen = [int(rng.choice(candidates))]
    sim = np.full(corpus.D, -np.inf)
    for _ in range(1, K):
        uc = U[chosen[-1]].toarray().ravel()
        sim = np.maximum(sim, U @ uc)
        # farthest in cosine terms from every seed so far
        score = np.where(corpus.N > 0, -sim, -np.inf)
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
    N = np.where(corpus.N > 0, corpus.N, 1.0)
    P = sp.diags(1.0 / N) @ X
    noise = rng.dirichlet(np.ones(corpus.V), size=K)
    seeds = np.vstack([P[c].toarray().ravel() for c in chosen])
    beta = seeds + 0.1 * noise
    return beta / beta.sum(axis=1, keepdims=True)


class StructuralTopicModel(BaseEstimator, TransformerMixin):
    """Variational EM for a topic model whose prevalence depends on covariates.

    Parameters
    ----------
    n_topics : int
    max_iter : int
        EM iterations.
    tol : float
        Stop when the relative change of the bound falls below this.
    seed : int
    e_step_tol, e_step_max_iter :
        Per-document inner optimization controls.
    elbo_slack : float
        Tolerated decrease of the bound per iteration before it counts as a
        drop; three consecutive drops raise :class:`Diverged`.
    n_jobs : int
        Threads for the E-step. Documents are split into fixed chunks, so the
        result does not depend on this setting.
    """

    def __init__(self, n_topics=10, max_iter=200, tol=1e-5, seed=0, e_step_tol=1e-6,
                 e_step_max_iter=50, elbo_slack=1e-6, n_jobs=1):
        self.n_topics = n_topics
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed
        self.e_step_tol = e_step_tol
        self.e_step_max_iter = e_step_max_iter
        self.elbo_slack = elbo_slack
        self.n_jobs = n_jobs

    def fit(self, counts, basis, y=None):
        corpus = _Corpus(counts)
        X = np.asarray(basis, dtype=float)
        if X.shape[0] != corpus.D:
            raise ValueError("basis must have one row per document")
        K = int(self.n_topics)
        if K < 2:
            raise ValueError("n_topics must be at least 2")
        k1 = K - 1
        rng = np.random.default_rng(self.seed)
        beta = _seed_topics(corpus, K, rng)
        gamma = np.zeros((X.shape[1], k1))
        sigma = np.eye(k1)
        lam = np.zeros((corpus.D, k1))
        nu = np.ones((corpus.D, k1))
        everything = _Block(corpus, np.arange(corpus.D), beta[:, corpus.word].T)

        trace = []
        drops = 0
        converged = False
        for it in range(self.max_iter):
            sig_inv = np.linalg.inv(sigma)
            logdet = np.linalg.slogdet(sigma)[1]
            lam, nu = parallel_e_step(corpus, beta, lam, nu, X @ gamma, sig_inv, logdet,
                                      self.e_step_tol, self.e_step_max_iter, self.n_jobs)

            # M-step: each update is the exact maximizer given the others
            everything.beta_nz = beta[:, corpus.word].T
            _, resp = _word_terms(everything, lam)
            expected = (corpus.by_word @ (corpus.count[:, None] * resp)).T
            totals = expected.sum(axis=1, keepdims=True)
            beta = np.where(totals > 0, expected / np.where(totals > 0, totals, 1.0), beta)
            gamma = np.linalg.lstsq(X, lam, rcond=None)[0]
            resid = lam - X @ gamma
            sigma = (resid.T @ resid + np.diag(nu.sum(axis=0))) / corpus.D
            sigma = (sigma + sigma.T) / 2

            sig_inv = np.linalg.inv(sigma)
            logdet = np.linalg.slogdet(sigma)[1]
            everything.beta_nz = beta[:, corpus.word].T
            elbo = float(np.sum(_bound(everything, lam, nu, X @ gamma, sig_inv, logdet)))
            if trace and elbo < trace[-1] - self.elbo_slack:
                drops += 1
                logger.warning("bound fell by %.3g at iteration %d", trace[-1] - elbo, it)
                if drops >= 3:
                    raise Diverged(f"bound decreased for 3 consecutive iterations (iteration {it})")
            else:
                drops = 0
            trace.append(elbo)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) / abs(trace[-2]) < self.tol:
                converged = True
                break

        lam_full = np.hstack([lam, np.zeros((corpus.D, 1))])
        self.model_ = TopicModel(
            K=K, phi=beta, theta=_softmax(lam_full), gamma=gamma, sigma=sigma,
            elbo_trace=np.asarray(trace), lam=lam, nu=nu, seed=self.seed, converged=converged)
        self.n_iter_ = len(trace)
        return self

    def transform(self, counts, basis):
        """Topic proportions for new documents under the fitted globals."""
        check_is_fitted(self, "model_")
        return infer_theta(self.model_, counts, basis, self.e_step_tol, self.e_step_max_iter)


def infer_theta(model: TopicModel, counts, basis, e_step_tol=1e-6, e_step_max_iter=50) -> np.ndarray:
    """Topic proportions of documents under fixed topics and prevalence prior."""
    corpus = _Corpus(counts)
    k1 = model.K - 1
    mu = np.asarray(basis, dtype=float) @ model.gamma
    sig_inv = np.linalg.inv(model.sigma)
    logdet = np.linalg.slogdet(model.sigma)[1]
    lam, _ = e_step(corpus, model.phi, mu.copy(), np.ones((corpus.D, k1)), mu, sig_inv, logdet,
                    e_step_tol, e_step_max_iter)
    return _softmax(np.hstack([lam, np.zeros((corpus.D, 1))]))


def fit_model(counts, basis, K: int, seed: int = 0, **kwargs) -> TopicModel:
    return StructuralTopicModel(n_topics=K, seed=seed, **kwargs).fit(counts, basis).model_
