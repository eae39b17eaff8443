import warnings

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from newspulse.errors import EmptyVocabulary, EmptyWeek, InsufficientSpan, NoVariation
from newspulse.topics import (BSplineBasis, StructuralTopicModel, build_vocab, expected_topic_share, fit_model,
                              heldout_loglik, krippendorff_alpha, load_labels, load_model, permute_topics,
                              save_model, select_k, spline_basis, split_heldout, top_words)
from newspulse.topics.stm import TopicModel, _Corpus, parallel_e_step, e_step

from topic_oracles import alpha_by_pairs, best_cosines, cox_de_boor, drifting_corpus, planted_corpus


# ---------------------------------------------------------------- vocabulary

def test_stemmer_conflation():
    vocab, counts, empty = build_vocab(["masks masked masking"], min_df=1)
    assert vocab.terms == ("mask",)
    assert counts.toarray().tolist() == [[3]]
    assert not empty.any()


def test_stopword_only_doc_flagged():
    vocab, counts, empty = build_vocab(["the and of it", "school board vote", "board vote"], min_df=1)
    assert empty.tolist() == [True, False, False]
    assert counts[0].sum() == 0


def test_five_doc_hand_count():
    docs = ["Schools reopen; schools test students.",
            "Testing sites open at 9 am.",
            "The school board tested a plan.",
            "Students and teachers wear masks.",
            "Masks, masks and more masks!"]
    vocab, counts, _ = build_vocab(docs, min_df=2)
    # stems appearing in at least two documents, counted by hand
    expected = {"mask": [0, 0, 0, 1, 3], "school": [2, 0, 1, 0, 0], "student": [1, 0, 0, 1, 0],
                "test": [1, 1, 1, 0, 0]}
    assert vocab.terms == tuple(sorted(expected))
    assert counts.toarray().T.tolist() == [expected[t] for t in vocab.terms]
    assert all(vocab.doc_freq >= 2)


def test_digits_short_tokens_dropped_and_empty_vocabulary():
    vocab, counts, _ = build_vocab(["covid 2020 is up 19 ok"], min_df=1)
    assert vocab.terms == ("covid",)
    with pytest.raises(EmptyVocabulary):
        build_vocab(["alpha beta", "gamma"], min_df=2)


# ---------------------------------------------------------------- spline basis

def test_spline_partition_and_left_boundary():
    weeks = np.arange(20)
    B = spline_basis(weeks, df=6)
    assert B.shape == (20, 6)
    assert np.allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert B[0, 0] == 1.0 and np.all(B[0, 1:] == 0)
    assert B[-1, -1] == pytest.approx(1.0)


def test_spline_matches_cox_de_boor_on_even_weeks():
    weeks = np.arange(20, dtype=float)
    sb = BSplineBasis(df=6).fit(weeks)
    assert np.max(np.abs(sb.transform(weeks) - cox_de_boor(weeks, sb.knots_, 3))) < 1e-12


@settings(max_examples=100)
@given(st.lists(st.floats(-50, 150), min_size=1, max_size=30))
def test_spline_partition_of_unity_everywhere(xs):
    sb = BSplineBasis(df=8).fit(np.arange(60))
    B = sb.transform(np.array(xs))
    assert np.allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert (B >= -1e-15).all()


def test_spline_insufficient_span():
    with pytest.raises(InsufficientSpan):
        spline_basis([1, 1, 2, 2, 3], df=4)
    with pytest.raises(InsufficientSpan):
        spline_basis(np.arange(10), df=3)


def test_spline_with_heavy_ties_still_valid():
    weeks = np.concatenate([np.zeros(50), np.arange(12)])
    B = spline_basis(weeks, df=6)
    assert np.allclose(B.sum(axis=1), 1.0)


# ---------------------------------------------------------------- model fitting

@pytest.fixture(scope="module")
def planted_fit():
    X, beta, weeks, _ = planted_corpus(D=600, seed=1)
    B = spline_basis(weeks, df=6)
    return X, beta, weeks, B, fit_model(X, B, 3, seed=1)


def test_planted_topics_recovered(planted_fit):
    X, beta, weeks, B, m = planted_fit
    assert best_cosines(m.phi, beta).min() >= 0.95


def test_fit_invariants(planted_fit):
    *_, m = planted_fit
    assert np.allclose(m.phi.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(m.theta.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(np.diff(m.elbo_trace) >= -1e-6)
    assert m.sigma.shape == (2, 2) and m.gamma.shape == (6, 2)
    assert np.allclose(m.sigma, m.sigma.T)


def test_top_words_are_seed_words(planted_fit):
    X, beta, weeks, B, m = planted_fit
    terms = [f"w{j:03d}" for j in range(beta.shape[1])]
    for k in range(3):
        j = int(np.argmax(beta @ m.phi[k]))
        block = {f"w{v:03d}" for v in np.flatnonzero(beta[j])}
        assert set(top_words(m, k, 7, terms)) <= block


def test_time_trend_recovered():
    X, beta, weeks = drifting_corpus(seed=2)
    m = fit_model(X, spline_basis(weeks, df=4), 2, seed=0)
    a = int(np.argmax(m.phi @ beta[0]))
    rho = spearmanr(weeks, m.theta[:, a]).correlation
    assert rho < 0


def test_seed_determinism():
    X, _, weeks, _ = planted_corpus(D=200, seed=3)
    B = spline_basis(weeks, df=5)
    a = fit_model(X, B, 3, seed=9)
    b = fit_model(X, B, 3, seed=9)
    assert a.gamma.tobytes() == b.gamma.tobytes()
    assert a.phi.tobytes() == b.phi.tobytes()
    assert np.array_equal(a.elbo_trace, b.elbo_trace)


def test_parallel_estep_matches_serial():
    X, _, weeks, _ = planted_corpus(D=300, seed=4)
    B = spline_basis(weeks, df=5)
    serial = StructuralTopicModel(n_topics=3, seed=0, max_iter=15).fit(X, B).model_
    par = StructuralTopicModel(n_topics=3, seed=0, max_iter=15, n_jobs=4).fit(X, B).model_
    assert len(serial.elbo_trace) == len(par.elbo_trace)
    assert np.max(np.abs(serial.elbo_trace - par.elbo_trace)) < 1e-6


def test_transform_new_documents(planted_fit):
    X, beta, weeks, B, m = planted_fit
    est = StructuralTopicModel(n_topics=3, seed=1, max_iter=5).fit(X[:100], B[:100])
    theta = est.transform(X[100:120], B[100:120])
    assert theta.shape == (20, 3) and np.allclose(theta.sum(axis=1), 1)


def test_k_must_be_at_least_two():
    X, _, weeks, _ = planted_corpus(D=50, seed=0)
    with pytest.raises(ValueError):
        fit_model(X, spline_basis(weeks, df=4), 1)


# ---------------------------------------------------------------- selection and summaries

def test_heldout_split_partitions_counts():
    X, *_ = planted_corpus(D=200, seed=5)
    obs, held, docs = split_heldout(X, 0.1, seed=0)
    assert len(docs) == 20
    assert (obs + held - X).nnz == 0
    assert held.min() >= 0 and obs.min() >= 0
    for d in docs:
        assert held[d].sum() == X[d].sum() // 2


def test_select_k_planted_and_perplexity_identity():
    X, _, weeks, _ = planted_corpus(D=600, seed=6)
    best, table = select_k(X, spline_basis(weeks, df=6), [2, 3, 5], seed=6)
    assert best == 3
    assert np.allclose(table.perplexity, np.exp(-table.heldout_loglik / table.heldout_tokens))
    assert table.heldout_loglik.idxmax() == table.perplexity.idxmin()


def _toy_model(phi, theta, terms):
    phi = np.asarray(phi, float)
    K = phi.shape[0]
    return TopicModel(K=K, phi=phi, theta=np.asarray(theta, float),
                      gamma=np.zeros((4, K - 1)), sigma=np.eye(K - 1), elbo_trace=np.array([-1.0]),
                      terms=tuple(terms))


def test_top_words_ties_alphabetical_and_m_above_v():
    m = _toy_model([[0.25] * 4, [0.4, 0.1, 0.4, 0.1]], [[0.5, 0.5]], ["delta", "alpha", "charlie", "bravo"])
    assert top_words(m, 0, 3) == ["alpha", "bravo", "charlie"]
    assert top_words(m, 1, 2) == ["charlie", "delta"]
    assert top_words(m, 0, 10) == ["alpha", "bravo", "charlie", "delta"]
    with pytest.raises(IndexError):
        top_words(m, 2)


def test_expected_topic_share_examples():
    theta = np.array([[0.2, 0.8], [0.6, 0.4], [0.1, 0.9], [0.5, 0.5]])
    weeks = np.array([3, 4, 4, 4])
    assert np.allclose(expected_topic_share(theta, weeks, 3), [20, 80])
    assert np.allclose(expected_topic_share(theta, weeks, 4), [(60 + 10 + 50) / 3, (40 + 90 + 50) / 3])
    assert expected_topic_share(theta, weeks, 4).sum() == pytest.approx(100)
    with pytest.raises(EmptyWeek):
        expected_topic_share(theta, weeks, 5)


def test_label_permutation_invariance(planted_fit):
    X, beta, weeks, B, m = planted_fit
    perm = [2, 0, 1]
    pm = permute_topics(m, perm)
    w = weeks[0]
    assert sorted(expected_topic_share(pm, weeks, w)) == pytest.approx(sorted(expected_topic_share(m, weeks, w)))
    terms = [f"w{j}" for j in range(m.V)]
    assert sorted(tuple(top_words(pm, k, 5, terms)) for k in range(3)) == \
        sorted(tuple(top_words(m, k, 5, terms)) for k in range(3))


def test_serialization_roundtrip(tmp_path, planted_fit):
    *_, m = planted_fit
    m.terms = tuple(f"w{j}" for j in range(m.V))
    m.knots = np.array([0.0, 0, 0, 0, 10.5, 20, 49, 49, 49, 49])
    path = tmp_path / "m.bin"
    save_model(m, path)
    header = path.read_bytes().split(b"\n\n", 1)[0].decode()
    for key in ("K=3", f"V={m.V}", f"D={m.D}", "df=6", "seed=1"):
        assert key in header
    back = load_model(path)
    for attr in ("phi", "theta", "gamma", "sigma", "elbo_trace", "knots"):
        assert np.array_equal(getattr(back, attr), getattr(m, attr))
    assert back.terms == m.terms and back.K == 3


# ---------------------------------------------------------------- agreement

TABLES = [
    [["x", "x"], ["x", "y"], ["y", "y"], ["y", "y"]],
    [["covid", "covid"], ["non", "non"], ["covid", "non"], ["covid", "covid"], ["non", "non"], ["non", "covid"]],
    [["a", "a", "b"], ["b", "b", "b"], ["c", "c", "c"], ["a", None, "a"], ["b", "c", None]],
    [[1, 1], [2, 2], [3, 3], [1, 2], [2, 2], [3, 1], [1, 1]],
    [["p", "q", "p", "p"], ["q", "q", "q", "q"], ["p", "p", None, "p"], ["q", "p", "q", None]],
]


def test_two_by_four_example_by_hand():
    # coincidences: o_xx = 2, o_xy = o_yx = 1, o_yy = 4; n = 8, n_x = 3, n_y = 5
    expected = 1 - (8 - 1) * 2 / (2 * 3 * 5)
    assert krippendorff_alpha(TABLES[0]) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("table", TABLES)
def test_alpha_matches_pairwise_definition(table):
    assert krippendorff_alpha(table) == pytest.approx(alpha_by_pairs(table), abs=1e-9)


def test_perfect_agreement_and_no_variation():
    assert krippendorff_alpha([["a", "a"], ["b", "b"], ["a", "a"]]) == 1.0
    with pytest.warns(NoVariation):
        assert krippendorff_alpha([["a", "a"], ["a", "a"]]) == 1.0


def test_alpha_requires_two_items_and_annotators():
    with pytest.raises(ValueError):
        krippendorff_alpha([["a", "b"]])
    with pytest.raises(ValueError):
        krippendorff_alpha([["a"], ["b"]])


def test_seventy_nine_items_three_disagreements():
    # nine covid topics out of 79 with three split decisions gives alpha in the low 0.8s
    table = [["covid", "covid"]] * 8 + [["covid", "non"]] * 2 + [["non", "covid"]] + [["non", "non"]] * 68
    a = krippendorff_alpha(table)
    assert 0.75 < a < 0.9


def test_label_file_resolution(tmp_path):
    p = tmp_path / "labels.csv"
    p.write_text("topic,annotator,label\n0,a1,covid\n0,a2,covid\n1,a1,covid\n1,a2,non-covid\n"
                 "2,a1,non-covid\n1,final,covid\n")
    labels = load_labels(p)
    assert labels[0].final == "covid"
    assert labels[1].final == "covid"
    assert labels[2].final is None  # second annotator missing
