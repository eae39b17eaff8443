import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newspulse.classify import (LIMITED_TERMS, KeywordFilter, classify_text, load_filters,
                                load_keyword_file, reclassify_store)
from newspulse.corpus import CorpusStore
from test_corpus import raw

LIMITED = KeywordFilter.limited()
FILTERS = load_filters()


def test_limited_hit_listed_once():
    m = classify_text("The coronavirus pandemic upended schools. Coronavirus!", LIMITED)
    assert m.match and m.hits == ["coronavirus"]


def test_empty_text_never_matches():
    for f in FILTERS.values():
        assert classify_text("", f) == (False, [])


def test_token_boundary_blocks_substring():
    assert not classify_text("Officials praised Covidien's donation.", LIMITED).match


def test_covid_suffix_variants():
    for text in ("covid19 cases", "COVID-19 cases", "Covid 19", "new covid2020 wave"):
        assert "covid" in classify_text(text, LIMITED).hits
    assert classify_text("covid19", LIMITED).hits == ["covid", "covid19"]


@pytest.mark.parametrize("text", ["sars cov 2", "sars-cov-2", "SARS‑CoV‑2", "SARS–CoV–2",
                                  "ＳＡＲＳ-ＣｏＶ-２"])
def test_hyphen_space_equivalence(text):
    assert classify_text(f"the {text} virus", LIMITED).hits == ["sars-cov-2"]


def test_phrase_requires_consecutive_tokens():
    f = KeywordFilter("full", frozenset({"social distancing"}))
    assert classify_text("Social-distancing rules", f).match
    assert not classify_text("social events and distancing", f).match


def test_filter_validation():
    with pytest.raises(ValueError):
        KeywordFilter("full", frozenset({"Covid"}))
    with pytest.raises(ValueError):
        KeywordFilter("full", frozenset({"#covid"}))
    with pytest.raises(ValueError):
        KeywordFilter("partial", frozenset({"covid"}))


def test_limited_folded_into_full(tmp_path):
    p = tmp_path / "kw.txt"
    p.write_text("# my list\nlockdown\n@cdcgov\nMasks\n\n")
    assert load_keyword_file(p) == {"lockdown", "masks"}
    filters = load_filters(p)
    assert filters["limited"].keywords <= filters["full"].keywords
    assert set(LIMITED_TERMS) <= filters["full"].keywords


def test_bundled_full_list_contains_limited():
    assert set(LIMITED_TERMS) <= FILTERS["full"].keywords
    assert all(t == t.lower() and not t.startswith(("#", "@")) for t in FILTERS["full"].keywords)


words = st.sampled_from(["the", "covid", "covid19", "covidien", "corona", "virus", "coronavirus", "sars",
                         "cov", "2", "pandemic", "mask", "lockdown", "school", "-", " ", "19", "vaccine",
                         "quarantine", "social", "distancing", "—", "SARS-CoV-2"])
texts = st.lists(words, max_size=25).map(" ".join)


@settings(max_examples=300)
@given(texts)
def test_limited_implies_full(text):
    if classify_text(text, FILTERS["limited"]).match:
        assert classify_text(text, FILTERS["full"]).match


@settings(max_examples=200)
@given(texts)
def test_case_insensitive(text):
    for f in FILTERS.values():
        assert classify_text(text.upper(), f) == classify_text(text, f)
        assert classify_text(text.title(), f) == classify_text(text, f)


@settings(max_examples=200)
@given(texts, st.sampled_from(["-", "‐", "‑", "–", "—", "−", " "]))
def test_hyphen_variants_equivalent(text, dash):
    for f in FILTERS.values():
        assert classify_text(text.replace("-", dash), f) == classify_text(text, f)


def test_reclassify_store_counts_and_idempotence(tmp_path):
    s = CorpusStore(tmp_path)
    for i, t in enumerate(["coronavirus cases rise", "covid testing", "SARS-CoV-2 found",
                           "football season", "council meeting"]):
        s.ingest_article(raw(f"http://a/{i}", t))
    lim_only = {"full": KeywordFilter("full", frozenset(LIMITED_TERMS)), "limited": LIMITED}
    assert reclassify_store(s, lim_only) == {"full": 3, "limited": 3}
    c1 = reclassify_store(s)
    assert c1["limited"] == 3 and c1["full"] >= 3
    assert reclassify_store(s) == c1
    for a in s.articles():
        assert a.is_covid_full >= a.is_covid_limited


def test_reclassify_empty_store(tmp_path):
    assert reclassify_store(CorpusStore(tmp_path)) == {"full": 0, "limited": 0}
