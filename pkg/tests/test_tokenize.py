from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmr.errors import DuplicateDocId
from dmr.tokenize import TokenizerConfig, ingest_corpus, tokenize_document


def test_stopwords_then_suffixes():
    cfg = TokenizerConfig(stopwords=frozenset({"the"}), suffixes_to_strip=("s", "ing"))
    assert tokenize_document("The dogs barking", cfg) == Counter({"dog": 1, "bark": 1})


def test_punctuation_runs_are_tokens():
    assert tokenize_document("great :-) great") == Counter({"great": 2, ":-)": 1})
    cfg = TokenizerConfig(keep_punctuation_runs=False)
    assert tokenize_document("great :-) great", cfg) == Counter({"great": 2})


def test_empty_text():
    assert tokenize_document("") == Counter()


def test_short_stems_are_kept_whole():
    cfg = TokenizerConfig(stopwords=frozenset(), suffixes_to_strip=("s", "ly"))
    assert tokenize_document("is fly only", cfg) == Counter({"is": 1, "fly": 1, "only": 1})


def test_longest_suffix_first_and_only_once():
    cfg = TokenizerConfig(stopwords=frozenset(), suffixes_to_strip=("s", "ings"))
    assert tokenize_document("paintings", cfg) == Counter({"paint": 1})


def test_threshold_is_strict():
    docs = [(1, "x y"), (2, "y"), (3, "y z")]
    _, vocab = ingest_corpus(docs, TokenizerConfig(min_doc_count=1, stopwords=frozenset()))
    assert "x" not in vocab.tokens and "y" in vocab.tokens
    _, vocab0 = ingest_corpus(docs, TokenizerConfig(min_doc_count=0, stopwords=frozenset()))
    assert set(vocab0.tokens) == {"x", "y", "z"}


def test_doc_totals_over_retained_vocabulary():
    docs = [(1, "aa aa bb"), (2, "cc"), (3, "aa bb bb bb bb dd")]
    cfg = TokenizerConfig(min_doc_count=1, stopwords=frozenset(), suffixes_to_strip=())
    counts, vocab = ingest_corpus(docs, cfg)
    # brute-force recount after filtering
    df = Counter(t for _, txt in docs for t in set(txt.split()))
    keep = {t for t, k in df.items() if k > 1}
    expect = [sum(1 for t in txt.split() if t in keep) for _, txt in docs]
    np.testing.assert_array_equal(counts.doc_totals, expect)
    np.testing.assert_array_equal(counts.doc_totals, [3, 0, 5])


def test_vocabulary_order_and_duplicates():
    counts, vocab = ingest_corpus([(1, "b a a c"), (2, "c b")], TokenizerConfig(stopwords=frozenset()))
    assert vocab.tokens == ("a", "b", "c")
    with pytest.raises(DuplicateDocId):
        ingest_corpus([(1, "a"), (1, "b")])


words = st.sampled_from(["cat", "cats", "dog", "running", "quickly", "the", ":)", "ok!", "a"])
corpus = st.lists(st.lists(words, max_size=12).map(" ".join), min_size=1, max_size=8)


@given(corpus, st.integers(0, 3))
def test_ingest_properties(texts, k):
    docs = list(enumerate(texts))
    c1, v1 = ingest_corpus(docs, TokenizerConfig(min_doc_count=k))
    c2, v2 = ingest_corpus(docs, TokenizerConfig(min_doc_count=k))
    assert c1 == c2 and v1 == v2
    _, v_hi = ingest_corpus(docs, TokenizerConfig(min_doc_count=k + 1))
    assert set(v_hi.tokens) <= set(v1.tokens)
    assert c1.grand_total == int(c1.token_totals.sum())


@given(corpus)
def test_vocabulary_independent_of_document_order(texts):
    docs = list(enumerate(texts))
    _, v1 = ingest_corpus(docs)
    _, v2 = ingest_corpus(docs[::-1])
    assert v1 == v2
