import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqtc.tfidf import build_tfidf, hard_ground_weights, tokenize
from conftest import brute_force_weights


@pytest.mark.parametrize("text, tokens", [
    ("Press the POWER button.", ["press", "the", "power", "button"]),
    ("", []),
    ("a--b  C", ["a", "b", "c"]),
    ("under_score x", ["under", "score", "x"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_single_doc_idf():
    model = build_tfidf([["knob"]])
    assert model.idf.tolist() == [1.0]
    assert model.doc_vectors.tolist() == [[1.0]]


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_token_in_every_doc_has_unit_idf(n):
    model = build_tfidf([["common", f"own{i}"] for i in range(n)])
    assert model.idf[model.vocabulary["common"]] == 1.0


def test_disjoint_docs_are_orthogonal():
    model = build_tfidf([["a", "b"], ["c", "d"]])
    assert model.doc_vectors[0] @ model.doc_vectors[1] == 0.0
    np.testing.assert_allclose(np.linalg.norm(model.doc_vectors, axis=1), 1.0, atol=1e-12)


def test_matching_function_takes_all_weight():
    docs = [["red", "lever"], ["blue", "dial", "spin"], ["green", "switch"]]
    w = hard_ground_weights(build_tfidf(docs), ["blue", "dial", "spin"])
    assert w.tolist() == pytest.approx(brute_force_weights(docs, ["blue", "dial", "spin"]), abs=1e-12)
    assert w[1] == pytest.approx(1.0, abs=1e-12) and w[0] == 0 and w[2] == 0


def test_out_of_vocabulary_question_is_uniform():
    w = hard_ground_weights(build_tfidf([["a"], ["b"], ["c"], ["d"]]), ["zzz"])
    assert w.tolist() == [0.25] * 4


def test_single_function():
    assert hard_ground_weights(build_tfidf([["x", "y"]]), ["x"]).tolist() == [1.0]


vocab = st.sampled_from([f"t{i}" for i in range(12)])
corpus = st.lists(st.lists(vocab, min_size=1, max_size=8), min_size=1, max_size=6)


@settings(max_examples=60)
@given(corpus, st.lists(vocab, max_size=6))
def test_weights_match_oracle_and_normalize(docs, question):
    w = hard_ground_weights(build_tfidf(docs), question)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-9
    np.testing.assert_allclose(w, brute_force_weights(docs, question), atol=1e-9)


@settings(max_examples=30)
@given(corpus, st.lists(vocab, min_size=1, max_size=6), st.sampled_from([2, 3]))
def test_duplicating_documents_leaves_weights_unchanged(docs, question, k):
    base = hard_ground_weights(build_tfidf(docs), question)
    dup = hard_ground_weights(build_tfidf([d * k for d in docs]), question)
    np.testing.assert_allclose(base, dup, atol=1e-9)
