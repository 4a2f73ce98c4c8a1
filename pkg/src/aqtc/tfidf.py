"""TF-IDF similarity between a question and the scripts of one video."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

_SPLIT = re.compile(r"[^\W_]+")


def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _SPLIT.findall(text.lower())


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: dict
    idf: np.ndarray
    doc_vectors: np.ndarray  # (num_docs, vocab), rows L2-normalized

    def vectorize(self, tokens):
        vec = np.zeros(len(self.vocabulary))
        for tok in tokens:
            col = self.vocabulary.get(tok)
            if col is not None:
                vec[col] += 1.0
        vec *= self.idf
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def build_tfidf(docs):
    """Fit raw-count tf with smoothed idf ``ln((1+N)/(1+df)) + 1``."""
    if not docs:
        raise ValueError("build_tfidf needs at least one document")
    vocab = {tok: i for i, tok in enumerate(sorted({t for doc in docs for t in doc}))}
    n_docs = len(docs)
    counts = np.zeros((n_docs, len(vocab)))
    for row, doc in enumerate(docs):
        for tok in doc:
            counts[row, vocab[tok]] += 1.0
    df = (counts > 0).sum(axis=0)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    weighted = counts * idf
    norms = np.linalg.norm(weighted, axis=1, keepdims=True)
    doc_vectors = np.divide(weighted, norms, out=np.zeros_like(weighted), where=norms > 0)
    return TfidfModel(vocab, idf, doc_vectors)


def hard_ground_weights(model, question_tokens):
    """Cosine similarities to each document, clamped at 0 and sum-normalized.

    Falls back to uniform weights when no document shares a token with the
    question.
    """
    sims = np.maximum(model.doc_vectors @ model.vectorize(question_tokens), 0.0)
    total = sims.sum()
    m = model.doc_vectors.shape[0]
    if total < 1e-12:
        return np.full(m, 1.0 / m)
    return sims / total


def video_weights(question_text, script_texts):
    """Hard-grounding weights for one question over one video's scripts."""
    model = build_tfidf([tokenize(s) for s in script_texts])
    return hard_ground_weights(model, tokenize(question_text))

