"""Small synthetic corpora for desk-scale training runs and tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import EOS, Document, Vocab


@dataclass
class SyntheticCorpus:
    docs: list[Document]
    vocab: Vocab
    labels: list[list[bool]] | None = None


def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def templated_corpus(n_docs: int, rng: np.random.Generator, min_sentences: int = 4,
                     max_sentences: int = 8, n_subjects: int = 8, n_objects: int = 8,
                     n_verbs: int = 8, n_modifiers: int = 8) -> SyntheticCorpus:
    """Documents whose sentences follow ``subject verb object modifier .``.

    Each document fixes one (subject, object) pair.  The verb depends only on
    the sentence position; the modifier on document and position together.
    A masked sentence is therefore recoverable from its neighbours plus its
    position, which makes the corpus learnable to near-zero loss.
    """
    if n_docs > n_subjects * n_objects:
        raise ValueError("not enough (subject, object) pairs for distinct documents")
    subjects, objects = _words("s", n_subjects), _words("o", n_objects)
    verbs, mods = _words("v", n_verbs), _words("m", n_modifiers)
    vocab = Vocab(subjects + objects + verbs + mods + ["."])
    pairs = rng.permutation(n_subjects * n_objects)[:n_docs]
    docs = []
    for t, pair in enumerate(pairs):
        s, o = subjects[pair // n_objects], objects[pair % n_objects]
        shift = int(rng.integers(n_modifiers))
        n = int(rng.integers(min_sentences, max_sentences + 1))
        sentences = []
        for k in range(n):
            words = [s, verbs[k % n_verbs], o, mods[(shift + k) % n_modifiers], "."]
            sentences.append(vocab.ids(words) + [EOS])
        docs.append(Document(sentences))
    return SyntheticCorpus(docs, vocab)


def keyword_corpus(n_docs: int, rng: np.random.Generator, n_words: int = 40,
                   marker_rate: float = 0.3, min_sentences: int = 4, max_sentences: int = 8,
                   min_len: int = 4, max_len: int = 8, vocab: Vocab | None = None) -> SyntheticCorpus:
    """Random-word documents with a planted marker token.

    A sentence is labelled True iff it contains ``*``.  Documents repeat a
    per-document set of content words so the masked-sentence objective has
    context to exploit.
    """
    words = _words("w", n_words)
    if vocab is None:
        vocab = Vocab(words + ["*", "."])
    word_ids = np.array(vocab.ids(words))
    marker, period = vocab.id("*"), vocab.id(".")
    docs, labels = [], []
    for _ in range(n_docs):
        topic = rng.choice(word_ids, size=6, replace=False)
        n = int(rng.integers(min_sentences, max_sentences + 1))
        sentences, flags = [], []
        for _ in range(n):
            length = int(rng.integers(min_len, max_len + 1))
            from_topic = rng.random(length) < 0.7
            body = np.where(from_topic, rng.choice(topic, size=length), rng.choice(word_ids, size=length))
            body = [int(b) for b in body]
            has = bool(rng.random() < marker_rate)
            if has:
                body[int(rng.integers(length))] = marker
            sentences.append(body + [period, EOS])
            flags.append(has)
        if not any(flags):
            k = int(rng.integers(n))
            sentences[k][int(rng.integers(len(sentences[k]) - 2))] = marker
            flags[k] = True
        docs.append(Document(sentences))
        labels.append(flags)
    return SyntheticCorpus(docs, vocab, labels)
