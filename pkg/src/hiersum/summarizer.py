"""Extractive summarization as per-sentence True/False labelling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .encoder import ModelConfig, Params, copy_params, encode_documents
from .optim import AdamState, Schedule, adam_step
from .pretrain import step_rng
from .rouge import rouge_all
from .tensor import Tensor
from .text import Document


@dataclass
class LabeledDocument:
    doc: Document
    labels: list[bool]
    reference: list[str] = field(default_factory=list)           # reference summary tokens
    sentence_tokens: list[list[str]] | None = None               # words of each sentence, for ROUGE

    def __post_init__(self):
        if len(self.labels) != len(self.doc.sentences):
            raise ValueError(f"{len(self.labels)} labels for {len(self.doc.sentences)} sentences")


@dataclass
class SummarySelection:
    ranked: list[int]          # all sentence indices, most probable first
    probs: list[float]         # probability of True, by sentence index
    chosen: list[int]          # top-K in document order


@dataclass(frozen=True)
class FinetuneConfig:
    base_lr: float = 5e-5
    warmup_steps: int = 4_000
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 5
    max_steps: int | None = None
    seed: int = 0


def sentence_logits(docs: Sequence[Document], params: Mapping[str, Tensor], config: ModelConfig,
                    rng=None) -> tuple[Tensor, np.ndarray]:
    """Two-way label logits ``[B, S, 2]`` and the real-sentence mask ``[B, S]``."""
    enc = encode_documents(docs, params, config, rng)
    return enc.contextual @ params["cls.w"], enc.mask


def classify_batch(docs: Sequence[Document], params, config: ModelConfig) -> list[np.ndarray]:
    logits, mask = sentence_logits(docs, params, config)
    probs = T.softmax(logits, axis=-1).data[..., 1]
    return [probs[b, : len(d.sentences)] for b, d in enumerate(docs)]


def classify_sentences(doc: Document, params, config: ModelConfig) -> np.ndarray:
    """Probability that each sentence belongs in the summary."""
    return classify_batch([doc], params, config)[0]


def label_nll(batch: Sequence[LabeledDocument], params, config: ModelConfig, rng=None) -> Tensor:
    """Mean NLL of every sentence label in ``batch``."""
    logits, mask = sentence_logits([d.doc for d in batch], params, config, rng)
    B, S, _ = logits.shape
    targets = np.zeros((B, S), dtype=np.int64)
    for b, d in enumerate(batch):
        targets[b, : len(d.labels)] = d.labels
    return T.nll_loss(logits.reshape(B * S, 2), targets.reshape(-1), mask.reshape(-1))


def evaluate_labels(corpus: Sequence[LabeledDocument], params, config: ModelConfig,
                    batch_size: int = 32) -> dict[str, float]:
    """Sentence-weighted label NLL and accuracy (threshold 0.5)."""
    nll, correct, count = 0.0, 0, 0
    for i in range(0, len(corpus), batch_size):
        batch = corpus[i:i + batch_size]
        n = sum(len(d.labels) for d in batch)
        nll += label_nll(batch, params, config).item() * n
        for d, p in zip(batch, classify_batch([d.doc for d in batch], params, config)):
            correct += int(np.sum((p > 0.5) == np.asarray(d.labels)))
        count += n
    return {"nll": nll / count, "accuracy": correct / count}


def finetune(params: Params, corpus: Sequence[LabeledDocument], config: ModelConfig,
             train: FinetuneConfig, on_record: Callable[[dict], None] | None = None,
             on_epoch_end: Callable[[int, Params], None] | None = None) -> Params:
    """Train encoder and label head on sentence labels; returns new parameters.

    The input parameters are not modified.  Every optimizer step emits a
    record ``{step, stage, epoch, lr, train_loss}``.
    """
    for i, d in enumerate(corpus):
        if len(d.labels) != len(d.doc.sentences):
            raise ValueError(f"document {i}: label count does not match sentence count")
    params = copy_params(params)
    if train.epochs <= 0 or not corpus:
        return params
    state = AdamState()
    schedule = Schedule(train.base_lr, train.warmup_steps)
    n_batches = math.ceil(len(corpus) / train.batch_size)
    for epoch in range(train.epochs):
        order = step_rng(train.seed, 3, 0, epoch).permutation(len(corpus))
        for b in range(n_batches):
            if train.max_steps is not None and state.step >= train.max_steps:
                return params
            batch = [corpus[i] for i in order[b * train.batch_size:(b + 1) * train.batch_size]]
            rng = step_rng(train.seed, 4, 0, state.step)
            T.zero_grads(params.values())
            loss = label_nll(batch, params, config, rng)
            loss.backward()
            lr = adam_step(params, {k: p.grad for k, p in params.items()}, state, schedule,
                           train.weight_decay)
            if on_record is not None:
                on_record({"step": state.step, "stage": "finetune", "epoch": epoch, "lr": lr,
                           "train_loss": loss.item()})
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)
    return params


def rank_and_select(probs: Sequence[float], k: int) -> SummarySelection:
    """Top-``k`` sentences by probability (earlier position wins ties), in document order."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    probs = [float(p) for p in probs]
    if not probs:
        raise ValueError("cannot select from an empty document")
    ranked = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return SummarySelection(ranked, probs, sorted(ranked[:k]))


def summary_tokens(item: LabeledDocument, chosen: Iterable[int]) -> list:
    """Words of the chosen sentences; falls back to ids when no words are attached."""
    if item.sentence_tokens is not None:
        return [w for i in chosen for w in item.sentence_tokens[i]]
    return [t for i in chosen for t in item.doc.sentences[i][:-1]]


def mean_rouge(item: LabeledDocument, chosen: Sequence[int]) -> dict[str, float]:
    return rouge_all(summary_tokens(item, chosen), item.reference)


def best_k(prob_lists: Sequence[Sequence[float]], corpus: Sequence[LabeledDocument],
           k_range: Iterable[int]) -> tuple[int, dict[int, float]]:
    """K maximising corpus-mean (R-1 + R-2 + R-L) / 3; ties go to the smaller K."""
    ks = sorted(set(k_range))
    if not ks:
        raise ValueError("k_range is empty")
    scores = {}
    for k in ks:
        total = 0.0
        for probs, item in zip(prob_lists, corpus):
            r = mean_rouge(item, rank_and_select(probs, k).chosen)
            total += (r["rouge1"] + r["rouge2"] + r["rougeL"]) / 3.0
        scores[k] = total / max(1, len(corpus))
    best = max(ks, key=lambda k: (scores[k], -k))
    return best, scores


def tune_k(params, config: ModelConfig, corpus: Sequence[LabeledDocument],
           k_range: Iterable[int]) -> int:
    probs = [classify_sentences(item.doc, params, config) for item in corpus]
    return best_k(probs, corpus, k_range)[0]
