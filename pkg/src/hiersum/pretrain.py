"""Masked-sentence pre-training.

About 15% of a document's sentences are selected; each selected sentence
is masked (80%), kept (10%) or swapped for a random sentence (10%).  The
encoder reads the transformed document and a small causal decoder
regenerates every selected sentence from its contextual vector, which is
added after the decoder's self-attention sublayer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .encoder import (ModelConfig, Params, _drop, embed, encode_documents,
                      feed_forward, init_params, multi_head_attention, pad_ids, sub)
from .optim import AdamState, Schedule, adam_step
from .tensor import Tensor
from .text import BOS, EOS, MASK, MAX_SENTENCE_TOKENS, Document

log = logging.getLogger(__name__)

MASKED, KEPT, REPLACED = "MASKED", "KEPT", "REPLACED"
SELECT_RATE = 0.15
TRANSFORM_PROBS = (0.8, 0.1, 0.1)


@dataclass
class MaskedDocument:
    doc: Document               # transformed document the encoder sees
    original: Document
    selected: list[int]         # ascending
    tags: list[str]             # one per selected index
    targets: list[list[int]]    # BOS + original sentence (ending in EOS), one per selected index


def selection_count(n: int) -> int:
    """``max(1, round(0.15 n))`` with halves rounded up."""
    return max(1, int(math.floor(SELECT_RATE * n + 0.5)))


def _as_sentence(tokens: Sequence[int]) -> list[int]:
    body = [t for t in tokens if t != EOS][:MAX_SENTENCE_TOKENS]
    return body + [EOS]


def apply_masking(doc: Document, selected: Sequence[int], tags: Sequence[str],
                  replacements: Mapping[int, Sequence[int]] | None = None) -> MaskedDocument:
    """Deterministically transform ``doc`` given the chosen indices and transforms."""
    replacements = replacements or {}
    sentences = [list(s) for s in doc.sentences]
    order = sorted(range(len(selected)), key=lambda i: selected[i])
    selected = [selected[i] for i in order]
    tags = [tags[i] for i in order]
    for k, tag in zip(selected, tags):
        original = doc.sentences[k]
        if tag == MASKED:
            sentences[k] = [MASK] * (len(original) - 1) + [EOS]
        elif tag == REPLACED:
            sentences[k] = _as_sentence(replacements[k])
        elif tag != KEPT:
            raise ValueError(f"unknown transform {tag!r}")
    targets = [[BOS] + list(doc.sentences[k]) for k in selected]
    return MaskedDocument(Document(sentences), doc, selected, tags, targets)


def select_and_mask(doc: Document, rng: np.random.Generator,
                    pool: Sequence[Sequence[int]] = ()) -> MaskedDocument:
    """Pick ``selection_count(n)`` sentences uniformly and apply the 80/10/10 transforms.

    A REPLACED draw with an empty ``pool`` falls back to MASKED.
    """
    n = len(doc.sentences)
    if n < 1:
        raise ValueError("cannot mask an empty document")
    selected = sorted(int(i) for i in rng.choice(n, size=selection_count(n), replace=False))
    tags, replacements = [], {}
    for k in selected:
        u = rng.random()
        if u < TRANSFORM_PROBS[0]:
            tag = MASKED
        elif u < TRANSFORM_PROBS[0] + TRANSFORM_PROBS[1]:
            tag = KEPT
        else:
            tag = REPLACED
            if len(pool):
                replacements[k] = pool[int(rng.integers(len(pool)))]
            else:
                tag = MASKED
        tags.append(tag)
    return apply_masking(doc, selected, tags, replacements)


# -- decoder --------------------------------------------------------------------
def causal_mask(width: int) -> np.ndarray:
    return np.tril(np.ones((width, width), dtype=bool))


def decoder_forward(prefix, context: Tensor, params: Mapping[str, Tensor], config: ModelConfig,
                    rng: np.random.Generator | None = None, lengths=None) -> Tensor:
    """Next-token logits for teacher-forced prefixes.

    ``prefix`` is ``[T]`` or ``[M, T]`` ids starting with BOS (right-padded
    with PAD when ``lengths`` is given); ``context`` is the matching ``[H]``
    or ``[M, H]`` contextual sentence vector.  Returns ``[T, V]`` or
    ``[M, T, V]``; row ``t`` depends only on tokens ``0..t``.
    """
    ids = np.asarray(prefix, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
        context = context.reshape(1, config.hidden)
    if ids.shape[1] == 0 or np.any(ids[:, 0] != BOS):
        raise ValueError("decoder prefixes must start with BOS")
    M, width = ids.shape
    mask = causal_mask(width)[None, :, :]
    if lengths is not None:
        real = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
        mask = mask & real[:, None, :]
    ctx = context.reshape(M, 1, config.hidden)
    x = _drop(embed(ids, params, config), config, rng)
    for layer in range(config.layers):
        w = sub(params, f"dec.{layer}")
        h = T.layer_norm(x, w["ln1.g"], w["ln1.b"], config.ln_eps)
        x = x + _drop(multi_head_attention(h, h, h, mask, sub(w, "attn"), config.heads), config, rng)
        x = x + ctx
        h = T.layer_norm(x, w["ln2.g"], w["ln2.b"], config.ln_eps)
        x = x + _drop(feed_forward(h, w), config, rng)
    logits = x @ params["out.w"]
    return logits[0] if single else logits


def decode_stepwise(tokens: Sequence[int], context: Tensor, params: Mapping[str, Tensor],
                    config: ModelConfig) -> np.ndarray:
    """Logits produced one step at a time, each step seeing only the prefix so far.

    Every step runs in a fixed-width frame with the unseen future filled by
    PAD, so each row is computed with the same array shapes as a full
    teacher-forced pass.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    width = len(tokens)
    rows = []
    for j in range(1, width + 1):
        frame = np.zeros(width, dtype=np.int64)
        frame[:j] = tokens[:j]
        logits = decoder_forward(frame[None, :], context.reshape(1, -1), params, config,
                                 lengths=[j])
        rows.append(logits.data[0, j - 1])
    return np.stack(rows)


# -- loss -----------------------------------------------------------------------------
def masked_sentence_nll(batch: Sequence[MaskedDocument], params: Mapping[str, Tensor],
                        config: ModelConfig, rng=None) -> tuple[Tensor, int]:
    """Mean per-token NLL of every selected sentence in ``batch`` and the token count."""
    enc = encode_documents([m.doc for m in batch], params, config, rng)
    B, S, H = enc.contextual.shape
    rows = np.array([b * S + k for b, m in enumerate(batch) for k in m.selected])
    contexts = enc.contextual.reshape(B * S, H)[rows]
    targets = [t for m in batch for t in m.targets]
    inputs, lengths = pad_ids([t[:-1] for t in targets])
    outputs, _ = pad_ids([t[1:] for t in targets])
    logits = decoder_forward(inputs, contexts, params, config, rng, lengths=lengths)
    M, width, V = logits.shape
    keep = (np.arange(width)[None, :] < lengths[:, None]).reshape(-1)
    loss = T.nll_loss(logits.reshape(M * width, V), outputs.reshape(-1), keep)
    return loss, int(keep.sum())


def pretrain_loss(masked: MaskedDocument, params: Mapping[str, Tensor], config: ModelConfig,
                  rng=None) -> Tensor:
    return masked_sentence_nll([masked], params, config, rng)[0]


# -- training loop -------------------------------------------------------------------
@dataclass
class Stage:
    name: str
    train: list[Document]
    valid: list[Document] = field(default_factory=list)


@dataclass(frozen=True)
class PretrainConfig:
    base_lr: float = 1e-4
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    batch_size: int = 8
    max_epochs: int = 200
    max_steps: int | None = None     # per stage
    eval_every: int = 1              # epochs
    patience: int = 3
    min_rel_improvement: float = 0.005
    seed: int = 0
    valid_mask_seed: int = 1234


@dataclass
class TrainState:
    """Everything besides parameters needed to continue a run bit-exactly."""

    stage: int = 0
    epoch: int = 0
    batch: int = 0            # next batch within the epoch
    stage_step: int = 0
    best_ppl: float | None = None
    bad_evals: int = 0
    adam: AdamState = field(default_factory=AdamState)
    lineage: list[str] = field(default_factory=list)
    finished: bool = False


@dataclass
class PretrainResult:
    params: Params
    state: TrainState
    history: list[dict]
    lineage: list[str]


def step_rng(seed: int, purpose: int, stage: int, counter: int) -> np.random.Generator:
    """Counter-based stream: the same (seed, purpose, stage, counter) always gives the same draws."""
    return np.random.default_rng([seed, purpose, stage, counter])


def epoch_order(n: int, seed: int, stage: int, epoch: int) -> np.ndarray:
    return step_rng(seed, 1, stage, epoch).permutation(n)


def sentence_pool(docs: Sequence[Document]) -> list[list[int]]:
    return [s for d in docs for s in d.sentences]


def validation_set(docs: Sequence[Document], pool, seed: int) -> list[MaskedDocument]:
    rng = np.random.default_rng(seed)
    return [select_and_mask(d, rng, pool) for d in docs]


def perplexity(masked: Sequence[MaskedDocument], params, config: ModelConfig,
               batch_size: int = 16) -> float:
    """``exp`` of the mean per-token NLL over ``masked`` (no dropout)."""
    total, count = 0.0, 0
    for i in range(0, len(masked), batch_size):
        loss, n = masked_sentence_nll(masked[i:i + batch_size], params, config)
        total += loss.item() * n
        count += n
    return math.exp(total / count)


def pretrain_run(stages: Sequence[Stage], config: ModelConfig, train: PretrainConfig,
                 params: Params | None = None, state: TrainState | None = None,
                 on_record: Callable[[dict], None] | None = None,
                 on_stage_end: Callable[[int, Params, TrainState], None] | None = None,
                 stop_after_steps: int | None = None) -> PretrainResult:
    """Run pre-training stages in order, each continuing from the previous stage's parameters.

    Each stage restarts the optimizer and warmup schedule and stops when
    validation perplexity fails to improve by ``min_rel_improvement`` for
    ``patience`` evaluations, or at ``max_epochs`` / ``max_steps``.
    Passing back a returned ``state`` (with the matching ``params``)
    continues an interrupted run exactly.  ``stop_after_steps`` interrupts
    after that many optimizer steps in this call.
    """
    if not stages:
        raise ValueError("at least one pre-training stage is required")
    for st in stages:
        if not st.train:
            raise ValueError(f"stage {st.name!r} has an empty training corpus")
    params = init_params(config, np.random.default_rng([train.seed, 0])) if params is None else params
    state = TrainState() if state is None else state
    history: list[dict] = []
    schedule = Schedule(train.base_lr, train.warmup_steps)
    steps_this_call = 0

    def emit(rec: dict) -> None:
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    while state.stage < len(stages):
        st = stages[state.stage]
        pool = sentence_pool(st.train)
        valid_docs = st.valid or st.train
        valid = validation_set(valid_docs, pool, train.valid_mask_seed)
        n_batches = math.ceil(len(st.train) / train.batch_size)
        stage_over = False
        while not stage_over:
            order = epoch_order(len(st.train), train.seed, state.stage, state.epoch)
            while state.batch < n_batches:
                if stop_after_steps is not None and steps_this_call >= stop_after_steps:
                    return PretrainResult(params, state, history, list(state.lineage))
                idx = order[state.batch * train.batch_size:(state.batch + 1) * train.batch_size]
                rng = step_rng(train.seed, 2, state.stage, state.stage_step)
                batch = [select_and_mask(st.train[i], rng, pool) for i in idx]
                T.zero_grads(params.values())
                loss, _ = masked_sentence_nll(batch, params, config, rng)
                loss.backward()
                lr = adam_step(params, {k: p.grad for k, p in params.items()}, state.adam,
                               schedule, train.weight_decay)
                state.batch += 1
                state.stage_step += 1
                steps_this_call += 1
                emit({"step": state.stage_step, "stage": st.name, "lr": lr,
                      "train_loss": loss.item(), "val_ppl": None})
                if train.max_steps is not None and state.stage_step >= train.max_steps:
                    break
            epoch_done = state.batch >= n_batches
            budget_done = train.max_steps is not None and state.stage_step >= train.max_steps
            if epoch_done:
                state.epoch += 1
                state.batch = 0
            if budget_done or (epoch_done and state.epoch % train.eval_every == 0):
                ppl = perplexity(valid, params, config)
                emit({"step": state.stage_step, "stage": st.name, "lr": None,
                      "train_loss": None, "val_ppl": ppl, "epoch": state.epoch})
                if state.best_ppl is None or ppl < state.best_ppl * (1.0 - train.min_rel_improvement):
                    state.best_ppl = ppl
                    state.bad_evals = 0
                else:
                    state.bad_evals += 1
                log.info("stage %s epoch %d step %d val_ppl %.4f", st.name, state.epoch,
                         state.stage_step, ppl)
            stage_over = (budget_done or state.bad_evals >= train.patience
                          or state.epoch >= train.max_epochs)
        state.lineage.append(st.name)
        finished_stage = state.stage
        state = replace(state, stage=state.stage + 1, epoch=0, batch=0, stage_step=0,
                        best_ppl=None, bad_evals=0, adam=AdamState())
        if on_stage_end is not None:
            on_stage_end(finished_stage, params, state)
    state.finished = True
    return PretrainResult(params, state, history, list(state.lineage))
