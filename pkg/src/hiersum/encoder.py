"""Hierarchical transformer document encoder.

A sentence-level transformer turns each sentence into the hidden state at
its EOS token; a sentence position vector is added; a document-level
transformer then contextualises the sentence vectors.  Word and sentence
positions share one parameter-free sine-cosine table.

Parameters live in a flat ``dict[str, Tensor]``:

* ``embed.w``                    word embeddings ``[V, H]``
* ``{sent,doc,dec}.{l}.*``       per-layer weights for the sentence encoder,
  document encoder and masked-sentence decoder
* ``out.w``                      decoder vocabulary projection ``[H, V]``
* ``cls.w``                      sentence label projection ``[H, 2]``
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .text import EOS, PAD, Document

Params = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ff: int = 256
    dropout: float = 0.1
    vocab_size: int = 100
    max_positions: int = 64
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.hidden % 2:
            raise ValueError("hidden size must be even for sine-cosine positions")
        if self.ff != 4 * self.hidden:
            raise ValueError(f"feedforward size must be 4 * hidden = {4 * self.hidden}, got {self.ff}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.layers < 1 or self.vocab_size < 5:
            raise ValueError("need at least one layer and the five reserved tokens")

    @classmethod
    def preset(cls, name: str, vocab_size: int, **overrides) -> ModelConfig:
        layers, hidden, heads = PRESETS[name]
        return cls(layers=layers, hidden=hidden, heads=heads, ff=4 * hidden,
                   vocab_size=vocab_size, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


# (layers, hidden, heads)
PRESETS = {
    "tiny": (2, 64, 4),
    "small": (6, 512, 8),
    "medium": (6, 768, 12),
}

STACKS = ("sent", "doc", "dec")


# -- parameters -----------------------------------------------------------------
def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, F, V = config.hidden, config.ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed.w": (V, H)}
    for stack in STACKS:
        for layer in range(config.layers):
            p = f"{stack}.{layer}"
            for ln in ("ln1", "ln2"):
                shapes[f"{p}.{ln}.g"] = (H,)
                shapes[f"{p}.{ln}.b"] = (H,)
            for w in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}.attn.{w}"] = (H, H)
            shapes[f"{p}.ff.w1"] = (H, F)
            shapes[f"{p}.ff.b1"] = (F,)
            shapes[f"{p}.ff.w2"] = (F, H)
            shapes[f"{p}.ff.b2"] = (H,)
    shapes["out.w"] = (H, V)
    shapes["cls.w"] = (H, 2)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Word embeddings ~ N(0, 0.02); weight matrices Xavier-uniform; biases 0; gains 1."""
    params: Params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "embed.w":
            value = rng.normal(0.0, 0.02, size=shape)
        elif leaf.startswith("w"):
            value = _xavier(rng, *shape)
        elif leaf == "g":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """View of the parameters under ``prefix.`` with the prefix stripped."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def copy_params(params: Mapping[str, Tensor]) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


# -- positions -------------------------------------------------------------------
def sincos_position(pos: int, d: int) -> np.ndarray:
    """Entry ``2i`` is ``sin(pos / 10000^(2i/d))``, entry ``2i+1`` the matching cosine."""
    if d % 2:
        raise ValueError(f"positional dimension must be even, got {d}")
    if pos < 0:
        raise ValueError(f"position must be non-negative, got {pos}")
    return sincos_table(pos + 1, d)[pos].copy()


@lru_cache(maxsize=32)
def _table(n: int, d: int) -> np.ndarray:
    rates = 10000.0 ** (np.arange(0, d, 2) / d)
    angles = np.arange(n)[:, None] / rates[None, :]
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    out.flags.writeable = False
    return out


def sincos_table(n: int, d: int) -> np.ndarray:
    """Rows ``0..n-1`` of the positional table (read-only)."""
    if d % 2:
        raise ValueError(f"positional dimension must be even, got {d}")
    size = max(64, 1 << max(0, n - 1).bit_length())
    return _table(size, d)[:n]


# -- layers -----------------------------------------------------------------------
def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None,
                         w: Mapping[str, Tensor], heads: int) -> Tensor:
    """Scaled dot-product attention over ``heads`` projected subspaces.

    ``q`` is ``[..., n, H]``, ``k``/``v`` are ``[..., m, H]``.  ``mask`` is
    boolean, broadcastable to ``[..., n, m]``, True where attention is
    allowed; disallowed scores are set to -inf before the softmax.
    """
    H = q.shape[-1]
    if H % heads:
        raise ValueError(f"feature size {H} is not divisible by {heads} heads")
    n, m = q.shape[-2], k.shape[-2]
    lead = q.shape[:-2]
    dh = H // heads
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, lead + (n, m))
        except ValueError as exc:
            raise ValueError(f"attention mask shape {mask.shape} does not broadcast "
                             f"to {lead + (n, m)}") from exc
        if mask.ndim < 2:
            mask = mask.reshape((1,) * (2 - mask.ndim) + mask.shape)

    def split(x: Tensor, length: int) -> Tensor:
        # [..., len, H] -> [..., heads, len, dh]
        x = x.reshape(x.shape[:-2] + (length, heads, dh))
        nd = x.ndim
        return x.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    qh = split(q @ w["wq"], n)
    kh = split(k @ w["wk"], m)
    vh = split(v @ w["wv"], m)
    nd = kh.ndim
    scores = (qh @ kh.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2))) * (1.0 / math.sqrt(dh))
    head_mask = None if mask is None else np.expand_dims(mask, -3)
    attn = T.softmax(scores, axis=-1, mask=head_mask)
    ctx = attn @ vh
    nd = ctx.ndim
    ctx = ctx.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    ctx = ctx.reshape(ctx.shape[:-2] + (H,))
    return ctx @ w["wo"]


def feed_forward(x: Tensor, w: Mapping[str, Tensor]) -> Tensor:
    return T.relu(x @ w["ff.w1"] + w["ff.b1"]) @ w["ff.w2"] + w["ff.b2"]


def _drop(x: Tensor, config: ModelConfig, rng) -> Tensor:
    return T.dropout(x, config.dropout, rng is not None, rng)


def encoder_layer(x: Tensor, pad_mask: np.ndarray | None, w: Mapping[str, Tensor],
                  config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm transformer layer on ``[..., n, H]``.

    ``pad_mask`` is ``[..., n]`` with True on real positions; PAD positions
    are hidden from every query.  ``rng`` enables dropout (training mode).
    """
    attn_mask = None if pad_mask is None else np.asarray(pad_mask, dtype=bool)[..., None, :]
    h = T.layer_norm(x, w["ln1.g"], w["ln1.b"], config.ln_eps)
    x = x + _drop(multi_head_attention(h, h, h, attn_mask, sub(w, "attn"), config.heads), config, rng)
    h = T.layer_norm(x, w["ln2.g"], w["ln2.b"], config.ln_eps)
    return x + _drop(feed_forward(h, w), config, rng)


def run_stack(x: Tensor, pad_mask, params: Mapping[str, Tensor], stack: str,
              config: ModelConfig, rng=None) -> Tensor:
    for layer in range(config.layers):
        x = encoder_layer(x, pad_mask, sub(params, f"{stack}.{layer}"), config, rng)
    return x


# -- hierarchy ----------------------------------------------------------------------
def pad_ids(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists with PAD; returns ``(ids [N, T], lengths [N])``."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    width = int(lengths.max()) if len(lengths) else 0
    ids = np.full((len(sequences), width), PAD, dtype=np.int64)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
    return ids, lengths


def embed(ids: np.ndarray, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    """Word embedding plus sine-cosine position for ``ids [..., T]``."""
    width = ids.shape[-1]
    if width > config.max_positions:
        raise ValueError(f"sequence length {width} exceeds max_positions {config.max_positions}")
    return T.embedding_lookup(params["embed.w"], ids) + sincos_table(width, config.hidden)


def encode_sentences(sentences: Sequence[Sequence[int]], positions: Sequence[int],
                     params: Mapping[str, Tensor], config: ModelConfig, rng=None,
                     add_position: bool = True) -> Tensor:
    """Sentence vectors ``[N, H]``: hidden state at EOS plus the sentence-position vector."""
    for i, s in enumerate(sentences):
        if not len(s) or s[-1] != EOS:
            raise ValueError(f"sentence {i} does not end with EOS")
    ids, lengths = pad_ids(sentences)
    real = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    x = _drop(embed(ids, params, config), config, rng)
    h = run_stack(x, real, params, "sent", config, rng)
    last = h[np.arange(len(lengths)), lengths - 1]
    if add_position:
        last = last + sincos_table(config.max_positions, config.hidden)[np.asarray(positions)]
    return last


def encode_sentence(sentence: Sequence[int], sentence_index: int,
                    params: Mapping[str, Tensor], config: ModelConfig, rng=None) -> Tensor:
    return encode_sentences([sentence], [sentence_index], params, config, rng).reshape(config.hidden)


@dataclass
class SentenceRepr:
    sentence_vectors: Tensor   # [n, H] (after the sentence-position addition)
    contextual: Tensor         # [n, H]


@dataclass
class BatchRepr:
    sentence_vectors: Tensor   # [B, S, H]
    contextual: Tensor         # [B, S, H]
    mask: np.ndarray           # [B, S], True on real sentences


def scatter_to_docs(flat: Tensor, counts: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """Arrange ``[N, H]`` rows (documents back to back) into ``[B, S, H]`` plus a mask."""
    counts = np.asarray(counts, dtype=np.int64)
    width = int(counts.max())
    mask = np.arange(width)[None, :] < counts[:, None]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    index = np.where(mask, starts[:, None] + np.arange(width)[None, :], 0)
    out = flat[index] * mask[..., None]
    return out, mask


def encode_documents(docs: Sequence[Document], params: Mapping[str, Tensor],
                     config: ModelConfig, rng=None, add_sentence_position: bool = True) -> BatchRepr:
    """Encode a batch of documents with one sentence-level and one document-level pass."""
    if not docs or any(len(d.sentences) == 0 for d in docs):
        raise ValueError("cannot encode an empty document")
    sentences = [s for d in docs for s in d.sentences]
    positions = [i for d in docs for i in range(len(d.sentences))]
    flat = encode_sentences(sentences, positions, params, config, rng, add_sentence_position)
    vectors, mask = scatter_to_docs(flat, [len(d.sentences) for d in docs])
    return BatchRepr(vectors, document_encoder(vectors, mask, params, config, rng), mask)


def document_encoder(vectors: Tensor, mask: np.ndarray | None, params: Mapping[str, Tensor],
                     config: ModelConfig, rng=None) -> Tensor:
    """Bidirectional document-level transformer over sentence vectors ``[..., S, H]``."""
    return run_stack(vectors, mask, params, "doc", config, rng)


def encode_document(doc: Document, params: Mapping[str, Tensor], config: ModelConfig,
                    rng=None) -> SentenceRepr:
    out = encode_documents([doc], params, config, rng)
    n = len(doc.sentences)
    return SentenceRepr(out.sentence_vectors[0, :n], out.contextual[0, :n])
