"""Tokenization, byte-pair encoding, vocabularies and document segmentation."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[UNK]", "[BOS]", "[EOS]", "[MASK]")

EOW = "</w>"
MAX_SENTENCE_TOKENS = 50
MAX_DOCUMENT_SENTENCES = 30

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")
_TOKEN = re.compile(r"\w+(?:['\-.]\w+)*|[^\w\s]")


def tokenize(text: str, lowercase: bool = True) -> list[list[str]]:
    """Split ``text`` into sentences of tokens.

    A sentence ends at ``.``, ``!`` or ``?`` followed by whitespace and an
    uppercase letter, or at the end of the text.  Punctuation is split off
    words.

    >>> tokenize("He died in 1616. He wrote.")
    [['he', 'died', 'in', '1616', '.'], ['he', 'wrote', '.']]
    """
    sentences = []
    for chunk in _SENTENCE_BREAK.split(text.strip()):
        if lowercase:
            chunk = chunk.lower()
        tokens = _TOKEN.findall(chunk)
        if tokens:
            sentences.append(tokens)
    return sentences


# -- BPE ----------------------------------------------------------------------
def _symbols(token: str) -> list[str]:
    chars = list(token)
    chars[-1] += EOW
    return chars


@dataclass
class BpeMerges:
    """Ordered merge rules; index in ``pairs`` is the priority (0 = first)."""

    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = {pair: i for i, pair in enumerate(self.pairs)}
        self._cache: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.pairs)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.pairs), encoding="utf-8")

    @classmethod
    def load(cls, path) -> BpeMerges:
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                a, b = line.split(" ")
                pairs.append((a, b))
        return cls(pairs)


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_train(corpus: Iterable[str] | Counter, num_merges: int) -> BpeMerges:
    """Learn up to ``num_merges`` merges from a multiset of tokens.

    Each round merges the most frequent adjacent symbol pair; equal counts
    go to the lexicographically smallest pair.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    counts = corpus if isinstance(corpus, Counter) else Counter(corpus)
    words = {tuple(_symbols(tok)): n for tok, n in counts.items() if tok}
    pairs: list[tuple[str, str]] = []
    for _ in range(num_merges):
        stats: Counter = Counter()
        for symbols, n in words.items():
            for pair in zip(symbols, symbols[1:]):
                stats[pair] += n
        if not stats:
            break
        best = min(stats.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        pairs.append(best)
        merged: dict[tuple[str, ...], int] = {}
        for symbols, n in words.items():
            new = _merge_word(symbols, best) if best[0] in symbols else symbols
            merged[new] = merged.get(new, 0) + n
        words = merged
    return BpeMerges(pairs)


def bpe_encode(token: str, merges: BpeMerges) -> list[str]:
    """Split ``token`` into subwords by applying merges in priority order."""
    if not token:
        return []
    cached = merges._cache.get(token)
    if cached is not None:
        return list(cached)
    symbols = tuple(_symbols(token))
    ranks = merges.ranks
    while len(symbols) > 1:
        candidates = [ranks[p] for p in zip(symbols, symbols[1:]) if p in ranks]
        if not candidates:
            break
        symbols = _merge_word(symbols, merges.pairs[min(candidates)])
    merges._cache[token] = list(symbols)
    return list(symbols)


def bpe_decode(subwords: Sequence[str]) -> str:
    return "".join(subwords).replace(EOW, "")


# -- vocabulary ----------------------------------------------------------------
class Vocab:
    """Bijective token <-> id map whose first five ids are the reserved symbols."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: vocabulary must start with {RESERVED}")
        return cls(lines[len(RESERVED):])


def build_vocab(token_counts: Counter, merges: BpeMerges) -> Vocab:
    """Vocabulary over every subword the merges produce on the corpus, most frequent first."""
    sub: Counter = Counter()
    for tok, n in token_counts.items():
        for piece in bpe_encode(tok, merges):
            sub[piece] += n
    return Vocab(t for t, _ in sorted(sub.items(), key=lambda kv: (-kv[1], kv[0])))


# -- documents ------------------------------------------------------------------
@dataclass
class Document:
    sentences: list[list[int]]

    def __len__(self) -> int:
        return len(self.sentences)


def validate_document(doc: Document, vocab_size: int | None = None) -> None:
    """Raise ``ValueError`` if ``doc`` breaks a Document invariant."""
    if not 1 <= len(doc.sentences) <= MAX_DOCUMENT_SENTENCES:
        raise ValueError(f"document has {len(doc.sentences)} sentences")
    for i, sent in enumerate(doc.sentences):
        if not 1 <= len(sent) <= MAX_SENTENCE_TOKENS + 1:
            raise ValueError(f"sentence {i} has length {len(sent)}")
        if sent[-1] != EOS or EOS in sent[:-1]:
            raise ValueError(f"sentence {i} must end with exactly one EOS")
        if vocab_size is not None and any(not 0 <= t < vocab_size for t in sent):
            raise ValueError(f"sentence {i} has an id outside [0, {vocab_size})")


def segment_document(sentences: Sequence[Sequence[int]]) -> list[Document]:
    """Truncate sentences to 50 tokens, append EOS, and chunk into blocks of 30."""
    kept = [list(s[:MAX_SENTENCE_TOKENS]) + [EOS] for s in sentences if len(s)]
    return [Document(kept[i:i + MAX_DOCUMENT_SENTENCES])
            for i in range(0, len(kept), MAX_DOCUMENT_SENTENCES)]


def segment_labels(labels: Sequence, sentences: Sequence[Sequence]) -> list[list]:
    """Split per-sentence values the same way :func:`segment_document` splits sentences."""
    kept = [lab for lab, s in zip(labels, sentences) if len(s)]
    return [kept[i:i + MAX_DOCUMENT_SENTENCES] for i in range(0, len(kept), MAX_DOCUMENT_SENTENCES)]


def encode_sentences(sentences: Sequence[Sequence[str]], vocab: Vocab, merges: BpeMerges) -> list[list[int]]:
    return [vocab.ids(piece for tok in sent for piece in bpe_encode(tok, merges))
            for sent in sentences]


def encode_text(text: str, vocab: Vocab, merges: BpeMerges) -> list[Document]:
    return segment_document(encode_sentences(tokenize(text), vocab, merges))


def encode_corpus(texts: Iterable[str], vocab: Vocab, merges: BpeMerges) -> list[Document]:
    """tokenize -> BPE -> ids (UNK when unknown) -> segmented Documents, for every text."""
    docs: list[Document] = []
    for text in texts:
        docs.extend(encode_text(text, vocab, merges))
    return docs


def decode_document(doc: Document, vocab: Vocab) -> str:
    """Render a Document as space-separated words, joining subwords and dropping EOS."""
    words: list[str] = []
    partial = ""
    for sent in doc.sentences:
        for i in sent:
            if i == EOS:
                continue
            tok = vocab.itos[i]
            if i < len(RESERVED):
                if partial:
                    words.append(partial)
                    partial = ""
                words.append(tok)
            elif tok.endswith(EOW):
                words.append(partial + tok[: -len(EOW)])
                partial = ""
            else:
                partial += tok
    if partial:
        words.append(partial)
    return " ".join(words)


# -- corpus files ---------------------------------------------------------------------
def read_corpus(path) -> Iterator[dict]:
    """Yield records from a line-delimited JSON corpus; missing ``id`` becomes the line index."""
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "text" not in rec:
                raise ValueError(f"{path}:{i + 1}: record has no 'text' field")
            rec.setdefault("id", rec.get("doc_id", i))
            yield rec


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
