"""ROUGE-1/2/L (full-length F1) and ROUGE-maximising sentence labels."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Sequence

Tokens = Sequence[Hashable]

MAX_EXHAUSTIVE_SENTENCES = 12


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, candidate: int, reference: int) -> RougeScore:
        p = overlap / candidate if candidate else 0.0
        r = overlap / reference if reference else 0.0
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> RougeScore:
    """Clipped n-gram overlap scores."""
    if n not in (1, 2):
        raise ValueError(f"ROUGE-N is supported for n in (1, 2), got {n}")
    cand, ref = ngrams(list(candidate), n), ngrams(list(reference), n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> RougeScore:
    """Longest-common-subsequence scores."""
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def rouge_all(candidate: Tokens, reference: Tokens) -> dict[str, float]:
    """F1 of ROUGE-1, ROUGE-2 and ROUGE-L."""
    return {"rouge1": rouge_n(candidate, reference, 1).f1,
            "rouge2": rouge_n(candidate, reference, 2).f1,
            "rougeL": rouge_l(candidate, reference).f1}


# -- oracle labels -----------------------------------------------------------------
def selection_score(sentences: Sequence[Tokens], chosen: Sequence[int], reference: Tokens) -> float:
    """Mean of ROUGE-1 and ROUGE-2 F1 of the chosen sentences (document order) against the reference."""
    if not chosen:
        return 0.0
    cand = [tok for i in sorted(chosen) for tok in sentences[i]]
    return 0.5 * (rouge_n(cand, reference, 1).f1 + rouge_n(cand, reference, 2).f1)


def _labels(n: int, chosen) -> list[bool]:
    chosen = set(chosen)
    return [i in chosen for i in range(n)]


def oracle_greedy(sentences: Sequence[Tokens], reference: Tokens,
                  max_selected: int = 3) -> tuple[list[int], float]:
    chosen: list[int] = []
    best = 0.0
    while len(chosen) < max_selected:
        pick, pick_score = None, best
        for i in range(len(sentences)):
            if i in chosen:
                continue
            score = selection_score(sentences, chosen + [i], reference)
            if score > pick_score:
                pick, pick_score = i, score
        if pick is None:
            break
        chosen.append(pick)
        best = pick_score
    return sorted(chosen), best


def oracle_labels_greedy(sentences: Sequence[Tokens], reference: Tokens,
                         max_selected: int = 3) -> list[bool]:
    """Greedily add the sentence that most improves the score; stop when none does."""
    chosen, _ = oracle_greedy(sentences, reference, max_selected)
    return _labels(len(sentences), chosen)


def oracle_exhaustive(sentences: Sequence[Tokens], reference: Tokens,
                      max_selected: int = 3) -> tuple[list[int], float]:
    n = len(sentences)
    if n > MAX_EXHAUSTIVE_SENTENCES:
        raise ValueError(f"exhaustive search is limited to {MAX_EXHAUSTIVE_SENTENCES} sentences "
                         f"(got {n}); use oracle_labels_greedy")
    best: tuple[int, ...] = ()
    best_score = 0.0
    for size in range(1, min(max_selected, n) + 1):
        for subset in combinations(range(n), size):
            score = selection_score(sentences, subset, reference)
            if score > best_score or (score == best_score and subset < best):
                best, best_score = subset, score
    return list(best), best_score


def oracle_labels_exhaustive(sentences: Sequence[Tokens], reference: Tokens,
                             max_selected: int = 3) -> list[bool]:
    """Exact best subset of at most ``max_selected`` sentences; ties go to the smallest index tuple."""
    chosen, _ = oracle_exhaustive(sentences, reference, max_selected)
    return _labels(len(sentences), chosen)
