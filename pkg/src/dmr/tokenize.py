"""Raw text to token counts: the map step of the pipeline."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .counts import SparseCounts, Vocabulary, build_counts
from .errors import DuplicateDocId

DEFAULT_STOPWORDS = frozenset(
    "a an and are as at be but by for from had has have he her his i in is it its "
    "of on or our she so that the their them they this to was we were with you your".split()
)

_WORD = r"[^\W_]+(?:'[^\W_]+)*"
_PUNCT = r"[^\w\s]+|_+"
_SPLIT_WITH_PUNCT = re.compile(f"{_WORD}|(?:{_PUNCT})")
_SPLIT_WORDS = re.compile(_WORD)
# characters reserved by the triplet file format
_RESERVED = str.maketrans("", "", "|\t")


@dataclass(frozen=True)
class TokenizerConfig:
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    suffixes_to_strip: tuple[str, ...] = ("s", "ing", "ly")
    min_doc_count: int = 0
    keep_punctuation_runs: bool = True
    min_stem_length: int = 3

    def __post_init__(self):
        if self.min_doc_count < 0:
            raise ValueError("min_doc_count must be >= 0")
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))
        # longest suffix wins; ties keep the caller's order
        ordered = sorted(self.suffixes_to_strip, key=len, reverse=True)
        object.__setattr__(self, "suffixes_to_strip", tuple(ordered))


def _strip_suffix(word: str, suffixes: Sequence[str], min_stem: int) -> str:
    for suf in suffixes:
        if suf and word.endswith(suf) and len(word) - len(suf) >= min_stem:
            return word[: -len(suf)]
    return word


def tokenize_document(text: str, cfg: TokenizerConfig = TokenizerConfig()) -> Counter:
    """Lowercase, split and normalize one document into a token multiset.

    >>> sorted(tokenize_document("The dogs barking").items())
    [('bark', 1), ('dog', 1)]
    """
    pattern = _SPLIT_WITH_PUNCT if cfg.keep_punctuation_runs else _SPLIT_WORDS
    out: Counter = Counter()
    for chunk in text.lower().split():
        for tok in pattern.findall(chunk):
            tok = tok.translate(_RESERVED)
            if not tok or tok in cfg.stopwords:
                continue
            if tok[0].isalnum():
                tok = _strip_suffix(tok, cfg.suffixes_to_strip, cfg.min_stem_length)
            out[tok] += 1
    return out


def ingest_corpus(
    docs: Iterable[tuple[int, str]], cfg: TokenizerConfig = TokenizerConfig()
) -> tuple[SparseCounts, Vocabulary]:
    """Tokenize every document and keep tokens seen in more than
    ``cfg.min_doc_count`` documents.

    Row i of the result is the i-th document of ``docs``. Vocabulary order
    is descending total count with ties broken lexicographically, so it does
    not depend on document order.
    """
    seen: set[int] = set()
    bags: list[Counter] = []
    for doc_id, text in docs:
        if doc_id in seen:
            raise DuplicateDocId(f"document id {doc_id} appears twice")
        seen.add(doc_id)
        bags.append(tokenize_document(text, cfg))

    doc_freq: Counter = Counter()
    total: Counter = Counter()
    for bag in bags:
        doc_freq.update(bag.keys())
        total.update(bag)
    kept = [t for t, df in doc_freq.items() if df > cfg.min_doc_count]
    kept.sort(key=lambda t: (-total[t], t))
    vocab = Vocabulary(tuple(kept), cfg.min_doc_count)
    index = vocab.index()

    trip = [
        (i, index[t], c)
        for i, bag in enumerate(bags)
        for t, c in bag.items()
        if t in index
    ]
    counts = build_counts(trip, len(bags), len(vocab))
    return counts, vocab


def doc_ids_array(docs: Sequence[tuple[int, str]]) -> np.ndarray:
    return np.array([int(d) for d, _ in docs], dtype=np.int64)
