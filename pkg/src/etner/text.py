"""Tokenization, vocabulary, and sparse per-token features.

Everything downstream consumes lowercase, punctuation-free tokens: voice
transcripts arrive that way, and typed input is normalized to match.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

# The punctuation a speech front end never emits.  tokenize treats these as
# separators so no token ever contains one.
PUNCTUATION = ",.;:!?"

_PUNCT_TABLE = str.maketrans({ch: " " for ch in PUNCTUATION})


def tokenize(text: str) -> list[str]:
    """Lowercase + whitespace-split; the six punctuation marks split tokens too."""
    return text.lower().translate(_PUNCT_TABLE).split()


def char_ngrams(token: str, n_max: int) -> Counter:
    """All contiguous substrings of length 1..min(n_max, len), with multiplicity."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    grams: Counter = Counter()
    length = len(token)
    for n in range(1, min(n_max, length) + 1):
        for i in range(length - n + 1):
            grams[token[i : i + n]] += 1
    return grams


@dataclass(frozen=True)
class Vocabulary:
    word_index: dict
    ngram_index: dict
    min_freq: int = 1
    n_max: int = 4

    @property
    def n_words(self) -> int:
        return len(self.word_index)

    @property
    def n_ngrams(self) -> int:
        return len(self.ngram_index)


def build_vocab(corpus, min_freq: int = 1, n_max: int = 4) -> Vocabulary:
    """Count words and character n-grams over the corpus, keep those with
    frequency >= min_freq, and assign dense ids by (frequency desc, surface asc).

    The tie-break makes ids independent of corpus order.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    word_counts: Counter = Counter()
    ngram_counts: Counter = Counter()
    for tokens in corpus:
        word_counts.update(tokens)
        for tok in tokens:
            ngram_counts.update(char_ngrams(tok, n_max))

    def assign(counts):
        kept = [(s, c) for s, c in counts.items() if c >= min_freq]
        kept.sort(key=lambda sc: (-sc[1], sc[0]))
        return {s: i for i, (s, _) in enumerate(kept)}

    return Vocabulary(assign(word_counts), assign(ngram_counts), min_freq, n_max)


# ---------------------------------------------------------------------------
# lexical flags

NUMBER_WORDS = frozenset(
    """one two three four five six seven eight nine ten eleven twelve thirteen
    fourteen fifteen sixteen seventeen eighteen nineteen twenty thirty forty
    fifty hundred""".split()
)

UNIT_WORDS = frozenset(
    "gallon gallons bag bags pound pounds oz pack packs dozen".split()
)

N_LEXICAL = 6


def lexical_flags(token: str) -> np.ndarray:
    """6 flags: is_digit, is_number_word, is_unit_word, length <=3 / 4-6 / >=7."""
    n = len(token)
    return np.array(
        [
            1.0 if token.isdigit() else 0.0,
            1.0 if token in NUMBER_WORDS else 0.0,
            1.0 if token in UNIT_WORDS else 0.0,
            1.0 if n <= 3 else 0.0,
            1.0 if 4 <= n <= 6 else 0.0,
            1.0 if n >= 7 else 0.0,
        ]
    )


@dataclass
class SparseTokenFeatures:
    """One token's sparse feature content.

    word_id is None for out-of-vocabulary words (all-zero one-hot);
    ngram_counts maps ngram id -> count, restricted to the vocabulary.
    """

    word_id: int | None
    ngram_counts: dict
    lexical: np.ndarray | None = None


def featurize(tokens, vocab: Vocabulary, use_lexical: bool = False):
    """Per-token sparse features; unseen words/ngrams silently drop out."""
    out = []
    for tok in tokens:
        counts = {}
        for gram, c in char_ngrams(tok, vocab.n_max).items():
            gid = vocab.ngram_index.get(gram)
            if gid is not None:
                counts[gid] = c
        out.append(
            SparseTokenFeatures(
                word_id=vocab.word_index.get(tok),
                ngram_counts=counts,
                lexical=lexical_flags(tok) if use_lexical else None,
            )
        )
    return out


def sparse_feature_width(vocab: Vocabulary, use_lexical: bool) -> int:
    return vocab.n_words + vocab.n_ngrams + (N_LEXICAL if use_lexical else 0)


def feature_arrays(feats, n_words: int, n_ngrams: int):
    """Flatten a feature list into parallel (indices, values, per-token counts).

    Index layout: [0, n_words) words, then ngrams, then lexical flags.  This is
    the row content the sparse projection consumes.
    """
    ngram_off = n_words
    lex_off = n_words + n_ngrams
    idx: list[int] = []
    vals: list[float] = []
    counts = np.zeros(len(feats), dtype=np.int64)
    for t, f in enumerate(feats):
        start = len(idx)
        if f.word_id is not None:
            idx.append(f.word_id)
            vals.append(1.0)
        for gid in sorted(f.ngram_counts):
            idx.append(ngram_off + gid)
            vals.append(float(f.ngram_counts[gid]))
        if f.lexical is not None:
            for j, v in enumerate(f.lexical):
                if v != 0.0:
                    idx.append(lex_off + j)
                    vals.append(float(v))
        counts[t] = len(idx) - start
    return (
        np.asarray(idx, dtype=np.int64),
        np.asarray(vals, dtype=np.float64),
        counts,
    )


# ---------------------------------------------------------------------------
# vocabulary file format: one entry per line, "kind<TAB>surface<TAB>id",
# kind in {word, ngram}, each kind block sorted by id.


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for surface, i in sorted(vocab.word_index.items(), key=lambda kv: kv[1]):
            fh.write(f"word\t{surface}\t{i}\n")
        for surface, i in sorted(vocab.ngram_index.items(), key=lambda kv: kv[1]):
            fh.write(f"ngram\t{surface}\t{i}\n")


def load_vocabulary(path, min_freq: int = 1, n_max: int | None = None) -> Vocabulary:
    """Read the tab-separated vocabulary file back.

    n_max is not stored in the file; it defaults to the longest n-gram present
    (featurization only looks up grams that exist, so this is equivalent).
    """
    word_index: dict = {}
    ngram_index: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("word", "ngram"):
                raise ValueError(f"bad vocabulary entry line {lineno}: {line!r}")
            kind, surface, sid = parts
            target = word_index if kind == "word" else ngram_index
            if surface in target:
                raise ValueError(f"duplicate {kind} {surface!r} line {lineno}")
            target[surface] = int(sid)
    for name, index in (("word", word_index), ("ngram", ngram_index)):
        ids = sorted(index.values())
        if ids != list(range(len(ids))):
            raise ValueError(f"{name} ids are not dense from 0")
    if n_max is None:
        n_max = max((len(g) for g in ngram_index), default=4)
    return Vocabulary(word_index, ngram_index, min_freq, n_max)
