"""Word-level vocabulary and token sequences with whole-word spans."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from mathcurric.corpus import math_mask

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)
NUM_SPECIAL = len(SPECIALS)
# [UNK] is excluded: it stands in for real words and may be masked.
STRUCTURAL_IDS = frozenset({PAD_ID, CLS_ID, SEP_ID, MASK_ID})


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:NUM_SPECIAL]) != SPECIALS:
            raise ValueError("reserved tokens must occupy ids 0-4")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, word: str) -> int:
        return self.index.get(word, UNK_ID)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tuple(tokens))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]
    is_math: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        off = len(self.ids)
        return TokenSequence(
            self.ids + other.ids,
            self.word_spans + tuple((s + off, e + off) for s, e in other.word_spans),
            self.is_math + other.is_math,
        )


def build_vocab(corpus, max_size: int = 8000) -> Vocab:
    """Most frequent words first, ties broken lexicographically."""
    if len(corpus) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if max_size < NUM_SPECIAL:
        raise ValueError(f"max_size must be >= {NUM_SPECIAL}")
    counts = Counter()
    for mt in corpus:
        counts.update(mt.statement)
        counts.update(mt.solution)
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: max_size - NUM_SPECIAL]]
    return Vocab(SPECIALS + tuple(words))


def encode(text, vocab: Vocab) -> TokenSequence:
    words = text.split() if isinstance(text, str) else list(text)
    ids = tuple(vocab.id(w) for w in words)
    return TokenSequence(ids, tuple((i, i + 1) for i in range(len(ids))), tuple(math_mask(words, strict=False)))


def special(token_id: int) -> TokenSequence:
    return TokenSequence((token_id,), ((0, 1),), (False,))


def join_segments(*segments: TokenSequence) -> TokenSequence:
    """``[CLS] s1 [SEP] s2 [SEP] ...``"""
    out = special(CLS_ID)
    for seg in segments:
        out = out + seg + special(SEP_ID)
    return out


def decode(ts, vocab: Vocab) -> list[str]:
    ids = ts.ids if isinstance(ts, TokenSequence) else ts
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} outside vocabulary of size {len(vocab)}")
        if i != PAD_ID:
            words.append(vocab.tokens[i])
    return words


def word_spans(ts: TokenSequence) -> list[tuple[int, int]]:
    return list(ts.word_spans)
