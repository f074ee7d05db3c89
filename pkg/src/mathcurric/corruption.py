"""Corruption flavors: position-biased whole-word masking, sentence and formula shuffles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mathcurric.tokenizer import (
    MASK_ID,
    NUM_SPECIAL,
    STRUCTURAL_IDS,
    TokenSequence,
    Vocab,
    encode,
)

MASK_RATE_PERCENT = 15
MAX_WEIGHT = 30.0

MASK, RANDOM, KEEP = "MASK", "RANDOM", "KEEP"


@dataclass(frozen=True)
class MaskingPlan:
    weights: tuple[float, ...]
    selected_spans: tuple[tuple[int, int], ...]
    actions: tuple[str, ...] = ()


@dataclass(frozen=True)
class CorruptedExample:
    kind: str  # MLM, DAE, SSR or SFR
    input_ids: TokenSequence
    target_ids: TokenSequence
    masked_positions: tuple[int, ...] = ()
    permutation: tuple[int, ...] = ()
    actions: tuple[str, ...] = ()
    # statement tokens conditioning SSR/SFR recovery
    context: TokenSequence | None = None
    degenerate: bool = False

    def to_record(self, vocab: Vocab | None = None) -> dict:
        def show(ts):
            return [vocab.tokens[i] for i in ts.ids] if vocab is not None else list(ts.ids)

        return {
            "kind": self.kind,
            "input": show(self.input_ids),
            "target": show(self.target_ids),
            "masked_positions": list(self.masked_positions),
            "permutation": list(self.permutation),
        }


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    return np.random.default_rng(seed)


def position_weights(n: int) -> list[float]:
    """Linear masking-weight ramp in percent: 0 at the first position, 30 at the last."""
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    if n == 1:
        return [MAX_WEIGHT / 2]
    return [MAX_WEIGHT * i / (n - 1) for i in range(n)]


def maskable(ts: TokenSequence) -> list[bool]:
    return [i not in STRUCTURAL_IDS for i in ts.ids]


def sequence_weights(ts: TokenSequence) -> list[float]:
    """Ramp over the maskable tokens of ``ts``; structural tokens get weight 0.

    Positions count over the whole sequence (statement then solution), so solution
    tokens sit on the high end of the ramp.
    """
    ok = maskable(ts)
    n = sum(ok)
    if n == 0:
        return [0.0] * len(ts)
    ramp = iter(position_weights(n))
    return [next(ramp) if m else 0.0 for m in ok]


def mask_budget(n_tokens: int, rate_percent: int = MASK_RATE_PERCENT) -> int:
    return -(-n_tokens * rate_percent // 100)


def select_mask_spans(ts: TokenSequence, weights, seed, bernoulli: bool = False) -> list[tuple[int, int]]:
    """Weighted whole-word span selection without replacement.

    Span weight is the mean of its tokens' weights. Spans are drawn one at a time
    until the selected token count first reaches ceil(15% of maskable tokens).
    Draw order uses exponential keys log(u)/w, which reproduces sequential
    weighted sampling. ``bernoulli=True`` instead keeps each span independently
    with probability weight/100.
    """
    if len(weights) != len(ts):
        raise ValueError("weights length must equal the token count")
    rng = as_rng(seed)
    ok = maskable(ts)
    spans = [(s, e) for s, e in ts.word_spans if all(ok[s:e])]
    if not spans:
        return []
    w = np.array([sum(weights[s:e]) / (e - s) for s, e in spans], dtype=np.float64)
    if bernoulli:
        keep = rng.random(len(spans)) < w / 100.0
        return [sp for sp, k in zip(spans, keep) if k]

    budget = mask_budget(sum(e - s for s, e in spans))
    u = rng.random(len(spans))
    tiebreak = rng.random(len(spans))
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
    order = np.lexsort((-tiebreak, -keys))
    chosen = []
    count = 0
    for j in order:
        if count >= budget:
            break
        chosen.append(spans[j])
        count += spans[j][1] - spans[j][0]
    chosen.sort()
    return chosen


def apply_token_corruption(ts: TokenSequence, spans, vocab: Vocab, seed, kind: str = "MLM") -> CorruptedExample:
    """80% [MASK], 10% random word, 10% unchanged for every selected token."""
    rng = as_rng(seed)
    ids = list(ts.ids)
    positions = sorted(i for s, e in spans for i in range(s, e))
    actions = []
    n_words = len(vocab) - NUM_SPECIAL
    for p in positions:
        u = rng.random()
        if u < 0.8:
            ids[p] = MASK_ID
            actions.append(MASK)
        elif u < 0.9:
            if n_words > 0:
                ids[p] = int(rng.integers(NUM_SPECIAL, len(vocab)))
            else:
                ids[p] = MASK_ID
            actions.append(RANDOM)
        else:
            actions.append(KEEP)
    corrupted = TokenSequence(tuple(ids), ts.word_spans, ts.is_math)
    return CorruptedExample(kind, corrupted, ts, tuple(positions), actions=tuple(actions))


def mask_example(ts: TokenSequence, vocab: Vocab, seed, kind: str = "MLM", bernoulli: bool = False) -> CorruptedExample:
    """Position-biased weights, span selection and token corruption in one call."""
    rng = as_rng(seed)
    spans = select_mask_spans(ts, sequence_weights(ts), rng, bernoulli=bernoulli)
    return apply_token_corruption(ts, spans, vocab, rng, kind)


def _non_identity_permutation(m: int, rng: np.random.Generator) -> tuple[int, ...]:
    if m < 2:
        return tuple(range(m))
    ident = tuple(range(m))
    while True:
        perm = tuple(int(i) for i in rng.permutation(m))
        if perm != ident:
            return perm


def shuffle_sentences(mt, vocab: Vocab, seed) -> CorruptedExample:
    """Reorder solution sentences; slot k of the output holds original sentence ``permutation[k]``."""
    rng = as_rng(seed)
    sents = [mt.solution[s:e] for s, e in mt.sentences]
    perm = _non_identity_permutation(len(sents), rng)
    words = [w for k in perm for w in sents[k]]
    return CorruptedExample(
        "SSR",
        encode(words, vocab),
        encode(mt.solution, vocab),
        permutation=perm,
        context=encode(mt.statement, vocab),
    )


def shuffle_formulas(mt, vocab: Vocab, seed) -> CorruptedExample:
    """Permute formula contents among formula slots; prose stays in place.

    Slot k of the output receives the content of formula ``permutation[k]``.
    """
    rng = as_rng(seed)
    spans = list(mt.formulas)
    perm = _non_identity_permutation(len(spans), rng)
    words = []
    pos = 0
    for slot, f in enumerate(spans):
        words.extend(mt.solution[pos:f.start])
        src = spans[perm[slot]]
        words.extend(mt.solution[src.start:src.end])
        pos = f.end
    words.extend(mt.solution[pos:])
    return CorruptedExample(
        "SFR",
        encode(words, vocab),
        encode(mt.solution, vocab),
        permutation=perm,
        context=encode(mt.statement, vocab),
        degenerate=not spans,
    )
