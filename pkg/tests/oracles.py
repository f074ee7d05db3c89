"""Slow, direct-formula reference implementations used to check the metrics."""

import itertools
import math
import random
from fractions import Fraction

from sklearn.metrics import f1_score


def ngram_list(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_matches(cand, ref, n):
    pool = ngram_list(ref, n)
    hits = 0
    for g in ngram_list(cand, n):
        if g in pool:
            pool.remove(g)
            hits += 1
    return hits


def bleu4(cand, ref):
    if not cand or not ref:
        return 0.0
    precisions = []
    for n in range(1, 5):
        total = max(len(cand) - n + 1, 0)
        hits = clipped_matches(cand, ref, n)
        if hits == 0 and n == 1:
            return 0.0
        precisions.append((hits + 1) / (total + 1) if hits == 0 else hits / total)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.prod(precisions) ** 0.25


def rouge_n(cand, ref, n=2):
    c, r = len(ngram_list(cand, n)), len(ngram_list(ref, n))
    hits = clipped_matches(cand, ref, n)
    if not hits:
        return 0.0
    p, q = hits / c, hits / r
    return 2 * p * q / (p + q)


def subsequences(tokens):
    for size in range(len(tokens) + 1):
        for idx in itertools.combinations(range(len(tokens)), size):
            yield tuple(tokens[i] for i in idx)


def lcs_brute(a, b):
    common = set(subsequences(a)) & set(subsequences(b))
    return max(len(s) for s in common)


def rouge_l(cand, ref):
    if not cand or not ref:
        return 0.0
    lcs = lcs_brute(cand, ref)
    if not lcs:
        return 0.0
    p, q = lcs / len(cand), lcs / len(ref)
    return 2 * p * q / (p + q)


def ndcg3(rels):
    dcg = sum(rels[i - 1] / math.log2(i + 1) for i in range(1, min(3, len(rels)) + 1))
    best = sorted(rels, reverse=True)
    ideal = sum(best[i - 1] / math.log2(i + 1) for i in range(1, min(3, len(best)) + 1))
    return dcg / ideal if ideal else 0.0


def hr3(ranked, relevant):
    return 1.0 if set(ranked[:3]) & set(relevant) else 0.0


def f1_macro(preds, golds, num_labels):
    return float(f1_score(golds, preds, labels=list(range(num_labels)), average="macro", zero_division=0))


def random_tokens(rng: random.Random, max_len=6, alphabet="abcde"):
    return [rng.choice(alphabet) for _ in range(rng.randint(0, max_len))]


def number_text(rng: random.Random):
    """A random numeral and its exact value, in one of the accepted notations."""
    style = rng.choice(["int", "dec", "frac", "tex"])
    if style == "int":
        v = rng.randint(-30, 30)
        return str(v), Fraction(v)
    if style == "dec":
        v = Fraction(rng.randint(-300, 300), 10)
        return f"{float(v):.1f}", v
    a, b = rng.randint(0, 20), rng.randint(1, 9)
    if style == "frac":
        return f"{a}/{b}", Fraction(a, b)
    return f"\\frac{{{a}}}{{{b}}}", Fraction(a, b)


def numeric_fixture(rng: random.Random):
    """(generated, gold, expected match) with the final numeral chosen last."""
    def wrap(text):
        lead = " ".join(rng.choice(["so", "x", "=", "answer", "is"]) for _ in range(rng.randint(0, 3)))
        filler = f"{rng.randint(0, 9)} " if rng.random() < 0.5 else ""
        return f"{lead} {filler}{text} .".strip()

    gen_text, gen_value = number_text(rng)
    if rng.random() < 0.5:
        gold_text, gold_value = gen_text, gen_value
        # same value, different notation when possible
        if gen_value.denominator == 1 and rng.random() < 0.5:
            gold_text = f"{gen_value.numerator}.0"
    else:
        gold_text, gold_value = number_text(rng)
    return wrap(gen_text), wrap(gold_text), gen_value == gold_value
