"""Evaluation metrics for classification, ranking, QA and generation tasks.

All metrics return values in [0, 1]; multiply by 100 only for display.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from fractions import Fraction


def _tokens(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def accuracy(preds, golds) -> float:
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError("preds and golds differ in length")
    if not golds:
        return 0.0
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


def f1_macro(preds, golds, num_labels: int) -> float:
    """Unweighted mean of per-label F1 over labels 0..num_labels-1.

    A label with no true positives, false positives or false negatives scores 0.
    """
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError("preds and golds differ in length")
    total = 0.0
    for label in range(num_labels):
        tp = sum(p == label and g == label for p, g in zip(preds, golds))
        fp = sum(p == label and g != label for p, g in zip(preds, golds))
        fn = sum(p != label and g == label for p, g in zip(preds, golds))
        denom = 2 * tp + fp + fn
        total += 2 * tp / denom if denom else 0.0
    return total / num_labels


def hit_ratio_at_k(ranked, relevant, k: int = 3) -> float:
    """1.0 if any of the first ``k`` ranked items is relevant."""
    relevant = set(relevant)
    return float(any(item in relevant for item in list(ranked)[:k]))


def ndcg_at_k(relevances, k: int = 3) -> float:
    """NDCG with gain rel_i / log2(i + 1), ranks counted from 1; 0 when nothing is relevant."""
    rels = list(relevances)

    def dcg(values):
        return sum(r / math.log2(i + 2) for i, r in enumerate(values[:k]))

    ideal = dcg(sorted(rels, reverse=True))
    return dcg(rels) / ideal if ideal > 0 else 0.0


def mean_over_queries(metric, rows) -> float:
    rows = list(rows)
    return sum(metric(*r) for r in rows) / len(rows) if rows else 0.0


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate, reference) -> float:
    """Sentence BLEU-4 with brevity penalty.

    For orders 2-4, an order with no clipped matches scores 1 / (count + 1)
    (add one to numerator and denominator) so short texts are not zeroed out.
    """
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        c_ngr, r_ngr = _ngrams(cand, n), _ngrams(ref, n)
        matched = sum(min(c, r_ngr[g]) for g, c in c_ngr.items())
        count = max(len(cand) - n + 1, 0)
        if matched == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (count + 1)
        else:
            p = matched / count
        log_sum += math.log(p)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / 4)


def rouge_n(candidate, reference, n: int = 2) -> float:
    """F1 of clipped n-gram overlap."""
    c_ngr = _ngrams(_tokens(candidate), n)
    r_ngr = _ngrams(_tokens(reference), n)
    c_total, r_total = sum(c_ngr.values()), sum(r_ngr.values())
    if c_total == 0 or r_total == 0:
        return 0.0
    overlap = sum(min(c, r_ngr[g]) for g, c in c_ngr.items())
    if overlap == 0:
        return 0.0
    precision, recall = overlap / c_total, overlap / r_total
    return 2 * precision * recall / (precision + recall)


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """F1 of longest-common-subsequence precision and recall."""
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(cand), lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


_NUM = r"-?[0-9]+(?:\.[0-9]+)?"
_NUMERIC = re.compile(
    rf"\\frac\s*\{{\s*({_NUM})\s*\}}\s*\{{\s*({_NUM})\s*\}}"  # \frac { a } { b }
    rf"|({_NUM})(?:\s*/\s*({_NUM}))?"  # a, a.b, a / b
)


def final_number(text) -> Fraction | None:
    """Value of the last integer, decimal, or simple fraction in ``text``."""
    text = text if isinstance(text, str) else " ".join(text)
    value = None
    for m in _NUMERIC.finditer(text):
        num, den = (m.group(1), m.group(2)) if m.group(1) is not None else (m.group(3), m.group(4))
        try:
            value = Fraction(num) / Fraction(den) if den is not None else Fraction(num)
        except ZeroDivisionError:
            value = None
    return value


def numeric_match(generated, gold, tol: float = 1e-9) -> bool:
    """Compare final numeric values; fall back to string equality when either is unparseable."""
    a, b = final_number(generated), final_number(gold)
    if a is None or b is None:
        return _tokens(generated) == _tokens(gold)
    return abs(float(a - b)) <= tol


CHOICE_MARKERS = ("故答案为", "答案为", "故选", "选", "answer")
_CHOICE = re.compile(r"[(（]?([A-D])[)）.:：,，。]?")


def _strip_marker(word: str) -> str:
    for m in CHOICE_MARKERS:
        if word.startswith(m):
            return word[len(m):]
    return word


def extract_choice(text) -> str:
    """Choice letter after the last marker word (e.g. "故选"), else the first standalone A-D."""
    words = _tokens(text)
    marked = [i for i, w in enumerate(words) if _strip_marker(w) != w]
    scan = words[marked[-1]:] if marked else words
    for w in scan:
        m = _CHOICE.fullmatch(_strip_marker(w))
        if m:
            return m.group(1)
    return ""
