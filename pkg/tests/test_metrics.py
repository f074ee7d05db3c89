import math
import random

import pytest

import oracles
from mathcurric import metrics


def test_accuracy():
    assert metrics.accuracy([1, 2], [1, 2]) == 1.0
    assert metrics.accuracy([0, 0], [1, 1]) == 0.0
    assert metrics.accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75
    with pytest.raises(ValueError):
        metrics.accuracy([1], [1, 2])


def test_f1_macro_examples():
    assert metrics.f1_macro([0, 1, 2], [0, 1, 2], 3) == 1.0
    # each class: TP=1, FP=1, FN=1 -> F1 = 2/(2+1+1)
    assert metrics.f1_macro([0, 1, 0, 1], [0, 1, 1, 0], 2) == 0.5
    # label 2 is present but never predicted
    preds, golds = [0, 1, 0, 1], [0, 1, 2, 1]
    assert math.isclose(metrics.f1_macro(preds, golds, 3), (2 / 3 + 1.0 + 0.0) / 3, rel_tol=1e-15)
    # absent labels count as zero
    assert metrics.f1_macro([0, 0], [0, 0], 2) == 0.5


def test_f1_equals_accuracy_when_balanced_and_symmetric():
    golds = [0, 0, 1, 1, 2, 2]
    preds = [0, 1, 1, 2, 2, 0]
    assert math.isclose(metrics.f1_macro(preds, golds, 3), metrics.accuracy(preds, golds), rel_tol=1e-15)


def test_hit_ratio():
    assert metrics.hit_ratio_at_k([5, 1, 2], {5}) == 1.0
    assert metrics.hit_ratio_at_k([1, 2, 3, 5], {5}, k=3) == 0.0
    assert metrics.mean_over_queries(metrics.hit_ratio_at_k, [([1], {1}), ([2], {1})]) == 0.5


def test_ndcg_examples():
    assert metrics.ndcg_at_k([1, 0, 0]) == 1.0
    assert metrics.ndcg_at_k([0, 1, 0]) == 1 / math.log2(3)
    assert metrics.ndcg_at_k([0, 0, 0]) == 0.0


def test_ndcg_tie_invariance():
    assert metrics.ndcg_at_k([1, 0, 1, 0]) == metrics.ndcg_at_k([1, 0, 1, 0][::1])
    assert metrics.ndcg_at_k([2, 1, 1, 0]) == metrics.ndcg_at_k([2, 1, 1, 0])
    assert metrics.ndcg_at_k([1, 1, 0]) == 1.0


def test_bleu_examples():
    assert metrics.bleu4("a b c d", "a b c d") == 1.0
    assert metrics.bleu4("", "a b") == 0.0
    # 6-token pair counted by hand:
    # 1-grams 5/6, 2-grams 3/5, 3-grams 2/4, 4-grams 1/3; equal lengths so BP = 1
    value = metrics.bleu4("the cat sat on a mat", "the cat sat on the mat")
    assert math.isclose(value, (5 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25, rel_tol=1e-14)
    # no 3- or 4-gram matches: both orders smoothed to 1 / (count + 1)
    value = metrics.bleu4("a b x c d y", "a b c d")
    assert math.isclose(value, (4 / 6 * 2 / 5 * 1 / 5 * 1 / 4) ** 0.25, rel_tol=1e-14)


def test_bleu_brevity_penalty():
    value = metrics.bleu4("a b c d", "a b c d e f")
    assert math.isclose(value, math.exp(1 - 6 / 4), rel_tol=1e-14)


def test_rouge_examples():
    assert metrics.rouge_n("a b c", "a b c") == 1.0
    assert metrics.rouge_n("a b", "c d") == 0.0
    # bigrams: cand {ab, bc, cd}, ref {ab, bx, xd}: overlap 1 -> P = R = 1/3
    assert math.isclose(metrics.rouge_n("a b c d", "a b x d"), 1 / 3, rel_tol=1e-15)
    assert metrics.rouge_l("a b c", "a x c") == 2 / 3
    assert metrics.rouge_l("", "a") == 0.0
    assert metrics.rouge_l("a b", "a b") == 1.0


def test_numeric_match_examples():
    assert metrics.numeric_match("1", "1.0")
    assert metrics.numeric_match("1/2", "0.5")
    assert metrics.numeric_match("so x = \\frac{3}{4}", "0.75")
    assert not metrics.numeric_match("2", "3")
    assert metrics.numeric_match("no number", "no  number")
    assert not metrics.numeric_match("", "4")


def test_extract_choice():
    assert metrics.extract_choice("because x = 2 故选 B") == "B"
    assert metrics.extract_choice("A is wrong . 故选C") == "C"
    assert metrics.extract_choice("故选 A . then 故选 D .") == "D"
    assert metrics.extract_choice("the answer is ( B )") == "B"
    assert metrics.extract_choice("the option C looks right") == "C"
    assert metrics.extract_choice("") == ""


@pytest.mark.parametrize("seed", range(3))
def test_text_metrics_match_oracles(seed):
    rng = random.Random(seed)
    for _ in range(100):
        cand, ref = oracles.random_tokens(rng), oracles.random_tokens(rng)
        assert abs(metrics.bleu4(cand, ref) - oracles.bleu4(cand, ref)) < 1e-12
        assert abs(metrics.rouge_n(cand, ref) - oracles.rouge_n(cand, ref)) < 1e-12
        assert abs(metrics.rouge_l(cand, ref) - oracles.rouge_l(cand, ref)) < 1e-12
        if cand and ref:
            assert metrics.lcs_length(cand, ref) == oracles.lcs_brute(cand, ref)


def test_ranking_and_f1_match_oracles():
    rng = random.Random(11)
    for _ in range(100):
        n = rng.randint(1, 5)
        rels = [rng.choice([0, 0, 1, 2]) for _ in range(n)]
        assert abs(metrics.ndcg_at_k(rels) - oracles.ndcg3(rels)) < 1e-12
        ranked = rng.sample(range(n), n)
        relevant = {i for i in range(n) if rng.random() < 0.3}
        assert metrics.hit_ratio_at_k(ranked, relevant) == oracles.hr3(ranked, relevant)
        k = rng.randint(2, 4)
        golds = [rng.randrange(k) for _ in range(rng.randint(1, 6))]
        preds = [rng.randrange(k) for _ in golds]
        assert abs(metrics.f1_macro(preds, golds, k) - oracles.f1_macro(preds, golds, k)) < 1e-12


def test_numeric_match_oracle():
    rng = random.Random(5)
    for _ in range(300):
        gen, gold, same = oracles.numeric_fixture(rng)
        assert metrics.numeric_match(gen, gold) == same, (gen, gold)


def test_metrics_stay_in_unit_interval():
    rng = random.Random(2)
    for _ in range(200):
        cand, ref = oracles.random_tokens(rng), oracles.random_tokens(rng)
        for fn in (metrics.bleu4, metrics.rouge_n, metrics.rouge_l):
            assert 0.0 <= fn(cand, ref) <= 1.0
