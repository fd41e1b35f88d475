"""
Tests for BLEU, ROUGE-L and the evaluated score
"""

import itertools
import math

import numpy as np
import pytest

from error_handling import ValidationError
from text_metrics import (
    bleu_n,
    closest_reference_length,
    evaluated_score,
    lcs_length,
    rouge_l,
    score_corpus,
    tokenize,
)

EPS = 1e-9
BETA = 1.2


def oracle_bleu(candidate, references, max_n):
    """Straight n-gram counting with lists"""
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        grams = [tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1)]
        if not grams:
            log_sum += math.log(EPS)
            continue
        clipped = 0
        for gram in set(grams):
            best_ref = max(
                [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)].count(gram) for ref in references
            )
            clipped += min(grams.count(gram), best_ref)
        log_sum += math.log((clipped if clipped else EPS) / len(grams))
    c = len(candidate)
    r = sorted((len(ref) for ref in references), key=lambda length: (abs(length - c), length))[0]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def oracle_lcs(a, b):
    """Longest subsequence of a that is also a subsequence of b, by enumeration"""
    def is_subsequence(seq, target):
        it = iter(target)
        return all(tok in it for tok in seq)

    for size in range(len(a), 0, -1):
        if any(is_subsequence(combo, b) for combo in itertools.combinations(a, size)):
            return size
    return 0


def oracle_rouge(candidate, references):
    best = 0.0
    for ref in references:
        lcs = oracle_lcs(candidate, ref)
        if lcs:
            p, r = lcs / len(candidate), lcs / len(ref)
            best = max(best, (1 + BETA ** 2) * p * r / (r + BETA ** 2 * p))
    return best


def golden_corpus(count=50, seed=11):
    rng = np.random.default_rng(seed)
    words = ["a", "man", "is", "cutting", "the", "onion", "dog"]
    cases = [
        (["a", "a", "a", "a"], [["a", "b", "c", "d"]]),
        (["a", "b", "c"], [["a", "c", "d"]]),
        (["a", "man", "is", "cutting"], [["a", "man", "is", "cutting"]]),
    ]
    while len(cases) < count:
        cand = [words[i] for i in rng.integers(len(words), size=rng.integers(1, 8))]
        refs = [
            [words[i] for i in rng.integers(len(words), size=rng.integers(1, 8))]
            for _ in range(rng.integers(1, 4))
        ]
        cases.append((cand, refs))
    return cases


GOLDEN = golden_corpus()


@pytest.mark.parametrize("candidate,references", GOLDEN)
def test_bleu4_matches_counting_oracle(candidate, references):
    assert bleu_n(candidate, references, 4) == pytest.approx(oracle_bleu(candidate, references, 4), rel=1e-12)


@pytest.mark.parametrize("candidate,references", GOLDEN)
def test_rouge_matches_enumeration_oracle(candidate, references):
    assert rouge_l(candidate, references) == pytest.approx(oracle_rouge(candidate, references), rel=1e-12)
    for ref in references:
        assert lcs_length(candidate, ref) == oracle_lcs(candidate, ref)


def test_repeated_token_case():
    # p1 = 1/4, higher orders floored: eps/3, eps/2, eps/1
    expected = (0.25 * (EPS / 3) * (EPS / 2) * EPS) ** 0.25
    assert bleu_n(list("aaaa"), [list("abcd")], 4) == pytest.approx(expected, rel=1e-12)
    assert bleu_n(list("aaaa"), [list("abcd")], 1) == pytest.approx(0.25)


def test_partial_overlap_case():
    candidate, reference = ["a", "b", "c"], [["a", "c", "d"]]
    bleu = (2 / 3 * (EPS / 2) * EPS * EPS) ** 0.25
    assert bleu_n(candidate, reference, 4) == pytest.approx(bleu, rel=1e-12)
    assert rouge_l(candidate, reference) == pytest.approx(2 / 3)
    report = evaluated_score(candidate, reference)
    assert report.score == pytest.approx(bleu + 2 / 3)


def test_identical_sentence_scores_two():
    sentence = tokenize("A man is slicing a tomato.")
    report = evaluated_score(sentence, [sentence])
    assert report.bleu4 == pytest.approx(1.0)
    assert report.rouge == pytest.approx(1.0)
    assert report.score == pytest.approx(2.0)


def test_disjoint_sentence_scores_zero():
    report = evaluated_score(["x", "y", "z", "w"], [["a", "b", "c", "d"]])
    assert report.rouge == 0.0
    assert report.score <= 1e-6
    assert report.score == report.bleu4 + report.rouge


def test_empty_candidate_is_zero():
    assert bleu_n([], [["a"]], 4) == 0.0
    assert rouge_l([], [["a"]]) == 0.0


@pytest.mark.parametrize("references", [[], [[]], [[], []]])
def test_references_must_exist(references):
    with pytest.raises(ValidationError):
        bleu_n(["a"], references, 4)
    with pytest.raises(ValidationError):
        rouge_l(["a"], references)


@pytest.mark.parametrize("max_n", [0, 5])
def test_max_n_range(max_n):
    with pytest.raises(ValidationError):
        bleu_n(["a"], [["a"]], max_n)


def test_sub_multiset_unigram_bleu_is_one():
    assert bleu_n(["b", "a", "c"], [["a", "b", "c"]], 1) == pytest.approx(1.0)


def test_short_candidate_is_penalised():
    assert bleu_n(["a", "b"], [["a", "b", "c", "d"]], 1) == pytest.approx(math.exp(1 - 4 / 2))


def test_closest_reference_prefers_shorter_on_tie():
    refs = [["x"] * 5, ["x"] * 3]
    assert closest_reference_length(4, refs) == 3
    assert closest_reference_length(4, refs[::-1]) == 3


@pytest.mark.parametrize("candidate,references", GOLDEN[:20])
def test_reference_order_does_not_matter(candidate, references):
    for perm in itertools.permutations(references):
        assert evaluated_score(candidate, list(perm)) == evaluated_score(candidate, references)


@pytest.mark.parametrize("candidate,references", GOLDEN)
def test_scores_in_range(candidate, references):
    report = evaluated_score(candidate, references)
    assert 0.0 <= report.bleu4 <= 1.0
    assert 0.0 <= report.rouge <= 1.0
    assert report.score == report.bleu4 + report.rouge


@pytest.mark.parametrize("text", ["A man, is cutting!", "the DOG runs.", "  spaced   out  "])
def test_tokenize_is_idempotent(text):
    tokens = tokenize(text)
    assert tokenize(" ".join(tokens)) == tokens


def test_tokenize_strips_punctuation_and_case():
    assert tokenize("A Man, cutting ONIONS!") == ["a", "man", "cutting", "onions"]


def test_score_corpus_on_perfect_candidates():
    refs = [[["a", "man", "is", "cooking"]], [["the", "dog", "is", "running", "fast"]]]
    scores = score_corpus([r[0] for r in refs], refs)
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"):
        assert scores[key] == pytest.approx(1.0)
    assert scores["score"] == pytest.approx(2.0)


def test_score_corpus_is_sentence_mean():
    cands = [["a", "b", "c"], ["a", "a", "a", "a"]]
    refs = [[["a", "c", "d"]], [["a", "b", "c", "d"]]]
    scores = score_corpus(cands, refs)
    expected = (bleu_n(cands[0], refs[0], 4) + bleu_n(cands[1], refs[1], 4)) / 2
    assert scores["bleu4"] == pytest.approx(expected)


def test_score_corpus_rejects_misaligned_inputs():
    with pytest.raises(ValidationError):
        score_corpus([["a"]], [])
