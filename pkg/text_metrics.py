"""
Sentence-level caption metrics
BLEU-n with epsilon smoothing, ROUGE-L, and the combined evaluated score
"""

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

from config_env import config
from error_handling import ValidationError

TokenSeq = List[str]

_PUNCTUATION = re.compile(r"[^\w\s]")


@dataclass(frozen=True)
class ScoreReport:
    bleu4: float
    rouge: float
    score: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def tokenize(text: str) -> TokenSeq:
    """Lowercase, strip punctuation, split on whitespace (idempotent)"""
    return _PUNCTUATION.sub("", text.lower()).split()


def _check_references(references: Sequence[TokenSeq]):
    if not references:
        raise ValidationError("reference list is empty")
    if not any(len(r) > 0 for r in references):
        raise ValidationError("at least one reference must be non-empty")


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def closest_reference_length(candidate_length: int, references: Sequence[TokenSeq]) -> int:
    # ties go to the shorter reference so the choice is order independent
    return min((abs(len(r) - candidate_length), len(r)) for r in references)[1]


def bleu_n(candidate: TokenSeq, references: Sequence[TokenSeq], max_n: int = 4) -> float:
    """
    Smoothed sentence BLEU

    Zero clipped counts are floored to BLEU_EPSILON so the geometric mean
    stays defined on short sentences.
    """
    _check_references(references)
    if not 1 <= max_n <= 4:
        raise ValidationError(f"max_n must lie in [1, 4], got {max_n}")
    if not candidate:
        return 0.0

    eps = config.BLEU_EPSILON
    log_precision = 0.0
    for n in range(1, max_n + 1):
        counts = ngram_counts(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in ngram_counts(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        clipped = sum(min(count, max_ref[gram]) for gram, count in counts.items())
        possible = max(len(candidate) - n + 1, 0)
        if possible == 0:
            precision = eps
        else:
            precision = (clipped if clipped > 0 else eps) / possible
        log_precision += math.log(precision)

    c = len(candidate)
    r = closest_reference_length(c, references)
    brevity = min(1.0, math.exp(1.0 - r / c))
    return brevity * math.exp(log_precision / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, 1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: TokenSeq, references: Sequence[TokenSeq], beta: float = None) -> float:
    """LCS-based F-measure, maximised over references"""
    _check_references(references)
    beta = config.ROUGE_BETA if beta is None else beta
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        f = (1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision)
        best = max(best, f)
    return best


def evaluated_score(candidate: TokenSeq, references: Sequence[TokenSeq]) -> ScoreReport:
    """BLEU-4 + ROUGE-L: the step-2 gate statistic and the RL reward"""
    bleu4 = bleu_n(candidate, references, 4)
    rouge = rouge_l(candidate, references)
    return ScoreReport(bleu4=bleu4, rouge=rouge, score=bleu4 + rouge)


def score_corpus(candidates: Sequence[TokenSeq], references: Sequence[Sequence[TokenSeq]]) -> Dict[str, float]:
    """Mean sentence-level BLEU-1..4, ROUGE-L and Score over aligned lists"""
    if len(candidates) != len(references):
        raise ValidationError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    if not candidates:
        raise ValidationError("nothing to score")

    sums = Counter()
    for cand, refs in zip(candidates, references):
        for n in range(1, 5):
            sums[f"bleu{n}"] += bleu_n(cand, refs, n)
        sums["rouge_l"] += rouge_l(cand, refs)
    result = {key: sums[key] / len(candidates) for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l")}
    result["score"] = result["bleu4"] + result["rouge_l"]
    return result
