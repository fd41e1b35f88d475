"""
Inference strategies: greedy, beam search and multinomial sampling
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from autodiff import DiffValue, log_softmax_array, softmax_array
from decoder import BOS_ID, EOS_ID, DecoderState, StepTrace, decoder_step, embed_word, init_decoder_state, unroll_decoder
from encoder import encode_video
from error_handling import ValidationError
from params import ModelParams, ParamGraph, bind_params


@dataclass
class DecodeResult:
    """Token ids without EOS, raw sum of chosen log-probs, per-step traces"""
    token_ids: List[int]
    log_prob: float
    traces: List[StepTrace]
    finished: bool

    def tokens(self, vocab) -> List[str]:
        return vocab.decode(self.token_ids)


@dataclass
class _Hypothesis:
    score: float
    token_ids: List[int]
    state: DecoderState
    word: DiffValue
    traces: List[StepTrace] = field(default_factory=list)


def _start(features, params) -> tuple:
    graph = bind_params(params)
    encoder_out = encode_video(features, graph, train_mode=False)
    word = embed_word(graph, BOS_ID)
    return graph, encoder_out, init_decoder_state(word), word


def _check_max_len(max_len: int):
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")


def _decode_with(choose, features, params, max_len: int) -> DecodeResult:
    _check_max_len(max_len)
    graph, encoder_out, state, word = _start(features, params)
    token_ids: List[int] = []
    traces: List[StepTrace] = []
    log_prob = 0.0
    finished = False

    for _ in range(max_len):
        state, trace = decoder_step(state, word, encoder_out, graph)
        traces.append(trace)
        log_probs = log_softmax_array(trace.logits.data)
        choice = choose(log_probs)
        log_prob += log_probs[choice]
        if choice == EOS_ID:
            finished = True
            break
        token_ids.append(choice)
        word = embed_word(graph, choice)
        state = state.append_word(word)

    return DecodeResult(token_ids, float(log_prob), traces, finished)


def greedy_decode(features, params: Union[ModelParams, ParamGraph], max_len: int = 20) -> DecodeResult:
    """Argmax at every step; ties go to the lowest vocabulary index"""
    return _decode_with(lambda log_probs: int(np.argmax(log_probs)), features, params, max_len)


def draw_token(logits: np.ndarray, rng: np.random.Generator) -> int:
    probs = softmax_array(np.asarray(logits, dtype=np.float64))
    return int(rng.choice(probs.shape[0], p=probs))


def sample_decode(
    features,
    params: Union[ModelParams, ParamGraph],
    rng_seed: Union[int, Sequence[int], np.random.Generator],
    max_len: int = 20,
) -> DecodeResult:
    """Draw every token from softmax(logits) with a seeded generator"""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    return _decode_with(lambda log_probs: draw_token(log_probs, rng), features, params, max_len)


def beam_decode(
    features,
    params: Union[ModelParams, ParamGraph],
    beam_width: int = 5,
    max_len: int = 20,
    length_normalize: bool = False,
) -> DecodeResult:
    """
    Length-terminated beam search over summed log-probabilities

    Each step keeps the top beam_width extensions of the live hypotheses.
    Extensions ending in EOS, and every kept extension at max_len, are
    retired into the pool; the best pooled hypothesis is returned.
    """
    if beam_width < 1:
        raise ValidationError(f"beam_width must be >= 1, got {beam_width}")
    _check_max_len(max_len)
    graph, encoder_out, state, word = _start(features, params)

    live = [_Hypothesis(0.0, [], state, word)]
    pool: List[tuple] = []

    for step in range(max_len):
        candidates = []
        stepped = []
        for index, hyp in enumerate(live):
            new_state, trace = decoder_step(hyp.state, hyp.word, encoder_out, graph)
            log_probs = log_softmax_array(trace.logits.data)
            stepped.append((new_state, trace))
            for word_id in np.flatnonzero(np.isfinite(log_probs)):
                candidates.append((hyp.score + log_probs[word_id], index, int(word_id)))

        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for score, index, word_id in candidates[:beam_width]:
            parent = live[index]
            new_state, trace = stepped[index]
            traces = parent.traces + [trace]
            if word_id == EOS_ID:
                pool.append((float(score), parent.token_ids, traces, True))
                continue
            token_ids = parent.token_ids + [word_id]
            if step == max_len - 1:
                pool.append((float(score), token_ids, traces, False))
                continue
            next_word = embed_word(graph, word_id)
            next_live.append(_Hypothesis(score, token_ids, new_state.append_word(next_word), next_word, traces))
        live = next_live
        if not live:
            break

    def selection_score(entry):
        score, token_ids, _, finished = entry
        if not length_normalize:
            return score
        return score / max(1, len(token_ids) + int(finished))

    best = pool[0]
    for entry in pool[1:]:
        if selection_score(entry) > selection_score(best):
            best = entry
    score, token_ids, traces, finished = best
    return DecodeResult(list(token_ids), score, traces, finished)


def sequence_log_prob(
    features,
    params: Union[ModelParams, ParamGraph],
    token_ids: Sequence[int],
    finished: bool,
) -> float:
    """Re-run the decoder on a given sequence and sum its log-probs"""
    targets = list(token_ids) + [EOS_ID] if finished else list(token_ids)
    if not targets:
        return 0.0
    graph = bind_params(params)
    encoder_out = encode_video(features, graph, train_mode=False)
    traces = unroll_decoder(encoder_out, targets[:-1], graph)
    total = 0.0
    for trace, target in zip(traces, targets):
        total += log_softmax_array(trace.logits.data)[target]
    return float(total)


def decode(features, params, max_len: int = 20, beam_width: Optional[int] = None,
           length_normalize: bool = False) -> DecodeResult:
    """Greedy when beam_width is None, beam search otherwise"""
    if beam_width is None:
        return greedy_decode(features, params, max_len)
    return beam_decode(features, params, beam_width, max_len, length_normalize)
