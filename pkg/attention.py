"""
Visual temporal attention and text-based dynamic attention
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from autodiff import DiffValue, constant, softmax, stack_rows, tanh, transpose
from encoder import EncoderOutput
from error_handling import ShapeError, ValidationError
from params import ModelParams, ParamGraph, bind_params


@dataclass
class AttentionResult:
    context: DiffValue
    weights: DiffValue


def _attend(
    rows: DiffValue,
    query: Optional[DiffValue],
    W: DiffValue,
    V: DiffValue,
    b: DiffValue,
    w: DiffValue,
    primitive: str,
) -> AttentionResult:
    # score_i = w . tanh(W r_i + V q + b)
    if rows.data.ndim != 2 or rows.shape[1] != W.shape[1]:
        raise ShapeError(primitive, rows.shape, W.shape)
    bias = b if query is None else V @ query + b
    scores = tanh(rows @ transpose(W) + bias) @ w
    weights = softmax(scores)
    return AttentionResult(context=weights @ rows, weights=weights)


def visual_attend(
    encoder_out: EncoderOutput,
    decoder_hidden_prev: DiffValue,
    params: Union[ModelParams, ParamGraph],
) -> AttentionResult:
    """
    Attend over all N+1 encoder slots, blank slot included

    Args:
        encoder_out: Encoder states
        decoder_hidden_prev: Previous hidden state of the top decoder LSTM
        params: Model parameters

    Returns:
        AttentionResult with the visual context a_t and weights alpha
    """
    graph = bind_params(params)
    if decoder_hidden_prev.shape != (graph.config.hidden,):
        raise ShapeError("visual_attend", decoder_hidden_prev.shape, (graph.config.hidden,))
    return _attend(
        encoder_out.states, decoder_hidden_prev,
        graph["att_v_W"], graph["att_v_V"], graph["att_v_b"], graph["att_v_w"],
        "visual_attend",
    )


def text_attend(
    prev_word_embeddings: Union[Sequence[DiffValue], DiffValue],
    visual_context: Optional[DiffValue],
    params: Union[ModelParams, ParamGraph],
) -> AttentionResult:
    """
    Attend over the embeddings of all previously generated words

    Passing visual_context=None scores the words without the visual link.
    """
    graph = bind_params(params)
    rows = _history_matrix(prev_word_embeddings)
    if visual_context is not None and visual_context.shape != (graph.config.hidden,):
        raise ShapeError("text_attend", visual_context.shape, (graph.config.hidden,))
    return _attend(
        rows, visual_context,
        graph["att_t_W"], graph["att_t_V"], graph["att_t_b"], graph["att_t_w"],
        "text_attend",
    )


def pool_history(prev_word_embeddings: Union[Sequence[DiffValue], DiffValue]) -> AttentionResult:
    """Unscored mean over the history (text attention removed)"""
    rows = _history_matrix(prev_word_embeddings)
    count = rows.shape[0]
    weights = constant(np.full(count, 1.0 / count))
    return AttentionResult(context=weights @ rows, weights=weights)


def _history_matrix(prev_word_embeddings) -> DiffValue:
    if isinstance(prev_word_embeddings, DiffValue):
        rows = prev_word_embeddings
    else:
        if len(prev_word_embeddings) == 0:
            raise ValidationError("text attention needs at least one previous word (w_0)")
        rows = stack_rows(prev_word_embeddings)
    if rows.data.ndim != 2 or rows.shape[0] == 0:
        raise ValidationError(f"text attention needs a t x d history with t >= 1, got {rows.shape}")
    return rows
