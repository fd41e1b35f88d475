"""
Hierarchical three-LSTM decoder step with the adjusted gate

Visual attention -> text attention -> LSTM1 (last word) and LSTM2
(attended history) -> gate -> LSTM3 -> vocabulary logits.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from attention import AttentionResult, pool_history, text_attend, visual_attend
from autodiff import DiffValue, concat, constant, dropout, embedding, sigmoid
from encoder import EncoderOutput
from error_handling import ValidationError
from layers import LSTMState, linear, lstm_step
from params import ModelParams, ParamGraph, bind_params

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2
# ids the output layer can never emit
UNPREDICTABLE_IDS = (PAD_ID, BOS_ID)


@dataclass(frozen=True)
class DecoderState:
    lstm1: LSTMState
    lstm2: LSTMState
    lstm3: LSTMState
    history: Tuple[DiffValue, ...]

    def append_word(self, word_embedding: DiffValue) -> "DecoderState":
        return replace(self, history=self.history + (word_embedding,))


@dataclass
class StepTrace:
    """Per-step quantities; logits stay in the graph for the losses"""
    alpha: np.ndarray
    beta: np.ndarray
    gate: Optional[np.ndarray]
    logits: DiffValue
    lstm1_out: np.ndarray
    lstm2_out: Optional[np.ndarray]
    mixed_input: np.ndarray

    @property
    def gate_value(self) -> Optional[float]:
        """Scalar gate, or the mean of a per-dimension gate"""
        if self.gate is None:
            return None
        return float(np.mean(self.gate))

    def to_record(self, token: str) -> Dict:
        return {
            "token": token,
            "gate": self.gate_value,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }


def mask_reserved(logits: DiffValue) -> DiffValue:
    """Send the PAD and BOS logits to -inf so no decoder or loss ever picks them"""
    mask = np.zeros(logits.shape)
    mask[list(UNPREDICTABLE_IDS)] = -np.inf
    return logits + constant(mask)


def _zero_state(size: int) -> LSTMState:
    return LSTMState(constant(np.zeros(size)), constant(np.zeros(size)))


def init_decoder_state(bos_embedding: DiffValue) -> DecoderState:
    """All LSTM states zero; history holds only w_0"""
    size = bos_embedding.shape[0]
    return DecoderState(_zero_state(size), _zero_state(size), _zero_state(size), (bos_embedding,))


def _textual_context(state: DecoderState, visual: AttentionResult, graph: ParamGraph) -> AttentionResult:
    cfg = graph.config
    if cfg.link_attentions:
        return text_attend(state.history, visual.context, graph)
    if cfg.unlink_mode == "zero_context":
        return text_attend(state.history, None, graph)
    return pool_history(state.history)


def decoder_step(
    state: DecoderState,
    last_word_emb: DiffValue,
    encoder_out: EncoderOutput,
    params: Union[ModelParams, ParamGraph],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[DecoderState, StepTrace]:
    """
    Advance the decoder by one word

    Args:
        state: Current decoder state; history already ends with last_word_emb
        last_word_emb: Embedding of the most recent word (w_0 = BOS at t=1)
        encoder_out: Encoder states with the blank slot
        params: Model parameters
        train_mode: Apply dropout before the output projection
        rng: Dropout source

    Returns:
        (new state, StepTrace)
    """
    graph = bind_params(params)
    cfg = graph.config
    if not state.history:
        raise ValidationError("decoder history is empty; it must start with the BOS embedding")
    if last_word_emb.shape != (cfg.hidden,):
        raise ValidationError(f"word embedding shape {last_word_emb.shape} != ({cfg.hidden},)")
    if not np.array_equal(last_word_emb.data, state.history[-1].data):
        raise ValidationError("last_word_emb must be the last entry of the history")

    if cfg.architecture == "attention_baseline":
        visual = visual_attend(encoder_out, state.lstm1.hidden, graph)
        lstm1 = lstm_step(concat([last_word_emb, visual.context]), state.lstm1, graph["lstm1_W"], graph["lstm1_b"])
        out = dropout(lstm1.hidden, cfg.dropout, rng, train_mode)
        logits = mask_reserved(linear(out, graph["out_W"], graph["out_b"]))
        trace = StepTrace(
            alpha=visual.weights.data, beta=np.zeros(0), gate=None, logits=logits,
            lstm1_out=lstm1.hidden.data, lstm2_out=None, mixed_input=lstm1.hidden.data,
        )
        return replace(state, lstm1=lstm1), trace

    visual = visual_attend(encoder_out, state.lstm3.hidden, graph)
    lstm1 = lstm_step(concat([last_word_emb, visual.context]), state.lstm1, graph["lstm1_W"], graph["lstm1_b"])
    s_t = lstm1.hidden

    if cfg.architecture == "deep_lstm_baseline":
        textual, lstm2, gate, d_t = None, state.lstm2, None, None
        mixed = s_t
    else:
        textual = _textual_context(state, visual, graph)
        lstm2 = lstm_step(concat([textual.context, visual.context]), state.lstm2, graph["lstm2_W"], graph["lstm2_b"])
        d_t = lstm2.hidden
        gate = sigmoid(graph["gate_W"] @ s_t)
        mixed = gate * s_t + (1.0 - gate) * d_t

    lstm3 = lstm_step(mixed, state.lstm3, graph["lstm3_W"], graph["lstm3_b"])
    out = dropout(lstm3.hidden, cfg.dropout, rng, train_mode)
    logits = mask_reserved(linear(out, graph["out_W"], graph["out_b"]))

    trace = StepTrace(
        alpha=visual.weights.data,
        beta=textual.weights.data if textual is not None else np.zeros(0),
        gate=gate.data if gate is not None else None,
        logits=logits,
        lstm1_out=s_t.data,
        lstm2_out=d_t.data if d_t is not None else None,
        mixed_input=mixed.data,
    )
    return DecoderState(lstm1, lstm2, lstm3, state.history), trace


def embed_word(params: Union[ModelParams, ParamGraph], word_id: int) -> DiffValue:
    return embedding(bind_params(params)["embed_W"], word_id)


def unroll_decoder(
    encoder_out: EncoderOutput,
    input_ids: Sequence[int],
    params: Union[ModelParams, ParamGraph],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> List[StepTrace]:
    """
    Teacher-forced decoding: feed BOS then input_ids, one step per fed word

    Returns:
        One StepTrace per step; step k predicts the word after the k-th fed word
    """
    graph = bind_params(params)
    word = embed_word(graph, BOS_ID)
    state = init_decoder_state(word)
    traces = []
    for position in range(len(input_ids) + 1):
        state, trace = decoder_step(state, word, encoder_out, graph, train_mode, rng)
        traces.append(trace)
        if position < len(input_ids):
            word = embed_word(graph, input_ids[position])
            state = state.append_word(word)
    return traces
