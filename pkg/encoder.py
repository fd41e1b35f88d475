"""
Bidirectional LSTM video encoder
Per-frame states projected to the decoder size, plus an all-zero blank slot
"""

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from autodiff import DiffValue, concat, constant, dropout, stack_rows
from error_handling import ValidationError
from layers import LSTMState, linear, lstm_step
from params import ModelParams, ParamGraph, bind_params


@dataclass
class EncoderOutput:
    """(N+1) x d states; the last row is the blank feature"""
    states: DiffValue

    @property
    def num_slots(self) -> int:
        return self.states.shape[0]

    @property
    def num_frames(self) -> int:
        return self.states.shape[0] - 1


def validate_features(features, feature_dim: Optional[int] = None) -> np.ndarray:
    frames = np.asarray(features, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValidationError(f"features must be an N x D matrix with N >= 1, got shape {frames.shape}")
    if feature_dim is not None and frames.shape[1] != feature_dim:
        raise ValidationError(f"feature dimension {frames.shape[1]} does not match configured {feature_dim}")
    if not np.all(np.isfinite(frames)):
        raise ValidationError("features contain non-finite values")
    return frames


def _run_lstm(frames: List[DiffValue], weight: DiffValue, bias: DiffValue, size: int) -> List[DiffValue]:
    state = LSTMState(constant(np.zeros(size)), constant(np.zeros(size)))
    outputs = []
    for x in frames:
        state = lstm_step(x, state, weight, bias)
        outputs.append(state.hidden)
    return outputs


def encode_video(
    features,
    params: Union[ModelParams, ParamGraph],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> EncoderOutput:
    """
    Encode N frames into N+1 decoder-sized states

    Args:
        features: N x D_v frame features
        params: Model parameters (bound or raw)
        train_mode: Apply dropout to the frame states
        rng: Dropout source, required in train mode when dropout > 0

    Returns:
        EncoderOutput whose final row is exactly zero
    """
    graph = bind_params(params)
    cfg = graph.config
    frames = validate_features(features, cfg.feature_dim)
    size = cfg.encoder_hidden

    inputs = [constant(row) for row in frames]
    forward = _run_lstm(inputs, graph["enc_fw_W"], graph["enc_fw_b"], size)
    backward = _run_lstm(inputs[::-1], graph["enc_bw_W"], graph["enc_bw_b"], size)[::-1]

    rows = []
    for fw, bw in zip(forward, backward):
        state = linear(concat([fw, bw]), graph["enc_proj_W"], graph["enc_proj_b"])
        rows.append(dropout(state, cfg.dropout, rng, train_mode))
    rows.append(constant(np.zeros(cfg.hidden)))

    return EncoderOutput(stack_rows(rows))
