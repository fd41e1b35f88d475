"""
Recurrent and affine building blocks shared by encoder and decoder
"""

from typing import NamedTuple

from autodiff import DiffValue, concat, sigmoid, take_slice, tanh
from error_handling import ShapeError


class LSTMState(NamedTuple):
    hidden: DiffValue
    cell: DiffValue


def linear(x: DiffValue, weight: DiffValue, bias: DiffValue = None) -> DiffValue:
    out = weight @ x
    return out if bias is None else out + bias


def lstm_step(x: DiffValue, state: LSTMState, weight: DiffValue, bias: DiffValue) -> LSTMState:
    """
    One LSTM cell update

    Gate pre-activations are W @ [x; h] + b, split in the order
    input, forget, output, candidate.
    """
    size = state.hidden.shape[0]
    expected = (4 * size, x.shape[0] + size)
    if weight.shape != expected or bias.shape != (4 * size,):
        raise ShapeError("lstm_step", weight.shape, bias.shape, expected, detail="weight/bias vs expected")

    z = linear(concat([x, state.hidden]), weight, bias)
    i = sigmoid(take_slice(z, 0, size))
    f = sigmoid(take_slice(z, size, 2 * size))
    o = sigmoid(take_slice(z, 2 * size, 3 * size))
    g = tanh(take_slice(z, 3 * size, 4 * size))

    cell = f * state.cell + i * g
    hidden = o * tanh(cell)
    return LSTMState(hidden, cell)
