"""
Tests for visual and text attention
"""

import numpy as np
import pytest

from attention import pool_history, text_attend, visual_attend
from autodiff import check_gradient, constant, softmax, tanh, total
from conftest import random_params, tiny_config
from encoder import EncoderOutput
from error_handling import ShapeError, ValidationError
from params import ParamGraph

SCORING = ["att_v_W", "att_v_V", "att_v_b", "att_v_w", "att_t_W", "att_t_V", "att_t_b", "att_t_w"]


def _encoder_out(rows: np.ndarray) -> EncoderOutput:
    return EncoderOutput(constant(np.vstack([rows, np.zeros(rows.shape[1])])))


def _zero_scoring(params):
    return params.with_tensors(**{name: np.zeros_like(params[name]) for name in SCORING})


def test_equal_scores_split_between_frame_and_blank(make_params):
    params = _zero_scoring(make_params())
    h1 = np.array([0.4, -1.0, 2.0])
    result = visual_attend(_encoder_out(h1[None, :]), constant(np.ones(3)), params)
    np.testing.assert_allclose(result.weights.data, [0.5, 0.5])
    np.testing.assert_allclose(result.context.data, h1 / 2)


def test_zero_scoring_is_uniform(make_params):
    params = _zero_scoring(make_params())
    rows = np.random.default_rng(0).normal(size=(4, 3))
    enc = _encoder_out(rows)
    result = visual_attend(enc, constant(np.ones(3)), params)
    np.testing.assert_allclose(result.weights.data, np.full(5, 0.2))
    np.testing.assert_allclose(result.context.data, enc.states.data.mean(axis=0))


def test_visual_context_matches_loop(make_params):
    params = make_params(seed=4)
    rng = np.random.default_rng(1)
    enc = _encoder_out(rng.normal(size=(3, 3)))
    query = rng.normal(size=3)
    result = visual_attend(enc, constant(query), params)

    scores = []
    for row in enc.states.data:
        pre = params["att_v_W"] @ row + params["att_v_V"] @ query + params["att_v_b"]
        scores.append(float(params["att_v_w"] @ np.tanh(pre)))
    weights = np.exp(scores - np.max(scores))
    weights /= weights.sum()
    context = sum(w * row for w, row in zip(weights, enc.states.data))
    np.testing.assert_allclose(result.weights.data, weights, atol=1e-12)
    np.testing.assert_allclose(result.context.data, context, atol=1e-12)


def test_text_attention_at_first_step_returns_bos(make_params):
    params = make_params(seed=7)
    w0 = constant(np.random.default_rng(3).normal(size=3))
    result = text_attend([w0], constant(np.ones(3)), params)
    assert result.weights.data.tolist() == [1.0]
    np.testing.assert_array_equal(result.context.data, w0.data)


def test_text_attention_without_history_is_rejected(make_params):
    with pytest.raises(ValidationError):
        text_attend([], constant(np.ones(3)), make_params())


def test_text_attention_uses_visual_context(make_params):
    params = make_params(seed=8)
    rng = np.random.default_rng(5)
    history = [constant(rng.normal(size=3)) for _ in range(3)]
    linked = text_attend(history, constant(rng.normal(size=3)), params).weights.data
    unlinked = text_attend(history, None, params).weights.data
    assert not np.allclose(linked, unlinked)
    np.testing.assert_allclose(unlinked.sum(), 1.0)


def test_pool_history_is_mean():
    rows = np.random.default_rng(2).normal(size=(4, 3))
    result = pool_history([constant(r) for r in rows])
    np.testing.assert_allclose(result.context.data, rows.mean(axis=0))
    np.testing.assert_allclose(result.weights.data, np.full(4, 0.25))


def test_query_size_checked(make_params):
    enc = _encoder_out(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        visual_attend(enc, constant(np.ones(4)), make_params())
    with pytest.raises(ShapeError):
        text_attend([constant(np.ones(3))], constant(np.ones(2)), make_params())


def test_weights_form_a_simplex_over_random_configurations():
    rng = np.random.default_rng(123)
    for trial in range(1000):
        hidden = int(rng.integers(1, 5))
        params = random_params(tiny_config(hidden=hidden), seed=trial, scale=float(rng.uniform(0.1, 3.0)))
        frames = int(rng.integers(1, 6))
        words = int(rng.integers(1, 6))
        visual = visual_attend(_encoder_out(rng.normal(size=(frames, hidden))), constant(rng.normal(size=hidden)), params)
        history = [constant(rng.normal(size=hidden)) for _ in range(words)]
        textual = text_attend(history, visual.context, params)

        for result, count in ((visual, frames + 1), (textual, words)):
            weights = result.weights.data
            assert weights.shape == (count,)
            assert np.all(weights >= 0.0)
            assert abs(weights.sum() - 1.0) <= 1e-10


def test_attention_gradients(make_params):
    params = make_params(seed=6)
    config = params.config
    rng = np.random.default_rng(8)
    enc_rows = rng.normal(size=(3, 3))
    history = rng.normal(size=(2, 3))
    inputs = {name: params[name] for name in SCORING}
    inputs["query"] = rng.normal(size=3)

    def program(leaves):
        graph = ParamGraph(config, {**params.bind().nodes, **leaves})
        visual = visual_attend(_encoder_out(enc_rows), leaves["query"], graph)
        textual = text_attend([constant(r) for r in history], visual.context, graph)
        return total(tanh(textual.context * visual.context + textual.context))

    for name in inputs:
        assert check_gradient(program, inputs, name) < 1e-4

def _visual_scores(params, enc, query):
    pre = enc.states.data @ params["att_v_W"].T + params["att_v_V"] @ query + params["att_v_b"]
    return np.tanh(pre) @ params["att_v_w"]


@pytest.mark.parametrize("shift", [-40.0, 0.5, 300.0])
def test_weights_ignore_a_common_score_shift(make_params, shift):
    params = make_params(seed=11, scale=1.5)
    rng = np.random.default_rng(12)
    enc = _encoder_out(rng.normal(size=(4, 3)))
    query = rng.normal(size=3)
    weights = visual_attend(enc, constant(query), params).weights.data
    shifted = softmax(constant(_visual_scores(params, enc, query) + shift)).data
    np.testing.assert_allclose(shifted, weights, rtol=0, atol=1e-10)


def test_context_stays_in_the_convex_hull():
    rng = np.random.default_rng(31)
    for trial in range(200):
        params = random_params(tiny_config(hidden=4), seed=trial, scale=2.0)
        rows = rng.normal(size=(int(rng.integers(1, 6)), 4))
        enc = _encoder_out(rows)
        visual = visual_attend(enc, constant(rng.normal(size=4)), params)
        history = rng.normal(size=(int(rng.integers(1, 6)), 4))
        textual = text_attend([constant(r) for r in history], visual.context, params)

        for context, attended in ((visual.context.data, enc.states.data), (textual.context.data, history)):
            assert np.all(context >= attended.min(axis=0) - 1e-12)
            assert np.all(context <= attended.max(axis=0) + 1e-12)


def test_visual_context_steers_text_attention():
    changed = 0
    for seed in range(100):
        params = random_params(tiny_config(hidden=4), seed=seed, scale=1.0)
        rng = np.random.default_rng(seed + 500)
        history = [constant(rng.normal(size=4)) for _ in range(3)]
        a_t = rng.normal(size=4)
        direction = rng.normal(size=4)
        direction /= np.linalg.norm(direction)
        before = text_attend(history, constant(a_t), params).weights.data
        after = text_attend(history, constant(a_t + direction), params).weights.data
        if np.max(np.abs(after - before)) > 1e-8:
            changed += 1
    assert changed >= 99


def test_identical_history_returns_that_embedding(make_params):
    params = make_params(seed=13, scale=2.0)
    word = np.array([0.3, -1.2, 0.8])
    result = text_attend([constant(word) for _ in range(5)], constant(np.ones(3)), params)
    np.testing.assert_allclose(result.context.data, word, rtol=0, atol=1e-12)


def test_text_context_matches_loop(make_params):
    params = make_params(seed=14)
    rng = np.random.default_rng(15)
    history = rng.normal(size=(4, 3))
    a_t = rng.normal(size=3)
    result = text_attend([constant(r) for r in history], constant(a_t), params)

    scores = []
    for row in history:
        pre = params["att_t_W"] @ row + params["att_t_V"] @ a_t + params["att_t_b"]
        scores.append(float(params["att_t_w"] @ np.tanh(pre)))
    weights = np.exp(scores - np.max(scores))
    weights /= weights.sum()
    context = sum(w * row for w, row in zip(weights, history))
    np.testing.assert_allclose(result.weights.data, weights, rtol=0, atol=1e-12)
    np.testing.assert_allclose(result.context.data, context, rtol=0, atol=1e-12)
