"""Adagrad: closed-form behavior under constant gradients, sparse rows."""

import numpy as np
import pytest

from eslm.errors import ConfigError, ShapeError
from eslm.optim import AdagradConfig, adagrad_step, init_state


def test_constant_gradient_closed_form():
    # with accumulator starting at zero, step t has magnitude
    # lr * g / (sqrt(t * g^2) + eps)
    cfg = AdagradConfig(lr=0.1, eps=1e-8)
    g = 0.7
    params = {"w": np.array([2.0])}
    grads = {"w": np.array([g])}
    state = init_state(params)
    prev = params["w"][0]
    for t in range(1, 101):
        adagrad_step(params, grads, state, cfg)
        expected = cfg.lr * g / (np.sqrt(t * g * g) + cfg.eps)
        assert prev - params["w"][0] == pytest.approx(expected, abs=1e-15)
        prev = params["w"][0]
    assert state["w"][0] == pytest.approx(100 * g * g, rel=1e-12)


def test_zero_gradient_is_a_no_op():
    cfg = AdagradConfig()
    params = {"w": np.arange(4.0)}
    state = init_state(params)
    adagrad_step(params, {"w": np.zeros(4)}, state, cfg)
    assert np.array_equal(params["w"], np.arange(4.0))
    assert np.all(state["w"] == 0.0)


def test_sparse_rows_only_touch_listed_rows():
    cfg = AdagradConfig(lr=0.5)
    emb = np.ones((5, 3))
    params = {"emb": emb.copy()}
    state = init_state(params)
    grads = {"emb": np.zeros((5, 3))}
    grads["emb"][2] = 1.0
    grads["emb"][4] = -2.0
    adagrad_step(params, grads, state, cfg, touched_rows=np.array([2, 4]))
    assert np.array_equal(params["emb"][[0, 1, 3]], emb[[0, 1, 3]])
    assert np.all(state["emb"][[0, 1, 3]] == 0.0)
    assert np.all(params["emb"][2] < 1.0)
    assert np.all(params["emb"][4] > 1.0)
    # second step on a disjoint row leaves earlier accumulators alone
    accum_row2 = state["emb"][2].copy()
    grads["emb"][:] = 0.0
    grads["emb"][1] = 3.0
    adagrad_step(params, grads, state, cfg, touched_rows=np.array([1]))
    assert np.array_equal(state["emb"][2], accum_row2)


def test_shape_and_key_validation():
    cfg = AdagradConfig()
    params = {"w": np.zeros(3)}
    state = init_state(params)
    with pytest.raises(ShapeError):
        adagrad_step(params, {"w": np.zeros(4)}, state, cfg)
    with pytest.raises(ShapeError):
        adagrad_step(params, {"v": np.zeros(3)}, state, cfg)
    with pytest.raises(ConfigError):
        AdagradConfig(lr=0.0).validate()
    with pytest.raises(ConfigError):
        AdagradConfig(eps=0.0).validate()


def test_accumulators_never_decrease():
    cfg = AdagradConfig()
    rng = np.random.default_rng(0)
    params = {"w": np.zeros(8)}
    state = init_state(params)
    prev = state["w"].copy()
    for _ in range(20):
        adagrad_step(params, {"w": rng.standard_normal(8)}, state, cfg)
        assert np.all(state["w"] >= prev)
        prev = state["w"].copy()
