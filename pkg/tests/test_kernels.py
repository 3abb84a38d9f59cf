"""Kernel backends: hand oracles, backend parity, finite-difference grads."""

import os
import subprocess
import sys

import numpy as np
import pytest

from eslm.kernels import numpy_backend

BACKENDS = [numpy_backend]
try:
    from eslm.kernels import numba_backend
    BACKENDS.append(numba_backend)
except ImportError:  # pragma: no cover - numba is an install-time optional
    numba_backend = None

LN3 = np.log(3.0)


def _rand_case(rng, B=4, L=5, d=6, h=2, dk=3):
    tgt = rng.standard_normal((B, d))
    seq = rng.standard_normal((B, L, d))
    seq_len = rng.integers(0, L + 1, B)
    for b in range(B):
        seq[b, seq_len[b]:] = 0.0
    wq = rng.standard_normal((h, d, dk))
    wk = rng.standard_normal((h, d, dk))
    wv = rng.standard_normal((h, d, dk))
    ws = rng.standard_normal((h * dk, d))
    return tgt, seq, seq_len, wq, wk, wv, ws


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_masked_softmax_hand_case(be):
    # softmax([0, ln 3]) = [1/4, 3/4]; the masked slot gets exactly zero
    logits = np.array([[0.0, LN3, 999.0]])
    valid = np.array([[True, True, False]])
    out = be.masked_softmax(logits, valid)
    assert np.allclose(out, [[0.25, 0.75, 0.0]], atol=1e-12)
    assert out[0, 2] == 0.0


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_masked_softmax_all_masked_row_is_zero(be):
    logits = np.array([[1.0, 2.0], [3.0, 4.0]])
    valid = np.array([[False, False], [True, True]])
    out = be.masked_softmax(logits, valid)
    assert np.all(out[0] == 0.0)
    assert np.isclose(out[1].sum(), 1.0)


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_attention_hand_case(be):
    # One head, dk=1: k = first coord, v = second coord, q = tgt first coord.
    # seq = [(0, 4), (ln 3, 0)] gives logits [0, ln 3] -> weights [1/4, 3/4]
    # and head output 0.25 * 4 + 0.75 * 0 = 1.0; ws = [[2, -1]] maps it to
    # summary (2, -1).
    tgt = np.array([[1.0, 0.0]])
    seq = np.array([[[0.0, 4.0], [LN3, 0.0]]])
    seq_len = np.array([2], dtype=np.int64)
    wq = np.array([[[1.0], [0.0]]])
    wk = np.array([[[1.0], [0.0]]])
    wv = np.array([[[0.0], [1.0]]])
    ws = np.array([[2.0, -1.0]])
    summary, concat, weights, _, _, _ = be.attention_forward(
        tgt, seq, seq_len, wq, wk, wv, ws)
    assert np.allclose(weights[0, 0], [0.25, 0.75], atol=1e-12)
    assert np.allclose(concat, [[1.0]], atol=1e-12)
    assert np.allclose(summary, [[2.0, -1.0]], atol=1e-12)


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_attention_empty_sequence_gives_zero_summary(be):
    rng = np.random.default_rng(11)
    tgt, seq, seq_len, wq, wk, wv, ws = _rand_case(rng)
    seq_len[:] = 0
    seq[:] = 0.0
    summary, concat, weights, _, _, _ = be.attention_forward(
        tgt, seq, seq_len, wq, wk, wv, ws)
    assert np.all(summary == 0.0)
    assert np.all(concat == 0.0)
    assert np.all(weights == 0.0)


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_attention_weights_sum_to_one_on_valid_rows(be):
    rng = np.random.default_rng(3)
    for trial in range(5):
        tgt, seq, seq_len, wq, wk, wv, ws = _rand_case(rng)
        _, _, weights, _, _, _ = be.attention_forward(
            tgt, seq, seq_len, wq, wk, wv, ws)
        sums = weights.sum(axis=-1)
        want = (seq_len > 0).astype(float)[:, None] * np.ones(wq.shape[0])
        assert np.allclose(sums, want, atol=1e-12)


@pytest.mark.skipif(numba_backend is None, reason="numba not installed")
def test_backend_parity_forward_and_backward():
    rng = np.random.default_rng(29)
    for trial in range(5):
        tgt, seq, seq_len, wq, wk, wv, ws = _rand_case(rng)
        f_np = numpy_backend.attention_forward(tgt, seq, seq_len, wq, wk, wv, ws)
        f_nb = numba_backend.attention_forward(tgt, seq, seq_len, wq, wk, wv, ws)
        for a, b in zip(f_np, f_nb):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
        d_summary = rng.standard_normal(f_np[0].shape)
        g_np = numpy_backend.attention_backward(
            d_summary, tgt, seq, seq_len, wq, wk, wv, ws,
            f_np[3], f_np[4], f_np[5], f_np[2], f_np[1])
        g_nb = numba_backend.attention_backward(
            d_summary, tgt, seq, seq_len, wq, wk, wv, ws,
            f_nb[3], f_nb[4], f_nb[5], f_nb[2], f_nb[1])
        for a, b in zip(g_np, g_nb):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_attention_backward_matches_finite_differences(be):
    rng = np.random.default_rng(7)
    tgt, seq, seq_len, wq, wk, wv, ws = _rand_case(rng, B=3, L=4, d=3, h=2, dk=2)
    direction = rng.standard_normal((3, 3))

    def loss():
        return float((be.attention_forward(
            tgt, seq, seq_len, wq, wk, wv, ws)[0] * direction).sum())

    f = be.attention_forward(tgt, seq, seq_len, wq, wk, wv, ws)
    grads = be.attention_backward(direction, tgt, seq, seq_len, wq, wk, wv, ws,
                                  f[3], f[4], f[5], f[2], f[1])
    eps = 1e-6
    for arr, grad in zip([tgt, seq, wq, wk, wv, ws], grads):
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + eps
            up = loss()
            arr[ix] = old - eps
            down = loss()
            arr[ix] = old
            num = (up - down) / (2 * eps)
            assert abs(num - grad[ix]) < 1e-6, (ix, num, grad[ix])
            it.iternext()


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_scatter_add_rows_accumulates_duplicates(be):
    table = np.zeros((3, 2))
    ids = np.array([1, 1, 2], dtype=np.int64)
    rows = np.array([[1.0, 2.0], [10.0, 20.0], [5.0, 5.0]])
    be.scatter_add_rows(table, ids, rows)
    assert np.allclose(table, [[0.0, 0.0], [11.0, 22.0], [5.0, 5.0]])


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_adagrad_dense_two_steps(be):
    # grad 3, lr 0.01: accum 9 then 18; param 0.99000000003333,
    # then 0.9829289322381345 (0.03 / (sqrt(18) + 1e-8) more off)
    param = np.array([1.0])
    accum = np.array([0.0])
    grad = np.array([3.0])
    be.adagrad_dense(param, grad, accum, 0.01, 1e-8)
    assert np.isclose(param[0], 0.9900000000333333, atol=1e-15)
    assert accum[0] == 9.0
    be.adagrad_dense(param, grad, accum, 0.01, 1e-8)
    assert np.isclose(param[0], 0.9829289322381345, atol=1e-15)
    assert accum[0] == 18.0


@pytest.mark.parametrize("be", BACKENDS, ids=lambda b: b.NAME)
def test_adagrad_rows_touches_only_listed_rows(be):
    param = np.ones((3, 2))
    accum = np.zeros((3, 2))
    grad = np.zeros((3, 2))
    grad[1] = 3.0
    be.adagrad_rows(param, grad, accum, np.array([1], dtype=np.int64), 0.01, 1e-8)
    assert np.allclose(param[0], 1.0) and np.allclose(param[2], 1.0)
    assert np.allclose(param[1], 0.9900000000333333, atol=1e-15)
    assert np.all(accum[[0, 2]] == 0.0) and np.all(accum[1] == 9.0)


@pytest.mark.skipif(numba_backend is None, reason="numba not installed")
def test_backend_env_flag_selects_implementation():
    code = "import eslm.kernels as k; print(k.backend_name)"
    for flag, want in [("numpy", "numpy"), ("numba", "numba"), ("auto", "numba")]:
        env = dict(os.environ, ESLM_BACKEND=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == want

    env = dict(os.environ, ESLM_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "ESLM_BACKEND" in out.stderr
