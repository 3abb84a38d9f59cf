"""Pure-numpy implementations of the hot kernels.

This is the fallback backend (``ESLM_BACKEND=numpy``) and the reference
semantics for the numba backend. All arrays are float64; shapes follow the
conventions in :mod:`eslm.model`:

    tgt      (B, d)        target-item embeddings
    seq      (B, L, d)     behavior-sequence embeddings, padded with zeros
    seq_len  (B,)          true sequence lengths, 0 <= seq_len <= L
    wq/wk/wv (h, d, dk)    per-head projections
    ws       (h*dk, d)     output projection
"""

import numpy as np

NAME = "numpy"


def masked_softmax(logits, valid):
    """Row softmax over the last axis restricted to ``valid`` positions.

    Invalid positions get exactly zero weight; rows with no valid position
    come back all-zero instead of NaN.
    """
    neg = np.where(valid, logits, -np.inf)
    m = np.max(neg, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(neg - m)
    e = np.where(valid, e, 0.0)
    s = np.sum(e, axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def attention_forward(tgt, seq, seq_len, wq, wk, wv, ws):
    """Multi-head target attention: the target queries the behavior sequence.

    Returns (summary, concat, weights, q, k, v) where summary is (B, d),
    concat is (B, h*dk) and weights is (B, h, L).
    """
    B, L, _ = seq.shape
    h, _, dk = wq.shape
    q = np.einsum("bd,hde->bhe", tgt, wq)
    k = np.einsum("bld,hde->bhle", seq, wk)
    v = np.einsum("bld,hde->bhle", seq, wv)
    logits = np.einsum("bhe,bhle->bhl", q, k) / np.sqrt(dk)
    valid = (np.arange(L)[None, :] < seq_len[:, None])[:, None, :]
    weights = masked_softmax(logits, valid)
    heads = np.einsum("bhl,bhle->bhe", weights, v)
    concat = np.ascontiguousarray(heads.reshape(B, h * dk))
    summary = concat @ ws
    return summary, concat, weights, q, k, v


def attention_backward(d_summary, tgt, seq, seq_len, wq, wk, wv, ws,
                       q, k, v, weights, concat):
    """Gradients of attention_forward w.r.t. inputs and projections."""
    B, L, d = seq.shape
    h, _, dk = wq.shape
    d_ws = concat.T @ d_summary
    d_heads = (d_summary @ ws.T).reshape(B, h, dk)
    d_weights = np.einsum("bhe,bhle->bhl", d_heads, v)
    d_v = np.einsum("bhl,bhe->bhle", weights, d_heads)
    # softmax jacobian; masked positions already carry zero weight
    inner = np.sum(d_weights * weights, axis=-1, keepdims=True)
    d_logits = weights * (d_weights - inner) / np.sqrt(dk)
    d_q = np.einsum("bhl,bhle->bhe", d_logits, k)
    d_k = np.einsum("bhl,bhe->bhle", d_logits, q)
    d_tgt = np.einsum("bhe,hde->bd", d_q, wq)
    d_wq = np.einsum("bd,bhe->hde", tgt, d_q)
    d_seq = np.einsum("bhle,hde->bld", d_k, wk) + np.einsum("bhle,hde->bld", d_v, wv)
    d_wk = np.einsum("bld,bhle->hde", seq, d_k)
    d_wv = np.einsum("bld,bhle->hde", seq, d_v)
    valid = (np.arange(L)[None, :] < seq_len[:, None])[:, :, None]
    d_seq = np.where(valid, d_seq, 0.0)
    return d_tgt, d_seq, d_wq, d_wk, d_wv, d_ws


def scatter_add_rows(table, ids, rows):
    """table[ids[i]] += rows[i], accumulating over repeated ids. In place."""
    np.add.at(table, ids, rows)


def adagrad_dense(param, grad, accum, lr, eps):
    """Adagrad update over a whole tensor, in place."""
    accum += grad * grad
    param -= lr * grad / (np.sqrt(accum) + eps)


def adagrad_rows(param, grad, accum, ids, lr, eps):
    """Adagrad update restricted to the given (unique) rows, in place."""
    g = grad[ids]
    a = accum[ids] + g * g
    accum[ids] = a
    param[ids] -= lr * g / (np.sqrt(a) + eps)
