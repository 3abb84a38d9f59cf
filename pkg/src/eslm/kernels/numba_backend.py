"""Numba-jitted implementations of the hot kernels.

Same contracts as :mod:`eslm.kernels.numpy_backend`. Loops are written
per sample so no cross-sample reduction order exists; fastmath stays off so
results track the numpy backend to rounding error.
"""

import numpy as np
from numba import njit

NAME = "numba"

_JIT = dict(cache=True, fastmath=False)


@njit(**_JIT)
def masked_softmax(logits, valid):
    out = np.zeros_like(logits)
    flat_l = logits.reshape(-1, logits.shape[-1])
    flat_v = valid.reshape(-1, valid.shape[-1])
    flat_o = out.reshape(-1, out.shape[-1])
    n, L = flat_l.shape
    for r in range(n):
        m = -np.inf
        for j in range(L):
            if flat_v[r, j] and flat_l[r, j] > m:
                m = flat_l[r, j]
        if m == -np.inf:
            continue
        s = 0.0
        for j in range(L):
            if flat_v[r, j]:
                e = np.exp(flat_l[r, j] - m)
                flat_o[r, j] = e
                s += e
        for j in range(L):
            flat_o[r, j] /= s
    return out


@njit(**_JIT)
def attention_forward(tgt, seq, seq_len, wq, wk, wv, ws):
    B, L, d = seq.shape
    h, _, dk = wq.shape
    scale = 1.0 / np.sqrt(dk)
    q = np.zeros((B, h, dk))
    k = np.zeros((B, h, L, dk))
    v = np.zeros((B, h, L, dk))
    weights = np.zeros((B, h, L))
    concat = np.zeros((B, h * dk))
    for b in range(B):
        n = seq_len[b]
        for i in range(h):
            for e in range(dk):
                acc = 0.0
                for a in range(d):
                    acc += tgt[b, a] * wq[i, a, e]
                q[b, i, e] = acc
            for l in range(n):
                for e in range(dk):
                    ak = 0.0
                    av = 0.0
                    for a in range(d):
                        ak += seq[b, l, a] * wk[i, a, e]
                        av += seq[b, l, a] * wv[i, a, e]
                    k[b, i, l, e] = ak
                    v[b, i, l, e] = av
            if n == 0:
                continue
            m = -np.inf
            for l in range(n):
                lg = 0.0
                for e in range(dk):
                    lg += q[b, i, e] * k[b, i, l, e]
                lg *= scale
                weights[b, i, l] = lg
                if lg > m:
                    m = lg
            s = 0.0
            for l in range(n):
                w = np.exp(weights[b, i, l] - m)
                weights[b, i, l] = w
                s += w
            for l in range(n):
                weights[b, i, l] /= s
            for e in range(dk):
                acc = 0.0
                for l in range(n):
                    acc += weights[b, i, l] * v[b, i, l, e]
                concat[b, i * dk + e] = acc
    summary = np.dot(concat, ws)
    return summary, concat, weights, q, k, v


@njit(**_JIT)
def attention_backward(d_summary, tgt, seq, seq_len, wq, wk, wv, ws,
                       q, k, v, weights, concat):
    B, L, d = seq.shape
    h, _, dk = wq.shape
    scale = 1.0 / np.sqrt(dk)
    d_ws = np.dot(concat.T, d_summary)
    d_concat = np.dot(d_summary, ws.T)
    d_tgt = np.zeros_like(tgt)
    d_seq = np.zeros_like(seq)
    d_wq = np.zeros_like(wq)
    d_wk = np.zeros_like(wk)
    d_wv = np.zeros_like(wv)
    d_weights = np.empty(L)
    d_logits = np.empty(L)
    for b in range(B):
        n = seq_len[b]
        if n == 0:
            continue
        for i in range(h):
            inner = 0.0
            for l in range(n):
                dw = 0.0
                for e in range(dk):
                    dw += d_concat[b, i * dk + e] * v[b, i, l, e]
                d_weights[l] = dw
                inner += dw * weights[b, i, l]
            for l in range(n):
                d_logits[l] = weights[b, i, l] * (d_weights[l] - inner) * scale
            for l in range(n):
                dlg = d_logits[l]
                wgt = weights[b, i, l]
                for e in range(dk):
                    dk_e = dlg * q[b, i, e]
                    dv_e = wgt * d_concat[b, i * dk + e]
                    for a in range(d):
                        d_seq[b, l, a] += dk_e * wk[i, a, e] + dv_e * wv[i, a, e]
                        d_wk[i, a, e] += seq[b, l, a] * dk_e
                        d_wv[i, a, e] += seq[b, l, a] * dv_e
            for e in range(dk):
                dq_e = 0.0
                for l in range(n):
                    dq_e += d_logits[l] * k[b, i, l, e]
                for a in range(d):
                    d_tgt[b, a] += dq_e * wq[i, a, e]
                    d_wq[i, a, e] += tgt[b, a] * dq_e
    return d_tgt, d_seq, d_wq, d_wk, d_wv, d_ws


@njit(**_JIT)
def scatter_add_rows(table, ids, rows):
    n, d = rows.shape
    for i in range(n):
        r = ids[i]
        for j in range(d):
            table[r, j] += rows[i, j]


@njit(**_JIT)
def adagrad_dense(param, grad, accum, lr, eps):
    p = param.reshape(-1)
    g = grad.reshape(-1)
    a = accum.reshape(-1)
    for i in range(p.shape[0]):
        gi = g[i]
        a[i] += gi * gi
        p[i] -= lr * gi / (np.sqrt(a[i]) + eps)


@njit(**_JIT)
def adagrad_rows(param, grad, accum, ids, lr, eps):
    d = param.shape[1]
    for i in range(ids.shape[0]):
        r = ids[i]
        for j in range(d):
            g = grad[r, j]
            accum[r, j] += g * g
            param[r, j] -= lr * g / (np.sqrt(accum[r, j]) + eps)
