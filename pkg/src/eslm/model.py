"""Shared-embedding two-head network with hand-derived backprop.

One embedding table and one multi-head target-attention block feed two MLP
towers ("a" and "g"). The input representation per sample is

    [target embedding | attention summary | side-feature embeddings]

so the first layer sees (2 + n_side_fields) * emb_dim inputs. Gradients are
computed analytically; no autodiff framework is involved.
"""

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    EmptyBatchError,
    FeatureOutOfVocabError,
    NumericOverflowError,
    ShapeError,
    SnapshotError,
)

HEADS = ("a", "g")
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Network shape; defaults are small enough for quick gradient checks."""

    emb_dim: int = 16
    n_heads: int = 2
    head_dim: int = 8
    hidden1: int = 64
    hidden2: int = 32
    seq_cap: int = 20
    n_side_fields: int = 6
    prob_clamp: float = 1e-7

    def validate(self) -> None:
        for name in ("emb_dim", "n_heads", "head_dim", "hidden1", "hidden2",
                     "seq_cap", "n_side_fields"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ConfigError("model.prob_clamp must lie in (0, 0.5)")

    @property
    def input_dim(self) -> int:
        return self.emb_dim * (2 + self.n_side_fields)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "emb_dim", "n_heads", "head_dim", "hidden1", "hidden2",
            "seq_cap", "n_side_fields", "prob_clamp")}


def param_shapes(cfg: ModelConfig, vocab_size: int) -> dict:
    """Name -> shape for every tensor in the model."""
    d, h, dk = cfg.emb_dim, cfg.n_heads, cfg.head_dim
    shapes = {
        "emb": (vocab_size, d),
        "attn.wq": (h, d, dk),
        "attn.wk": (h, d, dk),
        "attn.wv": (h, d, dk),
        "attn.ws": (h * dk, d),
    }
    for t in HEADS:
        shapes[f"{t}.w1"] = (cfg.input_dim, cfg.hidden1)
        shapes[f"{t}.b1"] = (cfg.hidden1,)
        shapes[f"{t}.w2"] = (cfg.hidden1, cfg.hidden2)
        shapes[f"{t}.b2"] = (cfg.hidden2,)
        shapes[f"{t}.w3"] = (cfg.hidden2,)
        shapes[f"{t}.b3"] = (1,)
    return shapes


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator,
                zero_output: bool = True) -> dict:
    """Uniform init; output layers start at zero so untrained heads emit 0.5."""
    cfg.validate()
    d, h, dk = cfg.emb_dim, cfg.n_heads, cfg.head_dim
    params = {}
    params["emb"] = rng.uniform(-0.05, 0.05, (vocab_size, d))
    params["emb"][0] = 0.0  # padding row stays zero forever
    for name in ("attn.wq", "attn.wk", "attn.wv"):
        params[name] = rng.uniform(-1, 1, (h, d, dk)) / np.sqrt(d)
    params["attn.ws"] = rng.uniform(-1, 1, (h * dk, d)) / np.sqrt(h * dk)
    for t in HEADS:
        params[f"{t}.w1"] = rng.uniform(-1, 1, (cfg.input_dim, cfg.hidden1)) / np.sqrt(cfg.input_dim)
        params[f"{t}.b1"] = np.zeros(cfg.hidden1)
        params[f"{t}.w2"] = rng.uniform(-1, 1, (cfg.hidden1, cfg.hidden2)) / np.sqrt(cfg.hidden1)
        params[f"{t}.b2"] = np.zeros(cfg.hidden2)
        if zero_output:
            params[f"{t}.w3"] = np.zeros(cfg.hidden2)
        else:
            params[f"{t}.w3"] = rng.uniform(-1, 1, cfg.hidden2) / np.sqrt(cfg.hidden2)
        params[f"{t}.b3"] = np.zeros(1)
    return params


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _lookup(emb: np.ndarray, tokens: np.ndarray, what: str) -> np.ndarray:
    if tokens.size and (tokens.min() < 0 or tokens.max() >= emb.shape[0]):
        raise FeatureOutOfVocabError(
            f"{what} token outside vocabulary of size {emb.shape[0]}")
    return emb[tokens]


def embed(params: dict, batch: dict):
    """Pure lookups: target, sequence and side-feature embeddings."""
    emb = params["emb"]
    tgt_e = _lookup(emb, batch["tgt_tokens"], "target")
    seq_e = _lookup(emb, batch["seq_tokens"], "sequence")
    side_e = _lookup(emb, batch["side_tokens"], "side-feature")
    return tgt_e, seq_e, side_e


def target_attention(params: dict, tgt_e: np.ndarray, seq_e: np.ndarray,
                     seq_len: np.ndarray):
    """Wrapper over the kernel; validates projection shapes."""
    d = tgt_e.shape[1]
    if params["attn.wq"].shape[1] != d:
        raise ShapeError(
            f"attn.wq expects embeddings of width {params['attn.wq'].shape[1]}, got {d}")
    return kernels.attention_forward(
        tgt_e, seq_e, seq_len,
        params["attn.wq"], params["attn.wk"], params["attn.wv"],
        params["attn.ws"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def head_forward(params: dict, cfg: ModelConfig, head: str, x0: np.ndarray):
    """Three affine layers, rectifier hiddens, sigmoid output, clamped."""
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}: expected one of {HEADS}")
    if x0.shape[1] != params[f"{head}.w1"].shape[0]:
        raise ShapeError(
            f"head {head} expects input width {params[f'{head}.w1'].shape[0]}, "
            f"got {x0.shape[1]}")
    h1 = np.maximum(x0 @ params[f"{head}.w1"] + params[f"{head}.b1"], 0.0)
    if not np.isfinite(h1).all():
        raise NumericOverflowError(f"head {head} layer 1 produced non-finite values")
    h2 = np.maximum(h1 @ params[f"{head}.w2"] + params[f"{head}.b2"], 0.0)
    if not np.isfinite(h2).all():
        raise NumericOverflowError(f"head {head} layer 2 produced non-finite values")
    z = h2 @ params[f"{head}.w3"] + params[f"{head}.b3"][0]
    if not np.isfinite(z).all():
        raise NumericOverflowError(f"head {head} layer 3 produced non-finite values")
    p = np.clip(_sigmoid(z), cfg.prob_clamp, 1.0 - cfg.prob_clamp)
    return p, (h1, h2, p)


def eslm_score(p_a, p_g_given_a):
    """Decomposed purchase score: plain product of the two head outputs."""
    return p_a * p_g_given_a


@dataclass
class ForwardTrace:
    """Everything backward needs; heads maps head name -> (h1, h2, p)."""

    batch: dict
    heads: tuple
    tgt_e: np.ndarray
    seq_e: np.ndarray
    side_e: np.ndarray
    summary: np.ndarray
    concat: np.ndarray
    weights: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    x0: np.ndarray
    head_traces: dict

    def prob(self, head: str) -> np.ndarray:
        return self.head_traces[head][2]


def forward(params: dict, cfg: ModelConfig, batch: dict,
            heads: Iterable[str] = HEADS) -> ForwardTrace:
    """Embed, attend, concatenate, run the requested towers."""
    heads = tuple(heads)
    B = batch["tgt_tokens"].shape[0]
    if B == 0:
        raise EmptyBatchError("forward called on an empty batch")
    tgt_e, seq_e, side_e = embed(params, batch)
    summary, concat, weights, q, k, v = target_attention(
        params, tgt_e, seq_e, batch["seq_len"])
    x0 = np.concatenate([tgt_e, summary, side_e.reshape(B, -1)], axis=1)
    if x0.shape[1] != cfg.input_dim:
        raise ShapeError(
            f"assembled input width {x0.shape[1]} != configured {cfg.input_dim}")
    head_traces = {}
    for t in heads:
        _, head_traces[t] = head_forward(params, cfg, t, x0)
    return ForwardTrace(batch=batch, heads=heads, tgt_e=tgt_e, seq_e=seq_e,
                        side_e=side_e, summary=summary, concat=concat,
                        weights=weights, q=q, k=k, v=v, x0=x0,
                        head_traces=head_traces)


def backward(params: dict, cfg: ModelConfig, trace: ForwardTrace,
             dl_dp: dict):
    """Analytic gradients for every tensor.

    dl_dp maps head name -> per-sample dL/dp. Returns (grads, touched_rows)
    where touched_rows lists the unique embedding rows the batch used
    (padding row excluded).
    """
    if trace.x0.shape[1] != params["a.w1"].shape[0]:
        raise ShapeError("trace does not match current parameter shapes")
    unknown = set(dl_dp) - set(trace.heads)
    if unknown:
        raise ConfigError(f"loss gradients for heads {sorted(unknown)} "
                          "that forward never ran")
    batch = trace.batch
    B = trace.x0.shape[0]
    grads = zero_grads(params)
    dx0 = np.zeros_like(trace.x0)
    for t, dp in dl_dp.items():
        h1, h2, p = trace.head_traces[t]
        dz3 = dp * p * (1.0 - p)
        grads[f"{t}.w3"] += h2.T @ dz3
        grads[f"{t}.b3"] += np.array([dz3.sum()])
        dh2 = np.outer(dz3, params[f"{t}.w3"])
        dz2 = dh2 * (h2 > 0)
        grads[f"{t}.w2"] += h1.T @ dz2
        grads[f"{t}.b2"] += dz2.sum(axis=0)
        dh1 = dz2 @ params[f"{t}.w2"].T
        dz1 = dh1 * (h1 > 0)
        grads[f"{t}.w1"] += trace.x0.T @ dz1
        grads[f"{t}.b1"] += dz1.sum(axis=0)
        dx0 += dz1 @ params[f"{t}.w1"].T

    d = cfg.emb_dim
    d_tgt = dx0[:, :d].copy()
    d_summary = np.ascontiguousarray(dx0[:, d:2 * d])
    d_side = dx0[:, 2 * d:].reshape(B, cfg.n_side_fields, d)

    d_tgt_attn, d_seq, d_wq, d_wk, d_wv, d_ws = kernels.attention_backward(
        d_summary, trace.tgt_e, trace.seq_e, batch["seq_len"],
        params["attn.wq"], params["attn.wk"], params["attn.wv"],
        params["attn.ws"], trace.q, trace.k, trace.v, trace.weights,
        trace.concat)
    grads["attn.wq"] += d_wq
    grads["attn.wk"] += d_wk
    grads["attn.wv"] += d_wv
    grads["attn.ws"] += d_ws
    d_tgt += d_tgt_attn

    demb = grads["emb"]
    kernels.scatter_add_rows(demb, batch["tgt_tokens"], d_tgt)
    kernels.scatter_add_rows(demb, batch["seq_tokens"].reshape(-1),
                             np.ascontiguousarray(d_seq.reshape(-1, d)))
    kernels.scatter_add_rows(demb, batch["side_tokens"].reshape(-1),
                             np.ascontiguousarray(d_side.reshape(-1, d)))
    demb[0] = 0.0

    tokens = np.concatenate([batch["tgt_tokens"],
                             batch["seq_tokens"].reshape(-1),
                             batch["side_tokens"].reshape(-1)])
    touched = np.unique(tokens)
    touched = touched[touched > 0]
    return grads, touched


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    failures: list
    passed: bool


def gradient_check(params: dict, cfg: ModelConfig, loss_fn, grad_fn,
                   h: float = 1e-5, rel_tol: float = 1e-4,
                   abs_tol: float = 1e-8) -> GradCheckReport:
    """Compare grad_fn() against central finite differences of loss_fn().

    loss_fn() -> scalar loss at current params; grad_fn() -> grads dict.
    Every coordinate of every tensor is perturbed in place.
    """
    if h <= 0:
        raise ConfigError("finite-difference step h must be positive")
    grads = grad_fn()
    max_rel = 0.0
    max_abs = 0.0
    n = 0
    failures = []
    for name in sorted(params):
        arr = params[name]
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + h
            up = loss_fn()
            arr[ix] = old - h
            down = loss_fn()
            arr[ix] = old
            num = (up - down) / (2.0 * h)
            diff = abs(num - g[ix])
            denom = max(abs(num), abs(g[ix]))
            max_abs = max(max_abs, diff)
            n += 1
            if denom < 1e-6:
                ok = diff < abs_tol
            else:
                rel = diff / denom
                max_rel = max(max_rel, rel)
                ok = rel < rel_tol
            if not ok:
                failures.append((name, ix, float(num), float(g[ix])))
            it.iternext()
    return GradCheckReport(max_rel_err=max_rel, max_abs_err=max_abs,
                           n_checked=n, failures=failures,
                           passed=not failures)


def save_snapshot(path, params: dict, accum: dict, meta: dict) -> None:
    """Single-file tensor dump: params, optimizer state, JSON metadata."""
    payload = {f"p::{k}": v for k, v in params.items()}
    payload.update({f"s::{k}": v for k, v in accum.items()})
    meta = dict(meta, snapshot_version=SNAPSHOT_VERSION)
    payload["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_snapshot(path):
    """Inverse of save_snapshot; round-trips every tensor bit-exactly."""
    try:
        with np.load(path) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise SnapshotError(f"cannot read snapshot {path}: {e}") from e
    if "meta" not in data:
        raise SnapshotError(f"snapshot {path} has no metadata block")
    meta = json.loads(bytes(data.pop("meta")).decode("utf-8"))
    if meta.get("snapshot_version") != SNAPSHOT_VERSION:
        raise SnapshotError(
            f"snapshot {path} has version {meta.get('snapshot_version')}, "
            f"expected {SNAPSHOT_VERSION}")
    params = {k[3:]: v for k, v in data.items() if k.startswith("p::")}
    accum = {k[3:]: v for k, v in data.items() if k.startswith("s::")}
    if not params:
        raise SnapshotError(f"snapshot {path} contains no parameters")
    return params, accum, meta
