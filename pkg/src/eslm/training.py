"""Variant training loops: one optimizer step per iteration, shared plumbing.

Five variants, all on the identical two-tower network so capacity never
confounds a comparison:

    baseline   click head on impressions + purchase head on clicked rows
    esmm       click head + product head, both on impressions
    pv2pay_g   one head, own-scene purchase label, impression space
    ps2pay_g   one head, own-scene purchase label, candidate space
    eslm       head a on pay_a over candidates, head g on the pay_a=1 subset

Every variant starts from the same initialization for a given seed, so
per-seed comparisons are paired.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import SampleSet, build_dp_dataset
from .errors import ConfigError
from .features import FeatureLayout, assemble_batch
from .funnel import World
from .losses import (
    esmm_loss,
    loss_pay_a_to_pay_g,
    loss_ps_to_pay_a,
    single_head_loss,
)
from .model import ModelConfig, backward, forward, init_params
from .optim import AdagradConfig, adagrad_step, init_state

VARIANTS = ("baseline", "esmm", "pv2pay_g", "ps2pay_g", "eslm")

_STREAM_INIT = 4
_STREAM_BATCH = 5


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1500
    batch_size: int = 256
    dp_weight: float = 1.0  # weight of the head-g term in the eslm loss

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("train.steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.dp_weight < 0:
            raise ConfigError("train.dp_weight must be >= 0")


@dataclass(frozen=True)
class TrainLogRow:
    step: int
    variant: str
    loss_total: float
    loss_head_a: float
    loss_head_g: float


TRAIN_LOG_COLUMNS = ("step", "variant", "loss_total", "loss_head_a", "loss_head_g")


def write_train_log(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r.step},{r.variant},{r.loss_total!r},"
                    f"{r.loss_head_a!r},{r.loss_head_g!r}\n")


class BatchCycler:
    """Epoch-shuffled index batches; reshuffles whenever the pool runs dry."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n) if n else 0
        self.rng = rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        if self._pos + self.batch_size > self._order.shape[0]:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


class TokenizedData:
    """SampleSet pre-assembled into model tokens for fast batch slicing."""

    def __init__(self, samples: SampleSet, world: World, layout: FeatureLayout):
        self.n = len(samples)
        self.space = samples.space
        if self.n:
            tok = assemble_batch(layout, world, samples.user_id,
                                 samples.item_id, samples.timestamp,
                                 samples.seq_ids, samples.seq_len)
        else:
            tok = {"tgt_tokens": np.zeros(0, dtype=np.int64),
                   "seq_tokens": np.zeros((0, samples.seq_cap), dtype=np.int64),
                   "seq_len": np.zeros(0, dtype=np.int64),
                   "side_tokens": np.zeros((0, layout.n_side_fields), dtype=np.int64)}
        self.tokens = tok
        self.labels = {"click": samples.click, "pay_g": samples.pay_g,
                       "pay_a": samples.pay_a}

    def batch(self, idx: np.ndarray) -> dict:
        out = {k: v[idx] for k, v in self.tokens.items()}
        out.update({k: v[idx] for k, v in self.labels.items()})
        out["space"] = self.space
        return out


def _accumulate(total, touched_list, grads, touched):
    """Sum gradient dicts across the sub-batches of one optimizer step."""
    if total is None:
        total = grads
    else:
        for k, v in grads.items():
            total[k] += v
    touched_list.append(touched)
    return total


def init_variant_params(model_cfg: ModelConfig, vocab_size: int, seed: int) -> dict:
    """Identical starting point for every variant under one (config, seed)."""
    rng = np.random.default_rng([seed, _STREAM_INIT])
    return init_params(model_cfg, vocab_size, rng)


def train_variant(variant: str, world: World, layout: FeatureLayout,
                  ps_train: SampleSet, pv_train: SampleSet,
                  model_cfg: ModelConfig, optim_cfg: AdagradConfig,
                  train_cfg: TrainConfig, seed: int):
    """Train one variant; returns (params, optimizer state, log rows)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}: expected one of {VARIANTS}")
    model_cfg.validate()
    optim_cfg.validate()
    train_cfg.validate()

    params = init_variant_params(model_cfg, layout.vocab_size, seed)
    state = init_state(params)
    rng = np.random.default_rng([seed, _STREAM_BATCH, VARIANTS.index(variant)])

    if variant == "baseline":
        pools = [TokenizedData(pv_train, world, layout),
                 TokenizedData(pv_train.select(pv_train.click == 1), world, layout)]
    elif variant in ("esmm", "pv2pay_g"):
        pools = [TokenizedData(pv_train, world, layout)]
    elif variant == "ps2pay_g":
        pools = [TokenizedData(ps_train, world, layout)]
    else:  # eslm
        pools = [TokenizedData(ps_train, world, layout),
                 TokenizedData(build_dp_dataset(ps_train, "pay_a"), world, layout)]
    cyclers = [BatchCycler(p.n, train_cfg.batch_size, rng) for p in pools]

    rows = []
    for step in range(train_cfg.steps):
        total = None
        touched_list = []
        l_a = l_g = 0.0

        if variant == "baseline":
            batch = pools[0].batch(cyclers[0].next_batch())
            trace = forward(params, model_cfg, batch, heads=("a",))
            l_a, d_a = single_head_loss(trace.prob("a"), batch, "click")
            total = _accumulate(total, touched_list,
                                *backward(params, model_cfg, trace, {"a": d_a}))
            idx = cyclers[1].next_batch()
            if idx.size:
                batch = pools[1].batch(idx)
                trace = forward(params, model_cfg, batch, heads=("g",))
                l_g, d_g = single_head_loss(trace.prob("g"), batch, "pay_g")
                total = _accumulate(total, touched_list,
                                    *backward(params, model_cfg, trace, {"g": d_g}))
            loss_total = l_a + l_g
        elif variant == "esmm":
            batch = pools[0].batch(cyclers[0].next_batch())
            trace = forward(params, model_cfg, batch)
            loss_total, d_ctr, d_cvr, l_a, l_g = esmm_loss(
                trace.prob("a"), trace.prob("g"), batch)
            total = _accumulate(total, touched_list,
                                *backward(params, model_cfg, trace,
                                          {"a": d_ctr, "g": d_cvr}))
        elif variant in ("pv2pay_g", "ps2pay_g"):
            batch = pools[0].batch(cyclers[0].next_batch())
            trace = forward(params, model_cfg, batch, heads=("g",))
            l_g, d_g = single_head_loss(trace.prob("g"), batch, "pay_g")
            total = _accumulate(total, touched_list,
                                *backward(params, model_cfg, trace, {"g": d_g}))
            loss_total = l_g
        else:  # eslm
            batch = pools[0].batch(cyclers[0].next_batch())
            trace = forward(params, model_cfg, batch, heads=("a",))
            l_a, d_a = loss_ps_to_pay_a(trace.prob("a"), batch)
            total = _accumulate(total, touched_list,
                                *backward(params, model_cfg, trace, {"a": d_a}))
            idx = cyclers[1].next_batch()
            if idx.size:
                batch = pools[1].batch(idx)
                trace = forward(params, model_cfg, batch, heads=("g",))
                l_g, d_g = loss_pay_a_to_pay_g(trace.prob("g"), batch)
                total = _accumulate(
                    total, touched_list,
                    *backward(params, model_cfg, trace,
                              {"g": train_cfg.dp_weight * d_g}))
            loss_total = l_a + train_cfg.dp_weight * l_g

        touched = (np.unique(np.concatenate(touched_list))
                   if touched_list else np.zeros(0, dtype=np.int64))
        adagrad_step(params, total, state, optim_cfg, touched_rows=touched)
        rows.append(TrainLogRow(step=step, variant=variant,
                                loss_total=float(loss_total),
                                loss_head_a=float(l_a), loss_head_g=float(l_g)))
    return params, state, rows
