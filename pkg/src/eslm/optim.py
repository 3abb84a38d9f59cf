"""Adagrad with dense tensors and sparse embedding-row updates."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AdagradConfig:
    lr: float = 0.01
    eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.eps <= 0:
            raise ConfigError("optim.eps must be positive")


def init_state(params: dict) -> dict:
    """Zero squared-gradient accumulators, shape-congruent with params."""
    return {k: np.zeros_like(v) for k, v in params.items()}


def adagrad_step(params: dict, grads: dict, state: dict, cfg: AdagradConfig,
                 touched_rows=None) -> None:
    """In-place update: accum += g^2; theta -= lr * g / (sqrt(accum) + eps).

    The embedding table ("emb") updates only `touched_rows` so untouched
    rows keep their accumulators; every other tensor updates densely.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} mismatches parameter {name!r} "
                f"shape {params[name].shape}")
        if name == "emb" and touched_rows is not None:
            rows = np.asarray(touched_rows, dtype=np.int64)
            if rows.size:
                kernels.adagrad_rows(params[name], g, state[name], rows,
                                     cfg.lr, cfg.eps)
        else:
            kernels.adagrad_dense(params[name], g, state[name], cfg.lr, cfg.eps)
