"""Per-variant losses and the blended revenue scorer.

Every loss returns (value, gradient-with-respect-to-probability) so the
model's backward pass can be driven without an autodiff graph. Batches carry
a `space` tag ("ps" or "pv") and loss operations refuse batches from the
wrong space.
"""

import numpy as np

from .errors import (
    ConfigError,
    DatasetContractError,
    EmptyBatchError,
    SpaceMismatchError,
)

LABEL_NAMES = ("click", "pay_g", "pay_a")


def _require_space(batch: dict, space: str, what: str) -> None:
    got = batch.get("space")
    if got != space:
        raise SpaceMismatchError(
            f"{what} expects a {space!r}-space batch, got {got!r}")


def bce_loss(p: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and dL/dp.

    p must already be clamped inside (0, 1); dL/dp = (p - y) / (p (1-p)) / N.
    """
    if p.shape[0] == 0:
        raise EmptyBatchError("bce_loss called on an empty batch")
    if p.shape != y.shape:
        raise ConfigError(f"probability/label shape mismatch {p.shape} vs {y.shape}")
    n = p.shape[0]
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    dl_dp = (p - y) / (p * (1.0 - p)) / n
    return float(loss), dl_dp


def loss_ps_to_pay_a(p_a: np.ndarray, batch: dict):
    """Head-a objective: all-scene purchase over previous-stage candidates."""
    _require_space(batch, "ps", "loss_ps_to_pay_a")
    return bce_loss(p_a, batch["pay_a"].astype(np.float64))


def loss_pay_a_to_pay_g(p_g: np.ndarray, batch: dict):
    """Head-g objective: own-scene purchase over the pay_a=1 subset.

    An empty subset contributes zero loss and zero gradients (the head just
    stays put); a batch containing pay_a=0 rows is a contract violation.
    """
    _require_space(batch, "ps", "loss_pay_a_to_pay_g")
    if p_g.shape[0] == 0:
        return 0.0, np.zeros(0)
    if np.any(batch["pay_a"] != 1):
        raise DatasetContractError(
            "loss_pay_a_to_pay_g received rows with pay_a=0")
    return bce_loss(p_g, batch["pay_g"].astype(np.float64))


def esmm_loss(p_ctr: np.ndarray, p_cvr: np.ndarray, batch: dict):
    """Impression-space composite: BCE on clicks plus BCE on the product.

    The product head (pCTR * pCVR) is scored against the own-scene purchase
    label. Returns (total, d_ctr, d_cvr, loss_ctr, loss_ctcvr).
    """
    _require_space(batch, "pv", "esmm_loss")
    click = batch["click"].astype(np.float64)
    pay = batch["pay_g"].astype(np.float64)
    l_ctr, d_ctr = bce_loss(p_ctr, click)
    prod = p_ctr * p_cvr
    l_ctcvr, d_prod = bce_loss(prod, pay)
    d_ctr = d_ctr + d_prod * p_cvr
    d_cvr = d_prod * p_ctr
    return l_ctr + l_ctcvr, d_ctr, d_cvr, l_ctr, l_ctcvr


def single_head_loss(p: np.ndarray, batch: dict, label_name: str):
    """BCE of one head against a named label, any declared space."""
    if label_name not in LABEL_NAMES:
        raise ConfigError(
            f"unknown label {label_name!r}: expected one of {LABEL_NAMES}")
    if batch.get("space") not in ("ps", "pv"):
        raise SpaceMismatchError(
            f"batch declares no valid space, got {batch.get('space')!r}")
    return bce_loss(p, batch[label_name].astype(np.float64))


def gmv_score(p_pv_to_pay, p_ps_to_pay, alpha: float, traffic: float, price):
    """Blended revenue objective: traffic * (p_pv + alpha * p_ps) * price."""
    if alpha < 0:
        raise ConfigError("gmv alpha must be >= 0")
    if traffic <= 0:
        raise ConfigError("gmv traffic must be positive")
    price = np.asarray(price, dtype=np.float64)
    if np.any(price <= 0):
        raise ConfigError("gmv price must be positive")
    return traffic * (np.asarray(p_pv_to_pay) + alpha * np.asarray(p_ps_to_pay)) * price
