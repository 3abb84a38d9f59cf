"""Shared hand-built fixtures for small, fully-known worlds and logs."""

import numpy as np
import pytest

from eslm.funnel import EventLog, GroundTruthModel, World, WorldConfig


def make_world(users=3, items=10, scenes=2, warm=None, scale=0.5, seed=0):
    """Single-latent world with fixed weights; every probability is by hand."""
    rng = np.random.default_rng(seed)
    warm = (np.zeros((users, 0), dtype=np.int64) if warm is None
            else np.asarray(warm, dtype=np.int64))
    cfg = WorldConfig(users=users, items=items, scenes=scenes, latent_dim=1,
                      warmup_history=warm.shape[1])
    gt = GroundTruthModel(
        click_weights=np.array([1.0, -0.5]),
        pay_weights=np.array([1.0, -1.0]),
        scene_bias=np.concatenate([[0.0], -np.linspace(0.5, 1.0, scenes - 1)]),
        own_scene_pay_scale=scale,
    )
    return World(
        config=cfg,
        seed=seed,
        user_latents=rng.standard_normal((users, 1)),
        item_latents=rng.standard_normal((items, 1)),
        user_profile_feats=np.zeros((users, 1), dtype=np.int64),
        item_attr_feats=np.zeros((items, 1), dtype=np.int64),
        prices=np.linspace(10.0, 10.0 * items, items),
        warm_histories=warm,
        ground_truth=gt,
    )


def make_log(rows) -> EventLog:
    """EventLog from (user, item, ts, pv, click, pay_g, pay_other) tuples."""
    rows = sorted(rows, key=lambda r: (r[0], r[2], r[1]))
    mat = np.zeros((len(rows), 10), dtype=np.int64)
    for i, (u, it, t, pv, click, pay_g, pay_other) in enumerate(rows):
        pay_a = max(pay_g, pay_other)
        mat[i] = (u, it, 0, 1, pv, click, pay_g, pay_other, pay_a, t)
    return EventLog.from_matrix(mat)


@pytest.fixture
def tiny_world():
    return make_world()
