"""Synthetic multi-scene funnel: world generation and cascade simulation.

The world is a latent-factor logistic model, so every probability the
estimators try to learn has a closed form that tests and diagnostics can
query. A simulated episode walks the cascade for one user:

    match (noisy retrieval over all items) -> PS candidates
    rank  (noisy score over PS)            -> top-N impressions (pv)
    click -> own-scene purchase (pay_g)
    independent per-scene purchases of PS candidates elsewhere (pay_other)

Scene 0 is always "our" scene; the funnel runs there. Events are logged
denormalized: one row per PS candidate per episode carrying every flag.
"""

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, UnknownIdError

OWN_SCENE = 0
PROB_FLOOR = 1e-9

# Equal-probability bucket edges for a standard normal (8 buckets). Profile
# and attribute features are coarse quantile buckets of the first latent dims.
N_FEATURE_BUCKETS = 8
_BUCKET_EDGES = np.array([
    -1.1503493803760083, -0.6744897501960817, -0.31863936396437514, 0.0,
    0.31863936396437514, 0.6744897501960817, 1.1503493803760083,
])

EVENT_COLUMNS = (
    "user_id", "item_id", "scene_id", "ps", "pv", "click",
    "pay_g", "pay_other", "pay_a", "timestamp",
)

_STREAM_WORLD = 0
_STREAM_USER = 1


@dataclass(frozen=True)
class WorldConfig:
    """Knobs of the synthetic world."""

    users: int
    items: int
    scenes: int = 3
    latent_dim: int = 8
    warmup_history: int = 8
    click_intercept: float = -1.2
    pay_intercept: float = -2.2
    click_pay_correlation: float = 0.85
    logit_scale: float = 1.3
    scene_bias_low: float = -1.5
    scene_bias_high: float = -0.5
    own_scene_pay_scale: float = 0.5
    price_mu: float = 3.0
    price_sigma: float = 0.5

    def validate(self) -> None:
        if self.users <= 0:
            raise ConfigError("world.users must be positive")
        if self.items <= 0:
            raise ConfigError("world.items must be positive")
        if self.scenes < 2:
            raise ConfigError("world.scenes must be >= 2 (off-scene purchases need a second scene)")
        if self.latent_dim < 1:
            raise ConfigError("world.latent_dim must be >= 1")
        if self.warmup_history < 0:
            raise ConfigError("world.warmup_history must be >= 0")
        if not 0.0 <= self.click_pay_correlation <= 1.0:
            raise ConfigError("world.click_pay_correlation must lie in [0, 1]")
        if self.logit_scale <= 0:
            raise ConfigError("world.logit_scale must be positive")
        # 0 is allowed as a degenerate setting that switches pay_g off.
        if not 0.0 <= self.own_scene_pay_scale <= 1.0:
            raise ConfigError("world.own_scene_pay_scale must lie in [0, 1]")
        if self.warmup_history > self.items:
            raise ConfigError("world.warmup_history cannot exceed world.items")


@dataclass(frozen=True)
class EpisodeConfig:
    """Funnel sizes and noise levels for one simulated request."""

    ps_size: int
    impression_size: int
    match_noise: float = 2.0
    rank_noise: float = 1.0

    def validate(self, n_items: int) -> None:
        if self.impression_size < 1:
            raise ConfigError("funnel.impression_size must be >= 1")
        if self.ps_size < self.impression_size:
            raise ConfigError("funnel.impression_size cannot exceed funnel.ps_size")
        if self.ps_size > n_items:
            raise ConfigError("funnel.ps_size cannot exceed world.items")
        if self.match_noise < 0 or self.rank_noise < 0:
            raise ConfigError("funnel noise sigmas must be >= 0")


@dataclass(frozen=True)
class GroundTruthModel:
    """Closed-form oracle behind every sampled flag.

    Weight vectors have length latent_dim + 1; the last slot is the
    intercept, paired with a constant-1 feature. scene_bias[0] is zero by
    construction (our scene is the reference).
    """

    click_weights: np.ndarray
    pay_weights: np.ndarray
    scene_bias: np.ndarray
    own_scene_pay_scale: float


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    profile_features: np.ndarray
    latent: np.ndarray
    behavior_history: np.ndarray


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    attribute_features: np.ndarray
    latent: np.ndarray
    price: float


@dataclass(frozen=True)
class FunnelEvent:
    user_id: int
    item_id: int
    scene_id: int
    ps: int
    pv: int
    click: int
    pay_g: int
    pay_other: int
    pay_a: int
    timestamp: int


@dataclass(frozen=True)
class World:
    """Immutable synthetic world. Simulation state (histories) lives outside."""

    config: WorldConfig
    seed: int
    user_latents: np.ndarray       # (users, latent_dim)
    item_latents: np.ndarray       # (items, latent_dim)
    user_profile_feats: np.ndarray  # (users, n_profile_slots) bucket ids
    item_attr_feats: np.ndarray    # (items, n_attr_slots) bucket ids
    prices: np.ndarray             # (items,) positive
    warm_histories: np.ndarray     # (users, warmup_history) item ids, recent last
    ground_truth: GroundTruthModel

    @property
    def n_users(self) -> int:
        return self.user_latents.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_latents.shape[0]

    @property
    def n_scenes(self) -> int:
        return self.ground_truth.scene_bias.shape[0]

    def user(self, user_id: int) -> UserProfile:
        if not 0 <= user_id < self.n_users:
            raise UnknownIdError(f"unknown user_id {user_id}")
        return UserProfile(
            user_id=user_id,
            profile_features=self.user_profile_feats[user_id],
            latent=self.user_latents[user_id],
            behavior_history=self.warm_histories[user_id],
        )

    def item(self, item_id: int) -> ItemRecord:
        if not 0 <= item_id < self.n_items:
            raise UnknownIdError(f"unknown item_id {item_id}")
        return ItemRecord(
            item_id=item_id,
            attribute_features=self.item_attr_feats[item_id],
            latent=self.item_latents[item_id],
            price=float(self.prices[item_id]),
        )


@dataclass
class EventLog:
    """Column-oriented event log; one row per PS candidate per episode."""

    user_id: np.ndarray
    item_id: np.ndarray
    scene_id: np.ndarray
    ps: np.ndarray
    pv: np.ndarray
    click: np.ndarray
    pay_g: np.ndarray
    pay_other: np.ndarray
    pay_a: np.ndarray
    timestamp: np.ndarray

    def __len__(self) -> int:
        return self.user_id.shape[0]

    def column_matrix(self) -> np.ndarray:
        return np.stack([getattr(self, c) for c in EVENT_COLUMNS], axis=1)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "EventLog":
        cols = {c: np.ascontiguousarray(mat[:, i]) for i, c in enumerate(EVENT_COLUMNS)}
        return cls(**cols)

    @classmethod
    def empty(cls) -> "EventLog":
        z = np.zeros(0, dtype=np.int64)
        return cls(*(z.copy() for _ in EVENT_COLUMNS))

    def sorted(self) -> "EventLog":
        """Canonical order: (user_id, timestamp, item_id)."""
        order = np.lexsort((self.item_id, self.timestamp, self.user_id))
        mat = self.column_matrix()[order]
        return EventLog.from_matrix(mat)

    def events(self) -> Iterator[FunnelEvent]:
        for i in range(len(self)):
            yield FunnelEvent(*(int(getattr(self, c)[i]) for c in EVENT_COLUMNS))

    def to_csv(self, path) -> None:
        mat = self.column_matrix()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(EVENT_COLUMNS) + "\n")
            for row in mat:
                f.write(",".join(str(int(x)) for x in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "EventLog":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != ",".join(EVENT_COLUMNS):
                raise ConfigError(f"unexpected event log header in {path}: {header!r}")
            body = f.read()
        if not body.strip():
            return cls.empty()
        mat = np.loadtxt(body.splitlines(), dtype=np.int64, delimiter=",", ndmin=2)
        return cls.from_matrix(mat)


@dataclass
class PurchaseRecords:
    """All-scene purchase records keyed by (user_id, item_id, timestamp, scene)."""

    user_id: np.ndarray
    item_id: np.ndarray
    timestamp: np.ndarray
    scene_id: np.ndarray

    def __len__(self) -> int:
        return self.user_id.shape[0]

    @classmethod
    def empty(cls) -> "PurchaseRecords":
        z = np.zeros(0, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), z.copy())


def _bucketize(values: np.ndarray) -> np.ndarray:
    return np.searchsorted(_BUCKET_EDGES, values).astype(np.int64)


def generate_world(config: WorldConfig, seed: int) -> World:
    """Deterministically build a world from (config, seed)."""
    config.validate()
    rng = np.random.default_rng([seed, _STREAM_WORLD])
    L = config.latent_dim

    user_latents = rng.standard_normal((config.users, L))
    item_latents = rng.standard_normal((config.items, L))

    def _direction() -> np.ndarray:
        v = rng.standard_normal(L)
        return v / np.linalg.norm(v) * config.logit_scale

    w_click = _direction()
    w_indep = _direction()
    rho = config.click_pay_correlation
    w_pay = rho * w_click + np.sqrt(max(0.0, 1.0 - rho * rho)) * w_indep
    click_weights = np.concatenate([w_click, [config.click_intercept]])
    pay_weights = np.concatenate([w_pay, [config.pay_intercept]])

    scene_bias = np.zeros(config.scenes)
    scene_bias[1:] = rng.uniform(config.scene_bias_low, config.scene_bias_high,
                                 config.scenes - 1)

    prices = rng.lognormal(config.price_mu, config.price_sigma, config.items)

    n_slots = min(2, L)
    user_profile_feats = _bucketize(user_latents[:, :n_slots])
    item_attr_feats = _bucketize(item_latents[:, :n_slots])

    gt = GroundTruthModel(
        click_weights=click_weights,
        pay_weights=pay_weights,
        scene_bias=scene_bias,
        own_scene_pay_scale=config.own_scene_pay_scale,
    )

    # Warm-up histories: per user, sample warmup_history distinct items with
    # probability proportional to exp(click logit) (Gumbel top-k), weakest
    # pick first so the strongest affinity reads as most recent.
    W = config.warmup_history
    warm = np.zeros((config.users, W), dtype=np.int64)
    if W > 0:
        uw = user_latents * click_weights[:L]
        chunk = 256
        for lo in range(0, config.users, chunk):
            hi = min(lo + chunk, config.users)
            logits = uw[lo:hi] @ item_latents.T
            gumbel = -np.log(-np.log(rng.random(logits.shape)))
            score = logits + gumbel
            top = np.argpartition(-score, W - 1, axis=1)[:, :W]
            top_scores = np.take_along_axis(score, top, axis=1)
            order = np.argsort(-top_scores, axis=1)
            warm[lo:hi] = np.take_along_axis(top, order, axis=1)[:, ::-1]

    return World(
        config=config,
        seed=seed,
        user_latents=user_latents,
        item_latents=item_latents,
        user_profile_feats=user_profile_feats,
        item_attr_feats=item_attr_feats,
        prices=prices,
        warm_histories=warm,
        ground_truth=gt,
    )


def _check_ids(world: World, user_id: int, item_ids, scene_id: int) -> None:
    if not 0 <= user_id < world.n_users:
        raise UnknownIdError(f"unknown user_id {user_id}")
    if not 0 <= scene_id < world.n_scenes:
        raise UnknownIdError(f"unknown scene_id {scene_id}")
    items = np.asarray(item_ids)
    if items.size and (items.min() < 0 or items.max() >= world.n_items):
        raise UnknownIdError(f"item id out of range [0, {world.n_items})")


def _kind_weights(world: World, kind: str) -> np.ndarray:
    if kind == "click":
        return world.ground_truth.click_weights
    if kind == "pay":
        return world.ground_truth.pay_weights
    raise ConfigError(f"unknown probability kind {kind!r}: expected 'click' or 'pay'")


def ground_truth_logits(world: World, user_id: int, item_ids: np.ndarray,
                        kind: str, scene_id: int = OWN_SCENE) -> np.ndarray:
    """Raw logits for one user against many items."""
    _check_ids(world, user_id, item_ids, scene_id)
    w = _kind_weights(world, kind)
    L = world.config.latent_dim
    uw = world.user_latents[user_id] * w[:L]
    v = world.item_latents[np.asarray(item_ids, dtype=np.int64)]
    return v @ uw + w[L] + world.ground_truth.scene_bias[scene_id]


def ground_truth_probs(world: World, user_id: int, item_ids: np.ndarray,
                       kind: str, scene_id: int = OWN_SCENE) -> np.ndarray:
    """Vectorized oracle probabilities, clamped inside (1e-9, 1-1e-9)."""
    logits = ground_truth_logits(world, user_id, item_ids, kind, scene_id)
    p = 1.0 / (1.0 + np.exp(-logits))
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def ground_truth_prob(world: World, user_id: int, item_id: int,
                      kind: str, scene_id: int = OWN_SCENE) -> float:
    """Oracle probability for a single (user, item, scene)."""
    return float(ground_truth_probs(world, user_id, np.array([item_id]), kind, scene_id)[0])


def ground_truth_probs_pairs(world: World, user_ids: np.ndarray,
                             item_ids: np.ndarray, kind: str,
                             scene_id: int = OWN_SCENE) -> np.ndarray:
    """Oracle probabilities for aligned (user, item) pairs, vectorized."""
    users = np.asarray(user_ids, dtype=np.int64)
    items = np.asarray(item_ids, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= world.n_users):
        raise UnknownIdError(f"user id out of range [0, {world.n_users})")
    _check_ids(world, 0, items, scene_id)
    w = _kind_weights(world, kind)
    L = world.config.latent_dim
    uw = world.user_latents[users] * w[:L]
    v = world.item_latents[items]
    logits = np.sum(uw * v, axis=1) + w[L] + world.ground_truth.scene_bias[scene_id]
    p = 1.0 / (1.0 + np.exp(-logits))
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def user_rng(seed: int, user_id: int) -> np.random.Generator:
    """Per-user stream; makes episode output independent of user scheduling."""
    return np.random.default_rng([seed, _STREAM_USER, user_id])


def _argtop(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest scores, ties broken by ascending position."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:n]


def _simulate_episode_arrays(world: World, user_id: int, ep: EpisodeConfig,
                             rng: np.random.Generator, timestamp: int):
    """One funnel pass. Returns (event column dict, purchase column dict)."""
    n_items = world.n_items
    scenes = world.n_scenes
    K, N = ep.ps_size, ep.impression_size

    # Fixed-shape draws keep the stream layout independent of outcomes.
    match_draws = rng.standard_normal(n_items)
    rank_draws = rng.standard_normal(K)
    click_u = rng.random(N)
    pay_g_u = rng.random(N)
    pay_other_u = rng.random((K, scenes - 1))

    click_logits = ground_truth_logits(world, user_id, np.arange(n_items), "click")
    ps_items = _argtop(click_logits + ep.match_noise * match_draws, K)

    rank_scores = click_logits[ps_items] + ep.rank_noise * rank_draws
    pv_pos = _argtop(rank_scores, N)

    pv = np.zeros(K, dtype=np.int64)
    pv[pv_pos] = 1
    click = np.zeros(K, dtype=np.int64)
    pay_g = np.zeros(K, dtype=np.int64)

    imp_items = ps_items[pv_pos]
    p_click = ground_truth_probs(world, user_id, imp_items, "click")
    clicked = click_u < p_click
    click[pv_pos[clicked]] = 1
    p_pay_own = ground_truth_probs(world, user_id, imp_items, "pay")
    paid = clicked & (pay_g_u < world.ground_truth.own_scene_pay_scale * p_pay_own)
    pay_g[pv_pos[paid]] = 1

    pay_other = np.zeros(K, dtype=np.int64)
    pur_items = []
    pur_scenes = []
    pay_logits_base = ground_truth_logits(world, user_id, ps_items, "pay")
    for s in range(1, scenes):
        p_s = 1.0 / (1.0 + np.exp(-(pay_logits_base
                                    - world.ground_truth.scene_bias[OWN_SCENE]
                                    + world.ground_truth.scene_bias[s])))
        p_s = np.clip(p_s, PROB_FLOOR, 1.0 - PROB_FLOOR)
        bought = pay_other_u[:, s - 1] < p_s
        pay_other[bought] = 1
        pur_items.append(ps_items[bought])
        pur_scenes.append(np.full(int(bought.sum()), s, dtype=np.int64))
    # own-scene purchases are part of the all-scene purchase log too
    pur_items.append(ps_items[pay_g == 1])
    pur_scenes.append(np.full(int(pay_g.sum()), OWN_SCENE, dtype=np.int64))

    pur_items = np.concatenate(pur_items) if pur_items else np.zeros(0, dtype=np.int64)
    pur_scenes = np.concatenate(pur_scenes) if pur_scenes else np.zeros(0, dtype=np.int64)

    events = {
        "user_id": np.full(K, user_id, dtype=np.int64),
        "item_id": ps_items.astype(np.int64),
        "scene_id": np.full(K, OWN_SCENE, dtype=np.int64),
        "ps": np.ones(K, dtype=np.int64),
        "pv": pv,
        "click": click,
        "pay_g": pay_g,
        "pay_other": pay_other,
        "pay_a": np.maximum(pay_g, pay_other),
        "timestamp": np.full(K, timestamp, dtype=np.int64),
    }
    purchases = {
        "user_id": np.full(pur_items.shape[0], user_id, dtype=np.int64),
        "item_id": pur_items,
        "timestamp": np.full(pur_items.shape[0], timestamp, dtype=np.int64),
        "scene_id": pur_scenes,
    }
    return events, purchases


def simulate_episode(world: World, user_id: int, ep: EpisodeConfig,
                     rng: np.random.Generator, timestamp: int = 0) -> list:
    """Run one episode and return its events as FunnelEvent records."""
    if not 0 <= user_id < world.n_users:
        raise UnknownIdError(f"unknown user_id {user_id}")
    ep.validate(world.n_items)
    cols, _ = _simulate_episode_arrays(world, user_id, ep, rng, timestamp)
    n = cols["user_id"].shape[0]
    return [FunnelEvent(**{c: int(cols[c][i]) for c in EVENT_COLUMNS}) for i in range(n)]


def run_simulation(world: World, ep: EpisodeConfig, episodes_per_user: int,
                   out_path=None, return_purchases: bool = False):
    """Simulate every user for `episodes_per_user` episodes.

    Events come back sorted by (user_id, timestamp, item_id); when
    `out_path` is given the log is also written in the event CSV format.
    """
    ep.validate(world.n_items)
    if episodes_per_user < 0:
        raise ConfigError("funnel.episodes_per_user must be >= 0")

    event_cols = {c: [] for c in EVENT_COLUMNS}
    pur_cols = {c: [] for c in ("user_id", "item_id", "timestamp", "scene_id")}
    for user_id in range(world.n_users):
        rng = user_rng(world.seed, user_id)
        for t in range(episodes_per_user):
            ev, pur = _simulate_episode_arrays(world, user_id, ep, rng, t)
            for c in event_cols:
                event_cols[c].append(ev[c])
            for c in pur_cols:
                pur_cols[c].append(pur[c])

    if event_cols["user_id"]:
        log = EventLog(**{c: np.concatenate(event_cols[c]) for c in EVENT_COLUMNS}).sorted()
        purchases = PurchaseRecords(**{c: np.concatenate(pur_cols[c]) for c in pur_cols})
        order = np.lexsort((purchases.scene_id, purchases.item_id,
                            purchases.timestamp, purchases.user_id))
        purchases = PurchaseRecords(*(getattr(purchases, c)[order] for c in
                                      ("user_id", "item_id", "timestamp", "scene_id")))
    else:
        log = EventLog.empty()
        purchases = PurchaseRecords.empty()

    if out_path is not None:
        log.to_csv(out_path)
    if return_purchases:
        return log, purchases
    return log
