"""Training/evaluation samples built from the event log.

The builders replay each user's episodes in timestamp order, snapshotting
the behavior sequence at episode start (clicks inside an episode only reach
later episodes, never the episode's own samples). Two sample spaces come
out of the same replay:

    PS space: one sample per candidate row, labels pay_a and pay_g
    Pv space: the impressed subset, labels click and pay_g

pay_a rows are produced by joining candidate rows against the all-scene
purchase table on (user_id, item_id, timestamp).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DatasetContractError
from .funnel import EventLog, PurchaseRecords, World

SAMPLE_COLUMNS = ("user_id", "item_id", "timestamp", "seq", "click",
                  "pay_g", "pay_a", "split")
SPLIT_NAMES = ("train", "test")
SEQ_PAD = -1


@dataclass(frozen=True)
class DataConfig:
    """Sample construction knobs."""

    seq_cap: int = 20
    test_episodes: int = 1
    train_negative_keep: float = 1.0

    def validate(self) -> None:
        if self.seq_cap < 1:
            raise ConfigError("data.seq_cap must be >= 1")
        if self.test_episodes < 0:
            raise ConfigError("data.test_episodes must be >= 0")
        if not 0.0 < self.train_negative_keep <= 1.0:
            raise ConfigError("data.train_negative_keep must lie in (0, 1]")


@dataclass(frozen=True)
class Sample:
    user_id: int
    item_id: int
    timestamp: int
    seq: tuple
    click: int
    pay_g: int
    pay_a: int
    split: str


@dataclass
class SampleSet:
    """Column-oriented sample table; seq rows are padded with -1."""

    user_id: np.ndarray
    item_id: np.ndarray
    timestamp: np.ndarray
    seq_ids: np.ndarray   # (N, seq_cap) raw item ids, -1 padding
    seq_len: np.ndarray
    click: np.ndarray
    pay_g: np.ndarray
    pay_a: np.ndarray
    split: np.ndarray     # 0 = train, 1 = test
    space: str = "ps"     # which funnel population the rows are drawn from

    def __len__(self) -> int:
        return self.user_id.shape[0]

    @property
    def seq_cap(self) -> int:
        return self.seq_ids.shape[1]

    def select(self, mask_or_index: np.ndarray) -> "SampleSet":
        ix = mask_or_index
        return SampleSet(
            user_id=self.user_id[ix], item_id=self.item_id[ix],
            timestamp=self.timestamp[ix], seq_ids=self.seq_ids[ix],
            seq_len=self.seq_len[ix], click=self.click[ix],
            pay_g=self.pay_g[ix], pay_a=self.pay_a[ix], split=self.split[ix],
            space=self.space)

    def split_view(self, name: str) -> "SampleSet":
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}: expected train or test")
        return self.select(self.split == SPLIT_NAMES.index(name))

    def sample(self, i: int) -> Sample:
        seq = tuple(int(x) for x in self.seq_ids[i, :self.seq_len[i]])
        return Sample(
            user_id=int(self.user_id[i]), item_id=int(self.item_id[i]),
            timestamp=int(self.timestamp[i]), seq=seq,
            click=int(self.click[i]), pay_g=int(self.pay_g[i]),
            pay_a=int(self.pay_a[i]), split=SPLIT_NAMES[int(self.split[i])])

    @classmethod
    def empty(cls, seq_cap: int, space: str = "ps") -> "SampleSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(),
                   np.full((0, seq_cap), SEQ_PAD, dtype=np.int64), z.copy(),
                   z.copy(), z.copy(), z.copy(), z.copy(), space=space)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(SAMPLE_COLUMNS) + "\n")
            for i in range(len(self)):
                seq = "|".join(str(int(x)) for x in self.seq_ids[i, :self.seq_len[i]])
                f.write(f"{self.user_id[i]},{self.item_id[i]},{self.timestamp[i]},"
                        f"{seq},{self.click[i]},{self.pay_g[i]},{self.pay_a[i]},"
                        f"{SPLIT_NAMES[int(self.split[i])]}\n")

    @classmethod
    def from_csv(cls, path, seq_cap: Optional[int] = None,
                 space: str = "ps") -> "SampleSet":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != ",".join(SAMPLE_COLUMNS):
                raise ConfigError(f"unexpected sample header in {path}: {header!r}")
            rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
        seqs = [[int(x) for x in r[3].split("|")] if r[3] else [] for r in rows]
        cap = seq_cap if seq_cap is not None else max((len(s) for s in seqs), default=1)
        cap = max(1, cap)
        n = len(rows)
        seq_ids = np.full((n, cap), SEQ_PAD, dtype=np.int64)
        seq_len = np.zeros(n, dtype=np.int64)
        for i, s in enumerate(seqs):
            if len(s) > cap:
                raise DatasetContractError(
                    f"sequence of length {len(s)} exceeds cap {cap}")
            seq_ids[i, :len(s)] = s
            seq_len[i] = len(s)
        if n == 0:
            return cls.empty(cap, space=space)

        def col(j):
            return np.array([int(r[j]) for r in rows], dtype=np.int64)

        splits = np.array([SPLIT_NAMES.index(r[7]) for r in rows], dtype=np.int64)
        return cls(user_id=col(0), item_id=col(1), timestamp=col(2),
                   seq_ids=seq_ids, seq_len=seq_len, click=col(4),
                   pay_g=col(5), pay_a=col(6), split=splits, space=space)


def _check_canonical_order(log: EventLog) -> None:
    order = np.lexsort((log.item_id, log.timestamp, log.user_id))
    if not np.array_equal(order, np.arange(len(log))):
        raise DatasetContractError(
            "event log must be sorted by (user_id, timestamp, item_id); "
            "call EventLog.sorted() first")


def _replay_sequences(log: EventLog, world: World, seq_cap: int):
    """Per-row behavior sequences snapshotted at episode start.

    Returns (seq_ids (N, seq_cap) raw ids padded with -1, seq_len (N,)).
    """
    n = len(log)
    seq_ids = np.full((n, seq_cap), SEQ_PAD, dtype=np.int64)
    seq_len = np.zeros(n, dtype=np.int64)
    if n == 0:
        return seq_ids, seq_len

    _check_canonical_order(log)
    user_ids = log.user_id
    boundaries = np.flatnonzero(np.diff(user_ids)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    for s, e in zip(starts, ends):
        u = int(user_ids[s])
        history = [int(x) for x in world.warm_histories[u]]
        t_col = log.timestamp[s:e]
        ep_bounds = np.flatnonzero(np.diff(t_col)) + 1
        ep_starts = np.concatenate([[0], ep_bounds]) + s
        ep_ends = np.concatenate([ep_bounds, [e - s]]) + s
        for es, ee in zip(ep_starts, ep_ends):
            snap = history[-seq_cap:]
            seq_len[es:ee] = len(snap)
            if snap:
                seq_ids[es:ee, :len(snap)] = snap
            clicked = log.item_id[es:ee][log.click[es:ee] == 1]
            history.extend(int(x) for x in clicked)
    return seq_ids, seq_len


def final_sequences(log: EventLog, world: World, seq_cap: int):
    """Every user's behavior sequence after the whole log has played out.

    Returns (seq_ids (n_users, seq_cap) raw ids padded with -1, seq_len);
    users absent from the log keep their warm history.
    """
    _check_canonical_order(log)
    seq_ids = np.full((world.n_users, seq_cap), SEQ_PAD, dtype=np.int64)
    seq_len = np.zeros(world.n_users, dtype=np.int64)
    histories = [[int(x) for x in world.warm_histories[u]]
                 for u in range(world.n_users)]
    clicked = log.click == 1
    for u, item in zip(log.user_id[clicked], log.item_id[clicked]):
        histories[int(u)].append(int(item))
    for u, history in enumerate(histories):
        tail = history[-seq_cap:]
        seq_len[u] = len(tail)
        if tail:
            seq_ids[u, :len(tail)] = tail
    return seq_ids, seq_len


def _split_column(log: EventLog, test_episodes: int) -> np.ndarray:
    """Last `test_episodes` timestamps of the log form the test split."""
    if len(log) == 0:
        return np.zeros(0, dtype=np.int64)
    t_max = int(log.timestamp.max())
    cut = t_max - test_episodes + 1
    return (log.timestamp >= cut).astype(np.int64)


def build_ps_dataset(log: EventLog, world: World, cfg: DataConfig) -> SampleSet:
    """One sample per previous-stage candidate row."""
    cfg.validate()
    seq_ids, seq_len = _replay_sequences(log, world, cfg.seq_cap)
    return SampleSet(
        user_id=log.user_id.copy(), item_id=log.item_id.copy(),
        timestamp=log.timestamp.copy(), seq_ids=seq_ids, seq_len=seq_len,
        click=log.click.copy(), pay_g=log.pay_g.copy(), pay_a=log.pay_a.copy(),
        split=_split_column(log, cfg.test_episodes))


def build_pv_dataset(log: EventLog, world: World, cfg: DataConfig) -> SampleSet:
    """One sample per impressed row (the exposure space)."""
    ps = build_ps_dataset(log, world, cfg)
    pv = ps.select(log.pv == 1)
    pv.space = "pv"
    return pv


def build_dp_dataset(samples: SampleSet, label: str = "pay_a") -> SampleSet:
    """The purchase subset: rows whose `label` flag is 1."""
    if label not in ("pay_a", "pay_g", "click"):
        raise ConfigError(f"unknown label {label!r}")
    return samples.select(getattr(samples, label) == 1)


def negative_sample(samples: SampleSet, label: str, keep: float,
                    rng: np.random.Generator) -> SampleSet:
    """Keep every positive and a uniform `keep` fraction of negatives."""
    if not 0.0 < keep <= 1.0:
        raise ConfigError("negative keep ratio must lie in (0, 1]")
    if keep == 1.0:
        return samples
    y = getattr(samples, label)
    u = rng.random(len(samples))
    return samples.select((y == 1) | (u < keep))


@dataclass(frozen=True)
class JoinStats:
    matched_other: int
    matched_own: int
    dropped_purchases: int
    conflicts: int


_USER_BITS = 21
_TIME_BITS = 10
_ITEM_BITS = 31


def _pack_keys(user_id, item_id, timestamp) -> np.ndarray:
    u = np.asarray(user_id, dtype=np.int64)
    i = np.asarray(item_id, dtype=np.int64)
    t = np.asarray(timestamp, dtype=np.int64)
    for v, bits, name in ((u, _USER_BITS, "user_id"), (t, _TIME_BITS, "timestamp"),
                          (i, _ITEM_BITS, "item_id")):
        if v.size and (v.min() < 0 or v.max() >= (1 << bits)):
            raise DatasetContractError(f"{name} outside [0, 2^{bits}) join range")
    return (u << (_TIME_BITS + _ITEM_BITS)) | (t << _ITEM_BITS) | i


def join_purchases(log: EventLog, purchases: PurchaseRecords):
    """Rebuild pay_other/pay_a flags by joining on (user, item, timestamp).

    Off-scene purchase records set pay_other; own-scene records must agree
    with the log's pay_g flag and any disagreement (either direction) counts
    as a conflict. Purchases whose key matches no log row are dropped (and
    counted). Returns (new EventLog, JoinStats).
    """
    ev_keys = _pack_keys(log.user_id, log.item_id, log.timestamp)
    other = purchases.scene_id != 0
    other_keys = _pack_keys(purchases.user_id[other], purchases.item_id[other],
                            purchases.timestamp[other])
    own_keys = _pack_keys(purchases.user_id[~other], purchases.item_id[~other],
                          purchases.timestamp[~other])

    pay_other = np.isin(ev_keys, other_keys).astype(np.int64)
    own_hit = np.isin(ev_keys, own_keys)
    pay_a = np.maximum(log.pay_g, pay_other)
    pay_a[own_hit] = 1

    conflicts = int(np.sum(own_hit != (log.pay_g == 1)))
    all_keys = _pack_keys(purchases.user_id, purchases.item_id,
                          purchases.timestamp)
    dropped = int(np.sum(~np.isin(all_keys, ev_keys)))

    joined = EventLog(
        user_id=log.user_id.copy(), item_id=log.item_id.copy(),
        scene_id=log.scene_id.copy(), ps=log.ps.copy(), pv=log.pv.copy(),
        click=log.click.copy(), pay_g=log.pay_g.copy(),
        pay_other=pay_other, pay_a=pay_a, timestamp=log.timestamp.copy())
    stats = JoinStats(
        matched_other=int(pay_other.sum()),
        matched_own=int(own_hit.sum()),
        dropped_purchases=dropped,
        conflicts=conflicts)
    return joined, stats
