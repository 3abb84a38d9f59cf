"""Feature vocabulary: one shared embedding id space for every input field.

Token 0 is the padding row (its embedding is pinned to zero), items occupy
1..n_items, then come the bucketed user-profile slots, bucketed item
attributes, the scene id and the episode-time bucket. Keeping one table
means one sparse optimizer state and one snapshot array.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FeatureOutOfVocabError
from .funnel import N_FEATURE_BUCKETS, World

PAD_TOKEN = 0


@dataclass(frozen=True)
class FeatureLayout:
    """Offsets of every feature field inside the shared vocabulary."""

    n_items: int
    n_scenes: int
    n_time_buckets: int
    n_profile_slots: int = 2
    n_attr_slots: int = 2
    n_buckets: int = N_FEATURE_BUCKETS

    @property
    def item_offset(self) -> int:
        return 1

    @property
    def profile_offset(self) -> int:
        return 1 + self.n_items

    @property
    def attr_offset(self) -> int:
        return self.profile_offset + self.n_profile_slots * self.n_buckets

    @property
    def scene_offset(self) -> int:
        return self.attr_offset + self.n_attr_slots * self.n_buckets

    @property
    def time_offset(self) -> int:
        return self.scene_offset + self.n_scenes

    @property
    def vocab_size(self) -> int:
        return self.time_offset + self.n_time_buckets

    @property
    def n_side_fields(self) -> int:
        return self.n_profile_slots + self.n_attr_slots + 2

    @classmethod
    def for_world(cls, world: World, n_time_buckets: int) -> "FeatureLayout":
        n_slots = world.user_profile_feats.shape[1]
        return cls(n_items=world.n_items, n_scenes=world.n_scenes,
                   n_time_buckets=max(1, n_time_buckets),
                   n_profile_slots=n_slots, n_attr_slots=n_slots)

    def item_tokens(self, item_ids: np.ndarray) -> np.ndarray:
        """Raw item ids -> vocabulary tokens; padding id -1 maps to 0."""
        ids = np.asarray(item_ids, dtype=np.int64)
        if ids.size and (ids.min() < -1 or ids.max() >= self.n_items):
            raise FeatureOutOfVocabError(
                f"item id outside [0, {self.n_items}) (or -1 for padding)")
        return ids + 1

    def _slot_tokens(self, buckets: np.ndarray, offset: int, n_slots: int) -> np.ndarray:
        b = np.asarray(buckets, dtype=np.int64)
        if b.shape[-1] != n_slots:
            raise FeatureOutOfVocabError(
                f"expected {n_slots} feature slots, got {b.shape[-1]}")
        if b.size and (b.min() < 0 or b.max() >= self.n_buckets):
            raise FeatureOutOfVocabError(
                f"feature bucket outside [0, {self.n_buckets})")
        return offset + np.arange(n_slots) * self.n_buckets + b

    def profile_tokens(self, buckets: np.ndarray) -> np.ndarray:
        return self._slot_tokens(buckets, self.profile_offset, self.n_profile_slots)

    def attr_tokens(self, buckets: np.ndarray) -> np.ndarray:
        return self._slot_tokens(buckets, self.attr_offset, self.n_attr_slots)

    def scene_tokens(self, scene_ids: np.ndarray) -> np.ndarray:
        s = np.asarray(scene_ids, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.n_scenes):
            raise FeatureOutOfVocabError(f"scene id outside [0, {self.n_scenes})")
        return self.scene_offset + s

    def time_tokens(self, timestamps: np.ndarray) -> np.ndarray:
        """Episode timestamps clip into the last bucket rather than going OOV."""
        t = np.asarray(timestamps, dtype=np.int64)
        if t.size and t.min() < 0:
            raise FeatureOutOfVocabError("negative timestamp")
        return self.time_offset + np.minimum(t, self.n_time_buckets - 1)


def assemble_batch(layout: FeatureLayout, world: World,
                   user_ids: np.ndarray, item_ids: np.ndarray,
                   timestamps: np.ndarray, seq_ids: np.ndarray,
                   seq_len: np.ndarray, scene_ids=None) -> dict:
    """Token arrays for one model batch.

    seq_ids holds raw item ids padded with -1; everything comes back in the
    shared vocabulary space, ready for the embedding lookup.
    """
    B = user_ids.shape[0]
    if scene_ids is None:
        scene_ids = np.zeros(B, dtype=np.int64)
    side = np.concatenate([
        layout.profile_tokens(world.user_profile_feats[user_ids]),
        layout.attr_tokens(world.item_attr_feats[item_ids]),
        layout.scene_tokens(scene_ids)[:, None],
        layout.time_tokens(timestamps)[:, None],
    ], axis=1)
    return {
        "tgt_tokens": layout.item_tokens(item_ids),
        "seq_tokens": layout.item_tokens(seq_ids),
        "seq_len": np.asarray(seq_len, dtype=np.int64),
        "side_tokens": side,
    }
