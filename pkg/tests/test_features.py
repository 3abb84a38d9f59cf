"""Vocabulary layout: offsets, token math, out-of-vocab handling."""

import numpy as np
import pytest

from eslm.errors import FeatureOutOfVocabError
from eslm.features import PAD_TOKEN, FeatureLayout, assemble_batch
from conftest import make_world

LAYOUT = FeatureLayout(n_items=10, n_scenes=3, n_time_buckets=4)


def test_offsets_tile_the_vocabulary():
    # 1 pad + 10 items + 2*8 profile + 2*8 attr + 3 scenes + 4 time buckets
    assert PAD_TOKEN == 0
    assert LAYOUT.item_offset == 1
    assert LAYOUT.profile_offset == 11
    assert LAYOUT.attr_offset == 27
    assert LAYOUT.scene_offset == 43
    assert LAYOUT.time_offset == 46
    assert LAYOUT.vocab_size == 50
    assert LAYOUT.n_side_fields == 6


def test_item_tokens_shift_and_pad():
    toks = LAYOUT.item_tokens(np.array([0, 9, -1]))
    assert list(toks) == [1, 10, PAD_TOKEN]
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.item_tokens(np.array([10]))
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.item_tokens(np.array([-2]))


def test_slot_tokens_are_disjoint_per_slot():
    prof = LAYOUT.profile_tokens(np.array([[0, 7], [3, 3]]))
    assert prof.tolist() == [[11, 26], [14, 22]]
    attr = LAYOUT.attr_tokens(np.array([[3, 0]]))
    assert attr.tolist() == [[30, 35]]
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.profile_tokens(np.array([[0, 8]]))
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.profile_tokens(np.array([[0, 1, 2]]))


def test_scene_and_time_tokens():
    assert LAYOUT.scene_tokens(np.array([0, 2])).tolist() == [43, 45]
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.scene_tokens(np.array([3]))
    # timestamps beyond the bucket range clip into the last bucket
    assert LAYOUT.time_tokens(np.array([0, 3, 99])).tolist() == [46, 49, 49]
    with pytest.raises(FeatureOutOfVocabError):
        LAYOUT.time_tokens(np.array([-1]))


def test_field_ranges_never_overlap():
    layout = FeatureLayout(n_items=7, n_scenes=2, n_time_buckets=3,
                           n_profile_slots=1, n_attr_slots=1)
    seen = set()
    for tok in [layout.item_tokens(np.arange(7)),
                layout.profile_tokens(np.arange(8)[:, None]).ravel(),
                layout.attr_tokens(np.arange(8)[:, None]).ravel(),
                layout.scene_tokens(np.arange(2)),
                layout.time_tokens(np.arange(3))]:
        for t in np.asarray(tok).ravel():
            assert int(t) not in seen
            assert 1 <= int(t) < layout.vocab_size
            seen.add(int(t))
    assert len(seen) == layout.vocab_size - 1


def test_assemble_batch_tokens():
    world = make_world(users=2, items=10, warm=[[7, 3], [1, 2]])
    layout = FeatureLayout.for_world(world, n_time_buckets=4)
    seq_ids = np.array([[7, 3, -1], [1, -1, -1]])
    batch = assemble_batch(layout, world,
                           user_ids=np.array([0, 1]),
                           item_ids=np.array([5, 0]),
                           timestamps=np.array([0, 9]),
                           seq_ids=seq_ids,
                           seq_len=np.array([2, 1]))
    assert batch["tgt_tokens"].tolist() == [6, 1]
    assert batch["seq_tokens"].tolist() == [[8, 4, 0], [2, 0, 0]]
    assert batch["seq_len"].tolist() == [2, 1]
    B, F = batch["side_tokens"].shape
    assert (B, F) == (2, layout.n_side_fields)
    assert batch["side_tokens"][0, -2] == layout.scene_offset  # scene 0
    assert batch["side_tokens"][0, -1] == layout.time_offset
    assert batch["side_tokens"][1, -1] == layout.time_offset + 3  # clipped
