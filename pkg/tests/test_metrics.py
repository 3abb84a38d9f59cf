"""Ranking metrics, oracle equivalence, ground-truth calibration targets."""

import numpy as np
import pytest

from eslm.datasets import DataConfig, build_ps_dataset
from eslm.errors import (
    ConfigError,
    DatasetContractError,
    EmptyBatchError,
    UndefinedAUCError,
)
from eslm.features import FeatureLayout
from eslm.funnel import EpisodeConfig, WorldConfig, generate_world, run_simulation
from eslm.metrics import (
    EVAL_SPECS,
    MetricsRow,
    auc,
    auc_count,
    calibration_ratio,
    evaluate_spaces,
    label_ground_truth,
    pairwise_auc_count,
    pay_affinity,
    prepare_eval_bundles,
    read_metrics_csv,
    scorer_for,
    ssb_divergence,
    write_metrics_csv,
)
from eslm.model import ModelConfig, init_params
from eslm.training import VARIANTS


def test_auc_worked_case():
    scores = np.array([0.9, 0.8, 0.3])
    labels = np.array([1, 0, 1])
    assert auc_count(scores, labels) == (2, 2, 1)
    assert auc(scores, labels) == 0.5


def test_auc_extremes_and_ties():
    y = np.array([1, 1, 0, 0])
    assert auc(np.array([4.0, 3.0, 2.0, 1.0]), y) == 1.0
    assert auc(np.array([1.0, 2.0, 3.0, 4.0]), y) == 0.0
    assert auc(np.full(4, 0.7), y) == 0.5
    # one tied pair out of four: 2U = 2 + 2 + 2 + 1
    assert auc_count(np.array([3.0, 2.0, 2.0, 1.0]), y) == (7, 2, 2)


def test_auc_label_flip_symmetry():
    rng = np.random.default_rng(0)
    s = rng.normal(size=200)
    y = rng.integers(0, 2, 200)
    assert auc(s, y) + auc(s, 1 - y) == pytest.approx(1.0, abs=1e-12)


def test_auc_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    s = rng.normal(size=300)
    y = (s + rng.normal(size=300) > 0).astype(np.int64)
    base = auc_count(s, y)
    assert auc_count(3.0 * s + 7.0, y) == base
    assert auc_count(1.0 / (1.0 + np.exp(-s)), y) == base


def test_auc_matches_pairwise_oracle_with_heavy_ties():
    rng = np.random.default_rng(2)
    for trial in range(25):
        n = int(rng.integers(2, 400))
        scores = rng.integers(0, 7, n) / 6.0  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        assert auc_count(scores, labels) == pairwise_auc_count(scores, labels)


def test_auc_undefined_on_single_class():
    with pytest.raises(UndefinedAUCError):
        auc(np.array([0.1, 0.2]), np.array([1, 1]))
    with pytest.raises(UndefinedAUCError):
        pairwise_auc_count(np.array([0.1, 0.2]), np.array([0, 0]))
    with pytest.raises(ConfigError):
        auc(np.array([0.1, 0.2]), np.array([1]))


def test_calibration_ratio():
    gt = np.array([0.1, 0.3])
    assert calibration_ratio(gt, gt) == pytest.approx(1.0, abs=1e-12)
    assert calibration_ratio(2 * gt, gt) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(EmptyBatchError):
        calibration_ratio(np.zeros(0), np.zeros(0))
    with pytest.raises(DatasetContractError):
        calibration_ratio(np.array([0.5]), np.array([0.0]))


@pytest.fixture(scope="module")
def sim():
    world = generate_world(WorldConfig(users=80, items=120), seed=10)
    log = run_simulation(world, EpisodeConfig(ps_size=15, impression_size=4),
                         episodes_per_user=80)
    return world, log


def test_ground_truth_matches_empirical_label_rates(sim):
    world, log = sim
    gt = label_ground_truth(world, log)
    for name, emp in (("click", log.click), ("pay_g", log.pay_g),
                      ("pay_a", log.pay_a)):
        g = gt[name]
        se = np.sqrt(np.sum(g * (1 - g))) / len(g)
        z = (emp.mean() - g.mean()) / se
        assert abs(z) < 4.0, f"{name}: z={z:.2f}"
    assert np.all((gt["pay_g"] >= 0) & (gt["pay_g"] <= gt["click"]))
    assert np.all(gt["pay_a"] >= gt["pay_g"])
    # unexposed rows cannot click or pay in their own scene
    off = log.pv == 0
    assert np.all(gt["click"][off] == 0) and np.all(gt["pay_g"][off] == 0)
    assert np.all(gt["pay_a"][off] > 0)  # other scenes still reachable


def test_ssb_divergence_zero_on_identical_populations(sim):
    world, log = sim
    ps = build_ps_dataset(log, world, DataConfig(seq_cap=5))
    assert ssb_divergence(ps, ps, world) == 0.0
    with pytest.raises(EmptyBatchError):
        ssb_divergence(ps.select(np.zeros(len(ps), dtype=bool)), ps, world)


def test_ssb_divergence_sees_exposure_selection(sim):
    world, log = sim
    ps = build_ps_dataset(log, world, DataConfig(seq_cap=5))
    pv = ps.select(log.pv == 1)
    gap = ssb_divergence(pv, ps, world)
    assert gap > 0.02
    # exposed rows are a pay-biased slice of the candidate pool
    assert pay_affinity(world, pv).mean() > pay_affinity(world, ps).mean()


def test_ssb_divergence_shrinks_with_noisier_selection():
    wc = WorldConfig(users=60, items=100)
    world = generate_world(wc, seed=4)
    sharp = run_simulation(world, EpisodeConfig(ps_size=15, impression_size=4,
                                                match_noise=0.5, rank_noise=0.25),
                           episodes_per_user=30)
    fuzzy = run_simulation(world, EpisodeConfig(ps_size=15, impression_size=4,
                                                match_noise=50.0, rank_noise=50.0),
                           episodes_per_user=30)
    dc = DataConfig(seq_cap=5)
    gaps = []
    for log in (sharp, fuzzy):
        ps = build_ps_dataset(log, world, dc)
        gaps.append(ssb_divergence(ps.select(log.pv == 1), ps, world))
    assert gaps[0] > gaps[1]


def test_prepare_eval_bundles_are_aligned(sim):
    world, log = sim
    cfg = DataConfig(seq_cap=5, test_episodes=2)
    bundles = prepare_eval_bundles(log, world, cfg)
    ps, pv = bundles["ps"], bundles["pv"]
    assert ps.samples.space == "ps" and pv.samples.space == "pv"
    t_max = log.timestamp.max()
    assert np.all(ps.samples.timestamp >= t_max - 1)
    assert np.all(pv.samples.timestamp >= t_max - 1)
    assert len(pv.samples) < len(ps.samples)
    for b in (ps, pv):
        for k in ("click", "pay_g", "pay_a"):
            assert b.gt[k].shape == (len(b.samples),)
    # every pv row exists in ps with the same labels
    ps_keys = set(zip(ps.samples.user_id.tolist(), ps.samples.item_id.tolist(),
                      ps.samples.timestamp.tolist()))
    pv_keys = set(zip(pv.samples.user_id.tolist(), pv.samples.item_id.tolist(),
                      pv.samples.timestamp.tolist()))
    assert pv_keys <= ps_keys


def test_scorer_table():
    assert scorer_for("eslm", "pay_a") == "head_a"
    assert scorer_for("eslm", "pay_g") == "eslm_product"
    assert scorer_for("esmm", "pay_g") == "esmm_product"
    assert scorer_for("esmm", "pay_a") == "esmm_product"
    assert scorer_for("baseline", "pay_g") == "esmm_product"
    assert scorer_for("pv2pay_g", "pay_g") == "head_g"
    assert scorer_for("ps2pay_g", "pay_a") == "head_g"
    assert scorer_for("ps2pay_g", "click") == "head_a"


def test_evaluate_spaces_untrained_model(sim):
    world, log = sim
    cfg = DataConfig(seq_cap=5)
    bundles = prepare_eval_bundles(log, world, cfg)
    layout = FeatureLayout.for_world(world, n_time_buckets=8)
    mc = ModelConfig(emb_dim=4, n_heads=1, head_dim=4, hidden1=8, hidden2=4,
                     seq_cap=5, n_side_fields=layout.n_side_fields)
    params = init_params(mc, layout.vocab_size, np.random.default_rng(0))
    before = {k: v.copy() for k, v in params.items()}
    rows = evaluate_spaces("eslm", params, mc, layout, world, bundles, seed=7)
    assert [(r.space, r.label) for r in rows] == list(EVAL_SPECS)
    for r in rows:
        # constant scores: every pair tied, so AUC is exactly one half
        assert r.auc == 0.5
        assert r.seed == 7
        b = bundles[r.space]
        assert r.total == len(b.samples)
        assert r.positives == int(getattr(b.samples, r.label).sum())
        expected_p = 0.5 if r.scorer == "head_a" else 0.25
        assert r.calibration == pytest.approx(
            expected_p / b.gt[r.label].mean(), rel=1e-12)
    for k in params:
        assert np.array_equal(params[k], before[k])
    with pytest.raises(ConfigError):
        evaluate_spaces("eslm", params, mc, layout, world,
                        {"ps": bundles["ps"]}, seed=7)


def test_evaluate_spaces_scorers_per_variant(sim):
    world, log = sim
    cfg = DataConfig(seq_cap=5)
    bundles = prepare_eval_bundles(log, world, cfg)
    layout = FeatureLayout.for_world(world, n_time_buckets=8)
    mc = ModelConfig(emb_dim=4, n_heads=1, head_dim=4, hidden1=8, hidden2=4,
                     seq_cap=5, n_side_fields=layout.n_side_fields)
    params = init_params(mc, layout.vocab_size, np.random.default_rng(0))
    for variant in VARIANTS:
        rows = evaluate_spaces(variant, params, mc, layout, world, bundles,
                               seed=0)
        assert [r.scorer for r in rows] == [
            scorer_for(variant, label) for _, label in EVAL_SPECS]


def test_metrics_csv_round_trip(tmp_path):
    rows = [MetricsRow("eslm", "ps", "pay_g", "eslm_product",
                       0.7310585786300049, 123, 4567, 1.0625, 3),
            MetricsRow("esmm", "pv", "pay_g", "esmm_product",
                       0.5, 7, 100, 0.3333333333333333, 3)]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    assert read_metrics_csv(path) == rows
    path2 = tmp_path / "bad.csv"
    path2.write_text("variant,auc\neslm,0.5\n")
    with pytest.raises(ConfigError):
        read_metrics_csv(path2)
