"""Space-aware evaluation: tied-rank AUC, calibration, selection-bias gauges.

AUC uses the rank-sum formulation with 0.5 credit for ties, carried as an
integer numerator (2U) so the O(n log n) implementation can be compared
bitwise against the O(n^2) pairwise oracle. Calibration and the SSB
divergence lean on the simulator's closed-form probabilities, which real
logs never offer.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import DataConfig, SampleSet, build_ps_dataset
from .errors import (
    ConfigError,
    DatasetContractError,
    EmptyBatchError,
    UndefinedAUCError,
)
from .features import FeatureLayout, assemble_batch
from .funnel import EventLog, World, ground_truth_probs_pairs
from .model import HEADS, ModelConfig, forward

METRIC_COLUMNS = ("variant", "space", "label", "scorer", "auc", "positives",
                  "total", "calibration", "seed")

# the three report rows every variant produces, in emission order
EVAL_SPECS = (("pv", "pay_g"), ("ps", "pay_g"), ("ps", "pay_a"))


def auc_count(scores: np.ndarray, labels: np.ndarray):
    """Integer Mann-Whitney numerator: returns (2U, positives, negatives).

    2U counts 2 per correctly ordered positive-negative pair and 1 per tie,
    so AUC = 2U / (2 * P * N) without intermediate rounding.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError("scores and labels must be equal-length vectors")
    pos_total = int(np.sum(labels == 1))
    neg_total = int(labels.shape[0] - pos_total)
    if pos_total == 0 or neg_total == 0:
        raise UndefinedAUCError(
            f"AUC undefined: {pos_total} positives, {neg_total} negatives")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [s.shape[0]]])
    two_u = 0
    neg_below = 0
    for a, b in zip(starts, ends):
        group_pos = int(np.sum(y[a:b] == 1))
        group_neg = int(b - a) - group_pos
        two_u += group_pos * (2 * neg_below + group_neg)
        neg_below += group_neg
    return two_u, pos_total, neg_total


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(random positive outranks random negative), ties worth 0.5."""
    two_u, p, n = auc_count(scores, labels)
    return two_u / (2.0 * p * n)


def pairwise_auc_count(scores: np.ndarray, labels: np.ndarray):
    """O(n^2) oracle for auc_count; same integer contract."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUCError(
            f"AUC undefined: {pos.size} positives, {neg.size} negatives")
    wins = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return 2 * wins + ties, int(pos.size), int(neg.size)


def calibration_ratio(predicted: np.ndarray, target_probs: np.ndarray) -> float:
    """Mean predicted probability over mean ground-truth probability."""
    if predicted.shape[0] == 0:
        raise EmptyBatchError("calibration_ratio on an empty dataset")
    denom = float(np.mean(target_probs))
    if denom <= 0.0:
        raise DatasetContractError("ground-truth probability mean is zero")
    return float(np.mean(predicted)) / denom


def label_ground_truth(world: World, log: EventLog) -> dict:
    """Closed-form per-row probabilities of each label coming up 1.

    Conditions on the realized exposure flag (pv) but on nothing sampled
    after it, so empirical label means converge to these values.
    """
    scale = world.ground_truth.own_scene_pay_scale
    pv = log.pv.astype(np.float64)
    p_click = ground_truth_probs_pairs(world, log.user_id, log.item_id, "click")
    p_pay0 = ground_truth_probs_pairs(world, log.user_id, log.item_id, "pay")
    no_other = np.ones(len(log))
    for s in range(1, world.n_scenes):
        no_other *= 1.0 - ground_truth_probs_pairs(
            world, log.user_id, log.item_id, "pay", s)
    g_click = pv * p_click
    g_pay_g = pv * p_click * scale * p_pay0
    g_pay_a = 1.0 - no_other * (1.0 - g_pay_g)
    return {"click": g_click, "pay_g": g_pay_g, "pay_a": g_pay_a}


def pay_affinity(world: World, samples: SampleSet) -> np.ndarray:
    """Unconditional own-scene purchase affinity of each sample row."""
    return ground_truth_probs_pairs(world, samples.user_id, samples.item_id, "pay")


def ssb_divergence(train_samples: SampleSet, infer_samples: SampleSet,
                   world: World) -> float:
    """How far the training population sits from the inference population.

    Mean absolute gap in ground-truth pay affinity plus total-variation
    distance between decile histograms over pooled affinity bins.
    """
    if len(train_samples) == 0 or len(infer_samples) == 0:
        raise EmptyBatchError("ssb_divergence needs nonempty datasets")
    a = pay_affinity(world, train_samples)
    b = pay_affinity(world, infer_samples)
    edges = np.quantile(np.concatenate([a, b]), np.linspace(0.1, 0.9, 9))
    hist_a = np.bincount(np.searchsorted(edges, a), minlength=10) / a.shape[0]
    hist_b = np.bincount(np.searchsorted(edges, b), minlength=10) / b.shape[0]
    return float(abs(a.mean() - b.mean()) + 0.5 * np.abs(hist_a - hist_b).sum())


@dataclass
class EvalBundle:
    """Test-split samples of one space plus their oracle label probabilities."""

    samples: SampleSet
    gt: dict


def prepare_eval_bundles(log: EventLog, world: World, cfg: DataConfig) -> dict:
    """Aligned ps/pv test bundles built from one replay of the log."""
    ps_all = build_ps_dataset(log, world, cfg)
    gt_all = label_ground_truth(world, log)
    test = ps_all.split == 1
    ps = ps_all.select(test)
    pv_mask = test & (log.pv == 1)
    pv = ps_all.select(pv_mask)
    pv.space = "pv"
    return {
        "ps": EvalBundle(ps, {k: v[test] for k, v in gt_all.items()}),
        "pv": EvalBundle(pv, {k: v[pv_mask] for k, v in gt_all.items()}),
    }


def score_samples(params: dict, cfg: ModelConfig, layout: FeatureLayout,
                  world: World, samples: SampleSet, chunk: int = 4096):
    """Both head probabilities for every sample, batched; read-only."""
    n = len(samples)
    p_a = np.zeros(n)
    p_g = np.zeros(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        batch = assemble_batch(layout, world,
                               samples.user_id[lo:hi], samples.item_id[lo:hi],
                               samples.timestamp[lo:hi],
                               samples.seq_ids[lo:hi], samples.seq_len[lo:hi])
        trace = forward(params, cfg, batch, heads=HEADS)
        p_a[lo:hi] = trace.prob("a")
        p_g[lo:hi] = trace.prob("g")
    return p_a, p_g


def scorer_for(variant: str, label: str) -> str:
    """Which probability a variant reports for a given target label."""
    if label == "click":
        return "head_a"
    if variant == "eslm":
        return "head_a" if label == "pay_a" else "eslm_product"
    if variant in ("esmm", "baseline"):
        return "esmm_product"
    return "head_g"


def _scores(scorer: str, p_a: np.ndarray, p_g: np.ndarray) -> np.ndarray:
    if scorer == "head_a":
        return p_a
    if scorer == "head_g":
        return p_g
    if scorer in ("eslm_product", "esmm_product"):
        return p_a * p_g
    raise ConfigError(f"unknown scorer {scorer!r}")


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    space: str
    label: str
    scorer: str
    auc: float
    positives: int
    total: int
    calibration: float
    seed: int


def evaluate_spaces(variant: str, params: dict, cfg: ModelConfig,
                    layout: FeatureLayout, world: World, bundles: dict,
                    seed: int) -> list:
    """The three report rows: AUC(PvToPay_g), AUC(PSToPay_g), AUC(PSToPay_a)."""
    rows = []
    per_space = {name: score_samples(params, cfg, layout, world, b.samples)
                 for name, b in bundles.items()}
    for space, label in EVAL_SPECS:
        if space not in bundles:
            raise ConfigError(f"no evaluation dataset for space {space!r}")
        bundle = bundles[space]
        p_a, p_g = per_space[space]
        scorer = scorer_for(variant, label)
        scores = _scores(scorer, p_a, p_g)
        y = getattr(bundle.samples, label)
        rows.append(MetricsRow(
            variant=variant, space=space, label=label, scorer=scorer,
            auc=auc(scores, y), positives=int(y.sum()), total=int(y.shape[0]),
            calibration=calibration_ratio(scores, bundle.gt[label]),
            seed=seed))
    return rows


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r.variant},{r.space},{r.label},{r.scorer},{r.auc!r},"
                    f"{r.positives},{r.total},{r.calibration!r},{r.seed}\n")


def read_metrics_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != ",".join(METRIC_COLUMNS):
            raise ConfigError(f"unexpected metrics header in {path}: {header!r}")
        rows = []
        for line in f:
            if not line.strip():
                continue
            v = line.rstrip("\n").split(",")
            rows.append(MetricsRow(
                variant=v[0], space=v[1], label=v[2], scorer=v[3],
                auc=float(v[4]), positives=int(v[5]), total=int(v[6]),
                calibration=float(v[7]), seed=int(v[8])))
    return rows
