"""Run pipeline: simulate -> build-data -> train -> evaluate -> report.

Every artifact of one (config, seed) run lands in a directory named by the
config hash and the seed, so reruns land on the same files and sibling
seeds of one experiment sit next to each other.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels
from .config import (
    ExperimentConfig,
    config_hash,
    config_to_dict,
    provenance,
)
from .datasets import (
    SampleSet,
    build_ps_dataset,
    build_pv_dataset,
    final_sequences,
    negative_sample,
)
from .errors import (
    ComparabilityError,
    ConfigError,
    SnapshotError,
    StageError,
    UnknownIdError,
)
from .features import FeatureLayout, assemble_batch
from .funnel import EventLog, World, generate_world, run_simulation
from .losses import gmv_score
from .metrics import (
    EVAL_SPECS,
    evaluate_spaces,
    pay_affinity,
    prepare_eval_bundles,
    read_metrics_csv,
    scorer_for,
    ssb_divergence,
    write_metrics_csv,
)
from .model import ModelConfig, forward, load_snapshot, save_snapshot
from .training import TrainConfig, train_variant, write_train_log

_STREAM_NEGATIVE = 6

STAGES = ("simulate", "build-data", "train", "evaluate", "report")

TABLE_COLUMNS = ("variant", "auc_pv_pay_g", "auc_ps_pay_g", "auc_ps_pay_a",
                 "cal_pv_pay_g", "cal_ps_pay_g", "cal_ps_pay_a", "seed")
COMPARISON_COLUMNS = ("stat", "variant", "seed", "auc_pv_pay_g",
                      "auc_ps_pay_g", "auc_ps_pay_a", "cal_pv_pay_g",
                      "cal_ps_pay_g", "cal_ps_pay_a",
                      "sign_test_eslm_gt_ps2pay_g")
SSB_COLUMNS = ("train_space", "infer_space", "divergence",
               "train_mean_pay_affinity", "infer_mean_pay_affinity", "seed")
RANKING_COLUMNS = ("user_id", "item_id", "gmv", "p_pv_term", "alpha_ps_term",
                   "price")


class RunPaths:
    """Filesystem layout of one run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = self.root / "manifest.json"
        self.events = self.root / "events.csv"
        self.ps = self.root / "ps.csv"
        self.pv = self.root / "pv.csv"
        self.snapshots = self.root / "snapshots"
        self.train_log = self.root / "train_log.csv"
        self.metrics = self.root / "metrics.csv"
        self.ssb = self.root / "ssb.csv"
        self.tables = self.root / "tables"

    def snapshot(self, variant: str) -> Path:
        return self.snapshots / f"{variant}.npz"


def run_dir_name(cfg: ExperimentConfig, seed: int) -> str:
    return f"run_{config_hash(cfg)}_seed{seed}"


def run_paths(cfg: ExperimentConfig, out_root, seed: int) -> RunPaths:
    return RunPaths(Path(out_root) / run_dir_name(cfg, seed))


def model_config(cfg: ExperimentConfig, layout: FeatureLayout) -> ModelConfig:
    m = cfg.model
    return ModelConfig(emb_dim=m.emb_dim, n_heads=m.n_heads,
                       head_dim=m.head_dim, hidden1=m.hidden1,
                       hidden2=m.hidden2, seq_cap=cfg.data.seq_cap,
                       n_side_fields=layout.n_side_fields)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as e:  # tag the failing stage, keep partial artifacts
        raise StageError(name, e) from e


def write_manifest(cfg: ExperimentConfig, seed: int, paths: RunPaths) -> None:
    doc = {
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "package_version": __version__,
        "backend": kernels.backend_name,
        "provenance": provenance(cfg),
    }
    paths.root.mkdir(parents=True, exist_ok=True)
    with open(paths.manifest, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ComparabilityError(f"run {run_dir} has no readable manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise ComparabilityError(f"run {run_dir} manifest is not JSON: {e}") from e


def simulate_stage(cfg: ExperimentConfig, seed: int, paths: RunPaths):
    world = generate_world(cfg.world, seed)
    log = run_simulation(world, cfg.funnel.episode_config(),
                         cfg.funnel.episodes_per_user, out_path=paths.events)
    return world, log


def build_data_stage(cfg: ExperimentConfig, world: World, log: EventLog,
                     paths: RunPaths):
    dc = cfg.data.data_config()
    ps = build_ps_dataset(log, world, dc)
    pv = build_pv_dataset(log, world, dc)
    ps.to_csv(paths.ps)
    pv.to_csv(paths.pv)
    return ps, pv


def train_stage(cfg: ExperimentConfig, world: World, ps: SampleSet,
                pv: SampleSet, seed: int, paths: RunPaths):
    layout = FeatureLayout.for_world(world, cfg.data.n_time_buckets)
    mc = model_config(cfg, layout)
    rng = np.random.default_rng([seed, _STREAM_NEGATIVE])
    ps_train = negative_sample(ps.split_view("train"), "pay_a",
                               cfg.data.train_negative_keep, rng)
    pv_train = pv.split_view("train")
    paths.snapshots.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(steps=cfg.train.steps, batch_size=cfg.train.batch_size,
                     dp_weight=cfg.loss.dp_weight)
    all_rows = []
    for variant in cfg.train.variants:
        params, state, rows = train_variant(variant, world, layout, ps_train,
                                            pv_train, mc, cfg.optim, tc, seed)
        save_snapshot(paths.snapshot(variant), params, state,
                      {"variant": variant, "seed": seed,
                       "config_hash": config_hash(cfg),
                       "steps": cfg.train.steps})
        all_rows.extend(rows)
    write_train_log(paths.train_log, all_rows)


def evaluate_stage(cfg: ExperimentConfig, world: World, log: EventLog,
                   seed: int, paths: RunPaths):
    dc = cfg.data.data_config()
    layout = FeatureLayout.for_world(world, cfg.data.n_time_buckets)
    mc = model_config(cfg, layout)
    bundles = prepare_eval_bundles(log, world, dc)
    rows = []
    for variant in cfg.train.variants:
        params, _, meta = load_snapshot(paths.snapshot(variant))
        if meta.get("config_hash") != config_hash(cfg):
            raise SnapshotError(
                f"snapshot {paths.snapshot(variant)} was trained under config "
                f"{meta.get('config_hash')}, not {config_hash(cfg)}")
        rows.extend(evaluate_spaces(variant, params, mc, layout, world,
                                    bundles, seed))
    write_metrics_csv(paths.metrics, rows)

    ps_all = build_ps_dataset(log, world, dc)
    train_mask = ps_all.split == 0
    ps_train = ps_all.select(train_mask)
    pv_train = ps_all.select(train_mask & (log.pv == 1))
    div = ssb_divergence(pv_train, ps_train, world)
    mean_pv = float(pay_affinity(world, pv_train).mean())
    mean_ps = float(pay_affinity(world, ps_train).mean())
    with open(paths.ssb, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(SSB_COLUMNS) + "\n")
        f.write(f"pv,ps,{div!r},{mean_pv!r},{mean_ps!r},{seed}\n")
    return rows


def report_stage(cfg: ExperimentConfig, rows, seed: int, paths: RunPaths):
    paths.tables.mkdir(parents=True, exist_ok=True)
    table = _pivot_rows(rows, seed)
    _write_table_csv(paths.tables / "variants.csv", TABLE_COLUMNS, table)
    text = render_aligned(TABLE_COLUMNS, table)
    with open(paths.tables / "variants.txt", "w", encoding="utf-8",
              newline="\n") as f:
        f.write(text)


def _pivot_rows(rows, seed: int):
    """metrics rows -> one table row per variant, columns per (space, label)."""
    by_variant = {}
    for r in rows:
        by_variant.setdefault(r.variant, {})[(r.space, r.label)] = r
    out = []
    for variant, cells in by_variant.items():
        row = [variant]
        for space, label in EVAL_SPECS:
            row.append(repr(cells[(space, label)].auc))
        for space, label in EVAL_SPECS:
            row.append(repr(cells[(space, label)].calibration))
        row.append(str(seed))
        out.append(row)
    return out


def _write_table_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def render_aligned(columns, rows) -> str:
    """Monospace table: left-aligned text, right-aligned numbers."""
    cells = [list(columns)] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(columns))]
    lines = []
    for i, row in enumerate(cells):
        parts = []
        for j, c in enumerate(row):
            parts.append(c.ljust(widths[j]) if j == 0 else c.rjust(widths[j]))
        lines.append("  ".join(parts).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out_root, seeds=None) -> list:
    """Full pipeline for every seed; returns the run directories."""
    cfg.validate()
    dirs = []
    for seed in (seeds if seeds is not None else cfg.seeds):
        paths = run_paths(cfg, out_root, seed)
        write_manifest(cfg, seed, paths)
        world, log = _stage("simulate", simulate_stage, cfg, seed, paths)
        ps, pv = _stage("build-data", build_data_stage, cfg, world, log, paths)
        _stage("train", train_stage, cfg, world, ps, pv, seed, paths)
        rows = _stage("evaluate", evaluate_stage, cfg, world, log, seed, paths)
        _stage("report", report_stage, cfg, rows, seed, paths)
        dirs.append(paths.root)
    return dirs


@dataclass
class ComparisonTable:
    """Per-seed metric rows plus across-seed aggregates for each variant."""

    variants: tuple
    seeds: tuple
    per_seed: dict            # (variant, seed) -> {column: float}
    mean: dict                # variant -> {column: float}
    std: dict                 # variant -> {column: float}
    sign_test: Optional[float]  # fraction of seeds eslm beats ps2pay_g


_METRIC_KEYS = ("auc_pv_pay_g", "auc_ps_pay_g", "auc_ps_pay_a",
                "cal_pv_pay_g", "cal_ps_pay_g", "cal_ps_pay_a")


def _metrics_to_cells(rows) -> dict:
    out = {}
    for r in rows:
        cells = out.setdefault(r.variant, {})
        cells[f"auc_{r.space}_{r.label}"] = r.auc
        cells[f"cal_{r.space}_{r.label}"] = r.calibration
    return out


def compare_variants(run_dirs, out_dir=None) -> ComparisonTable:
    """Align sibling runs of one experiment into a comparison table."""
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ComparabilityError("compare needs at least two run directories")
    hashes = set()
    loaded = []  # (seed, {variant: {column: value}})
    for d in run_dirs:
        manifest = read_manifest(d)
        hashes.add(manifest["config_hash"])
        if len(hashes) > 1:
            raise ComparabilityError(
                f"run {d} has config hash {manifest['config_hash']}, "
                f"which differs from {sorted(hashes - {manifest['config_hash']})[0]}; "
                "only sibling runs of one experiment are comparable")
        metrics_path = d / "metrics.csv"
        if not metrics_path.exists():
            raise ComparabilityError(f"run {d} has no metrics.csv")
        loaded.append((manifest["seed"], _metrics_to_cells(
            read_metrics_csv(metrics_path))))

    variants = []
    for _, cells in loaded:
        for v in cells:
            if v not in variants:
                variants.append(v)
    seeds = tuple(seed for seed, _ in loaded)
    per_seed = {(v, seed): cells[v]
                for seed, cells in loaded for v in cells}
    mean, std = {}, {}
    for v in variants:
        rows = [cells[v] for _, cells in loaded if v in cells]
        mean[v] = {k: float(np.mean([r[k] for r in rows])) for k in _METRIC_KEYS}
        std[v] = {k: (float(np.std([r[k] for r in rows], ddof=1))
                      if len(rows) > 1 else 0.0) for k in _METRIC_KEYS}

    sign_test = None
    if "eslm" in variants and "ps2pay_g" in variants:
        wins, n = 0, 0
        for _, cells in loaded:
            if "eslm" in cells and "ps2pay_g" in cells:
                n += 1
                if cells["eslm"]["auc_ps_pay_g"] > cells["ps2pay_g"]["auc_ps_pay_g"]:
                    wins += 1
        sign_test = wins / n if n else None

    table = ComparisonTable(variants=tuple(variants), seeds=seeds,
                            per_seed=per_seed, mean=mean, std=std,
                            sign_test=sign_test)
    if out_dir is not None:
        write_comparison(table, out_dir)
    return table


def write_comparison(table: ComparisonTable, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in table.variants:
        for seed in table.seeds:
            if (v, seed) not in table.per_seed:
                continue
            cells = table.per_seed[(v, seed)]
            rows.append(["seed", v, str(seed)]
                        + [repr(cells[k]) for k in _METRIC_KEYS] + [""])
    for v in table.variants:
        sign = ""
        if v == "eslm" and table.sign_test is not None:
            sign = repr(table.sign_test)
        rows.append(["mean", v, ""]
                    + [repr(table.mean[v][k]) for k in _METRIC_KEYS] + [sign])
        rows.append(["std", v, ""]
                    + [repr(table.std[v][k]) for k in _METRIC_KEYS] + [""])
    _write_table_csv(out / "comparison.csv", COMPARISON_COLUMNS, rows)

    text_rows = []
    for v in table.variants:
        text_rows.append(
            [v] + [f"{table.mean[v][k]:.4f}±{table.std[v][k]:.4f}"
                   for k in _METRIC_KEYS])
    text = render_aligned(("variant",) + _METRIC_KEYS, text_rows)
    if table.sign_test is not None:
        n = len(table.seeds)
        text += (f"\nsign test: eslm beats ps2pay_g on auc_ps_pay_g in "
                 f"{round(table.sign_test * n)}/{n} seeds "
                 f"({table.sign_test:.2f})\n")
    with open(out / "comparison.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write(text)

    plot_rows = []
    for v in table.variants:
        for space, label in EVAL_SPECS:
            k = f"auc_{space}_{label}"
            plot_rows.append([v, space, label, repr(table.mean[v][k]),
                              repr(table.std[v][k])])
    _write_table_csv(out / "plot_data.csv",
                     ("variant", "space", "label", "auc_mean", "auc_std"),
                     plot_rows)


def read_candidates(path):
    """CSV of user_id,item_id pairs to score."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "user_id,item_id":
            raise ConfigError(
                f"candidate file {path} must start with 'user_id,item_id', "
                f"got {header!r}")
        body = f.read()
    if not body.strip():
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    data = np.loadtxt(body.strip().splitlines(), dtype=np.int64,
                      delimiter=",", ndmin=2)
    return data[:, 0], data[:, 1]


def _snapshot_scores(variant: str, params: dict, mc: ModelConfig,
                     layout: FeatureLayout, batch: dict) -> np.ndarray:
    trace = forward(params, mc, batch)
    scorer = scorer_for(variant, "pay_g")
    if scorer == "head_g":
        return trace.prob("g")
    if scorer == "head_a":
        return trace.prob("a")
    return trace.prob("a") * trace.prob("g")


def rank_catalog(cfg: ExperimentConfig, run_dir, candidates_path,
                 out_path, seed: int) -> list:
    """Score candidates with the blended revenue objective and sort.

    Descending score, ties broken by ascending item id; returns the rows
    written to out_path.
    """
    paths = RunPaths(run_dir)
    world = generate_world(cfg.world, seed)
    log = EventLog.from_csv(paths.events)
    layout = FeatureLayout.for_world(world, cfg.data.n_time_buckets)
    mc = model_config(cfg, layout)

    users, items = read_candidates(candidates_path)
    if users.size and (users.min() < 0 or users.max() >= world.n_users):
        raise UnknownIdError(f"candidate user ids must lie in [0, {world.n_users})")
    if items.size and (items.min() < 0 or items.max() >= world.n_items):
        raise UnknownIdError(f"candidate item ids must lie in [0, {world.n_items})")

    params = {}
    for role in ("pv_variant", "ps_variant"):
        variant = getattr(cfg.rank, role)
        p, _, meta = load_snapshot(paths.snapshot(variant))
        if p["emb"].shape[0] != layout.vocab_size:
            raise SnapshotError(
                f"snapshot {paths.snapshot(variant)} has vocabulary "
                f"{p['emb'].shape[0]}, expected {layout.vocab_size}")
        params[role] = (variant, p)

    rows = []
    if users.size:
        seq_ids, seq_len = final_sequences(log, world, cfg.data.seq_cap)
        now = np.full(users.shape, cfg.funnel.episodes_per_user, dtype=np.int64)
        batch = assemble_batch(layout, world, users, items, now,
                               seq_ids[users], seq_len[users])
        p_pv = _snapshot_scores(params["pv_variant"][0], params["pv_variant"][1],
                                mc, layout, batch)
        p_ps = _snapshot_scores(params["ps_variant"][0], params["ps_variant"][1],
                                mc, layout, batch)
        price = world.prices[items]
        gmv = gmv_score(p_pv, p_ps, cfg.loss.alpha, cfg.rank.traffic, price)
        order = np.lexsort((items, -gmv, users))
        for i in order:
            rows.append([str(int(users[i])), str(int(items[i])),
                         repr(float(gmv[i])), repr(float(p_pv[i])),
                         repr(float(cfg.loss.alpha * p_ps[i])),
                         repr(float(price[i]))])
    _write_table_csv(out_path, RANKING_COLUMNS, rows)
    return rows
