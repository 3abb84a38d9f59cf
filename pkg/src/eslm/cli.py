"""Command-line entry point: staged pipeline plus compare and rank."""

import argparse
import sys
from pathlib import Path

from .config import config_hash, load_config
from .datasets import SampleSet
from .errors import EslmError, StageError
from .experiment import (
    _stage,
    build_data_stage,
    compare_variants,
    evaluate_stage,
    rank_catalog,
    report_stage,
    run_experiment,
    run_paths,
    simulate_stage,
    train_stage,
    write_manifest,
)
from .funnel import EventLog, generate_world


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eslm",
        description="Simulated multi-stage funnel and entire-space purchase "
                    "models: staged pipeline, variant comparison, ranking.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, candidates=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", required=True, help="output root directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed list with one seed")
        if candidates:
            sp.add_argument("--candidates", required=True,
                            help="CSV of user_id,item_id pairs to score")
        return sp

    add("simulate", "generate a world and write its event log")
    add("build-data", "replay the event log into candidate/impression datasets")
    add("train", "train the configured variants and write snapshots")
    add("evaluate", "score snapshots on the held-out episodes")
    add("run", "all pipeline stages in order")
    add("compare", "aggregate sibling runs (all seeds) into one table")
    add("rank", "score candidates with the blended revenue objective",
        candidates=True)
    return p


def _seeds(cfg, args):
    return [args.seed] if args.seed is not None else list(cfg.seeds)


def _require(path: Path, stage: str):
    if not path.exists():
        raise StageError(stage, FileNotFoundError(
            f"{path} is missing; run the earlier stages first"))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.validate()
        if args.command == "run":
            for d in run_experiment(cfg, args.out, seeds=_seeds(cfg, args)):
                print(d)
            return 0
        if args.command == "compare":
            dirs = sorted(Path(args.out).glob(
                f"run_{config_hash(cfg)}_seed*"))
            table = compare_variants(dirs, out_dir=args.out)
            print(Path(args.out) / "comparison.csv")
            if table.sign_test is not None:
                print(f"sign_test={table.sign_test!r}")
            return 0

        for seed in _seeds(cfg, args):
            paths = run_paths(cfg, args.out, seed)
            if args.command == "simulate":
                write_manifest(cfg, seed, paths)
                _stage("simulate", simulate_stage, cfg, seed, paths)
                print(paths.events)
            elif args.command == "build-data":
                _require(paths.events, "build-data")
                world = generate_world(cfg.world, seed)
                log = EventLog.from_csv(paths.events)
                _stage("build-data", build_data_stage, cfg, world, log, paths)
                print(paths.ps)
            elif args.command == "train":
                _require(paths.ps, "train")
                world = generate_world(cfg.world, seed)
                ps = _load_samples(paths.ps, cfg, "ps")
                pv = _load_samples(paths.pv, cfg, "pv")
                _stage("train", train_stage, cfg, world, ps, pv, seed, paths)
                print(paths.train_log)
            elif args.command == "evaluate":
                _require(paths.events, "evaluate")
                _require(paths.snapshots, "evaluate")
                world = generate_world(cfg.world, seed)
                log = EventLog.from_csv(paths.events)
                rows = _stage("evaluate", evaluate_stage, cfg, world, log,
                              seed, paths)
                _stage("report", report_stage, cfg, rows, seed, paths)
                print(paths.metrics)
            else:  # rank
                _require(paths.events, "rank")
                out_path = paths.root / "ranking.csv"
                _stage("rank", rank_catalog, cfg, paths.root,
                       args.candidates, out_path, seed)
                print(out_path)
        return 0
    except EslmError as e:
        msg = str(e) if isinstance(e, StageError) else f"[{args.command}] {e}"
        print(f"error {msg}", file=sys.stderr)
        return 1


def _load_samples(path, cfg, space):
    return SampleSet.from_csv(path, seq_cap=cfg.data.seq_cap, space=space)


if __name__ == "__main__":
    sys.exit(main())
