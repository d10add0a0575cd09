"""Command-line entry point.

Subcommands: ``generate`` (synthetic dataset to disk), ``train`` (one
strategy/fusion/budget run: checkpoints + episode logs), ``personalize``
(adapt a trained run to each test subject), ``evaluate`` (the same without
adaptation, i.e. budget 0), ``report`` (aggregate collected rows into CSV and
figure series), and ``grid`` (the full strategy x fusion x budget x seed
sweep). Output directories default to $MMAL_OUT when the flag is omitted.
Errors exit nonzero with a one-line JSON message on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import dataio, datagen, grid as grid_mod
from .config import (
    ExperimentConfig,
    KNOWN_STRATEGIES,
    config_from_dict,
    config_to_dict,
    load_config,
    strategy_mode,
)
from .errors import ConfigurationError, ContractViolationError
from .fusion import ClassifierEnsemble, fusion_view
from .models import load_checkpoint, save_checkpoint
from .personalize import personalize_subject
from .policy import GreedyPolicySelector, make_baseline_selector
from .trainer import TrainConfig, run_baseline, run_mmql, write_episode_logs


def _out_dir(value: str | None, required_for: str) -> str:
    out = value or os.environ.get("MMAL_OUT")
    if not out:
        raise ConfigurationError(
            f"{required_for} needs --out (or the MMAL_OUT environment variable)"
        )
    os.makedirs(out, exist_ok=True)
    return out


def _load_experiment_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    return load_config(path)


def cmd_generate(args) -> int:
    cfg = _load_experiment_config(args.config)
    if args.seed is not None:
        cfg.generator.seed = args.seed
    out = _out_dir(args.out, "generate")
    ds = datagen.generate(cfg.generator)
    dataio.save_dataset(ds, out)
    if args.jsonl:
        dataio.save_dataset_jsonl(ds, args.jsonl)
    n_windows = sum(len(s.windows) for s in ds.all_sessions())
    print(f"wrote {len(ds.train)}+{len(ds.test)} subjects, {n_windows} windows to {out}")
    return 0


def _prepared_view(data_dir: str, fusion: str):
    ds = dataio.load_dataset(data_dir)
    ds, _ = datagen.normalize_dataset(ds)
    return fusion_view(ds, fusion)


def cmd_train(args) -> int:
    cfg = _load_experiment_config(args.config)
    out = _out_dir(args.out, "train")
    mode = strategy_mode(args.strategy)
    train_cfg = dataclasses.replace(
        cfg.train, budget=args.budget, seed=args.seed, mode=mode
    )
    view = _prepared_view(args.data, args.fusion)
    if args.strategy.startswith("mmql"):
        result = run_mmql(view, train_cfg)
    else:
        result = run_baseline(view, train_cfg, args.strategy)
    result.ensemble.save(os.path.join(out, "ensemble"))
    if result.qnetwork is not None:
        save_checkpoint(result.qnetwork, os.path.join(out, "qnetwork.json"))
    write_episode_logs(result.logs, os.path.join(out, "episodes.jsonl"))
    meta = {
        "strategy": args.strategy,
        "fusion": args.fusion,
        "budget": args.budget,
        "seed": args.seed,
        "mode": mode,
        "train": config_to_dict(train_cfg),
    }
    with open(os.path.join(out, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    final = result.logs[-1]
    print(
        f"trained {args.strategy}/{args.fusion} budget={args.budget}: "
        f"{len(result.logs)} episodes, last acquired={final.acquired}"
    )
    return 0


def _load_run(run_dir: str):
    meta_path = os.path.join(run_dir, "run_meta.json")
    if not os.path.exists(meta_path):
        raise ConfigurationError(f"no run_meta.json under {run_dir!r}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    ensemble = ClassifierEnsemble.load(os.path.join(run_dir, "ensemble"))
    q_path = os.path.join(run_dir, "qnetwork.json")
    qnetwork = load_checkpoint(q_path) if os.path.exists(q_path) else None
    return meta, ensemble, qnetwork


def _train_cfg_from_meta(meta: dict) -> TrainConfig:
    from .policy import RewardSpec

    data = dict(meta["train"])
    data["rewards"] = RewardSpec(**data["rewards"])
    return TrainConfig(**data)


def _personalize_run(args, budget: int) -> int:
    out = _out_dir(args.out, "personalize")
    meta, ensemble, qnetwork = _load_run(args.run)
    train_cfg = _train_cfg_from_meta(meta)
    view = _prepared_view(args.data, meta["fusion"])
    mode = meta["mode"]
    strategy = meta["strategy"]
    rows = []
    for session in view.test:
        per_subject = []
        for rep in range(args.repeats):
            p_rng = np.random.default_rng(
                grid_mod.derive_seed(meta["seed"], "perso", session.subject_id, rep)
            )
            if strategy.startswith("mmql"):
                selector = GreedyPolicySelector(qnetwork)
            else:
                selector = make_baseline_selector(
                    strategy, budget, len(session.windows), p_rng
                )
            result, _ = personalize_subject(
                session, ensemble, selector, budget, train_cfg, p_rng, mode
            )
            per_subject.append(result)
        path = os.path.join(out, f"{session.subject_id}.json")
        with open(path, "w") as fh:
            fh.write("[" + ",".join(r.to_json() for r in per_subject) + "]")
        scored = [r for r in per_subject if r.metrics_before is not None]
        if scored:
            rows.append(
                grid_mod.ReportRow(
                    strategy=strategy,
                    fusion=meta["fusion"],
                    budget=budget,
                    seed=meta["seed"],
                    subject=session.subject_id,
                    acc_before=float(np.mean([r.metrics_before.accuracy for r in scored])),
                    acc_after=float(np.mean([r.metrics_after.accuracy for r in scored])),
                    f1_before=float(np.mean([r.metrics_before.macro_f1 for r in scored])),
                    f1_after=float(np.mean([r.metrics_after.macro_f1 for r in scored])),
                    scanned=float(np.mean([r.scanned for r in per_subject])),
                )
            )
    grid_mod.write_rows_jsonl(rows, os.path.join(out, "rows.jsonl"))
    print(f"personalized {len(view.test)} subjects with budget {budget} into {out}")
    return 0


def cmd_personalize(args) -> int:
    return _personalize_run(args, args.budget)


def cmd_evaluate(args) -> int:
    args.repeats = 1  # no querying, no shuffling effects beyond the stream order
    return _personalize_run(args, 0)


def cmd_report(args) -> int:
    out = _out_dir(args.out, "report")
    rows = []
    for root, _, files in os.walk(args.runs):
        for name in files:
            if name == "rows.jsonl":
                rows.extend(grid_mod.read_rows_jsonl(os.path.join(root, name)))
    if not rows:
        raise ConfigurationError(f"no rows.jsonl found under {args.runs!r}")
    grid_mod.write_report(rows, out)
    print(f"report over {len(rows)} rows written to {out}")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_experiment_config(args.config)
    out = _out_dir(args.out, "grid")
    rows, outcomes = grid_mod.run_grid(cfg, workers=args.workers)
    grid_mod.write_report(rows, out, outcomes)
    failed = sum(1 for o in outcomes if o.error)
    print(f"grid done: {len(outcomes)} cells ({failed} failed), {len(rows)} rows in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmal",
        description="Budgeted multi-modal active learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", help="experiment config JSON (generator section used)")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--jsonl", help="also write the JSON-lines debug copy here")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one strategy/fusion/budget run")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--strategy", required=True, choices=KNOWN_STRATEGIES)
    p.add_argument("--fusion", default="model-f")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="experiment config JSON (train section used)")
    p.add_argument("--out", help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("personalize", help="adapt a trained run to each test subject")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="directory written by `train`")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("evaluate", help="score a trained run without adaptation")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate rows.jsonl files into CSV + figures")
    p.add_argument("--runs", required=True, help="directory tree to collect rows from")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("grid", help="run the full experiment grid")
    p.add_argument("--config")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolationError, FileNotFoundError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
