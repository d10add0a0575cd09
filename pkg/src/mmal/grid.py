"""Grid execution over strategy x fusion x budget x repeat, with seeded,
order-independent cells and CSV/JSON reporting.

Each cell regenerates its dataset from a seed derived from (master seed,
repeat), so every strategy and budget within a repeat sees the same data
(paired comparisons), and any cell can be recomputed in isolation. Cell
failures are recorded, not fatal; only a fully failed grid raises.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, strategy_mode
from .datagen import generate, normalize_dataset
from .errors import ConfigurationError
from .fusion import fusion_view
from .personalize import personalize_subject
from .policy import GreedyPolicySelector, make_baseline_selector
from .trainer import run_baseline, run_mmql


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labeled parts (order matters)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(slots=True)
class ReportRow:
    strategy: str
    fusion: str
    budget: int
    seed: int
    subject: str
    acc_before: float
    acc_after: float
    f1_before: float
    f1_after: float
    scanned: float

    def sort_key(self):
        return (self.strategy, self.fusion, self.budget, self.seed, self.subject)


@dataclass
class CellOutcome:
    strategy: str
    fusion: str
    budget: int
    repeat: int
    seed: int
    rows: list[ReportRow]
    mean_train_scanned: float | None
    train_filled_episodes: int
    error: str | None = None

    def sort_key(self):
        return (self.strategy, self.fusion, self.budget, self.repeat)


def run_cell(
    cfg: ExperimentConfig, strategy: str, fusion: str, budget: int, repeat: int
) -> CellOutcome:
    seed = derive_seed(cfg.master_seed, strategy, fusion, budget, repeat)
    data_seed = derive_seed(cfg.master_seed, "data", repeat)
    gen_cfg = dataclasses.replace(cfg.generator, seed=data_seed)
    ds, _ = normalize_dataset(generate(gen_cfg))
    view = fusion_view(ds, fusion)
    mode = strategy_mode(strategy)
    train_cfg = dataclasses.replace(cfg.train, budget=budget, seed=seed, mode=mode)

    if strategy.startswith("mmql"):
        result = run_mmql(view, train_cfg)
    else:
        result = run_baseline(view, train_cfg, strategy)

    rows = []
    for session in view.test:
        accs_b, accs_a, f1s_b, f1s_a, scans = [], [], [], [], []
        for rep in range(cfg.personalization_repeats):
            p_rng = np.random.default_rng(
                derive_seed(seed, "perso", session.subject_id, rep)
            )
            if strategy.startswith("mmql"):
                selector = GreedyPolicySelector(result.qnetwork)
            else:
                selector = make_baseline_selector(
                    strategy, budget, len(session.windows), p_rng
                )
            res, _ = personalize_subject(
                session, result.ensemble, selector, budget, train_cfg, p_rng, mode
            )
            scans.append(res.scanned)
            if res.metrics_before is not None:
                accs_b.append(res.metrics_before.accuracy)
                f1s_b.append(res.metrics_before.macro_f1)
                accs_a.append(res.metrics_after.accuracy)
                f1s_a.append(res.metrics_after.macro_f1)
        if not accs_b:
            continue  # every repetition queried the whole session away
        rows.append(
            ReportRow(
                strategy=strategy,
                fusion=fusion,
                budget=budget,
                seed=repeat,
                subject=session.subject_id,
                acc_before=float(np.mean(accs_b)),
                acc_after=float(np.mean(accs_a)),
                f1_before=float(np.mean(f1s_b)),
                f1_after=float(np.mean(f1s_a)),
                scanned=float(np.mean(scans)),
            )
        )
    filled = [log.scanned for log in result.logs if log.budget_filled]
    return CellOutcome(
        strategy=strategy,
        fusion=fusion,
        budget=budget,
        repeat=repeat,
        seed=seed,
        rows=rows,
        mean_train_scanned=float(np.mean(filled)) if filled else None,
        train_filled_episodes=len(filled),
    )


def _cell_worker(args) -> CellOutcome:
    cfg, strategy, fusion, budget, repeat = args
    try:
        return run_cell(cfg, strategy, fusion, budget, repeat)
    except Exception:
        return CellOutcome(
            strategy=strategy,
            fusion=fusion,
            budget=budget,
            repeat=repeat,
            seed=derive_seed(cfg.master_seed, strategy, fusion, budget, repeat),
            rows=[],
            mean_train_scanned=None,
            train_filled_episodes=0,
            error=traceback.format_exc(),
        )


def run_grid(
    cfg: ExperimentConfig, workers: int | None = None
) -> tuple[list[ReportRow], list[CellOutcome]]:
    """Execute every cell; results are identical regardless of worker count."""
    cfg.validate()
    cells = [
        (cfg, strategy, fusion, budget, repeat)
        for strategy in cfg.strategies
        for fusion in cfg.fusions
        for budget in cfg.budgets
        for repeat in range(cfg.repeats)
    ]
    if workers is None:
        workers = min(os.cpu_count() or 1, len(cells))
    if workers <= 1 or len(cells) == 1:
        outcomes = [_cell_worker(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_worker, cells, chunksize=1))
    outcomes.sort(key=CellOutcome.sort_key)
    failures = [o for o in outcomes if o.error]
    if len(failures) == len(outcomes):
        raise ConfigurationError(
            "every grid cell failed; first error:\n" + failures[0].error
        )
    rows = sorted(
        (r for o in outcomes for r in o.rows), key=ReportRow.sort_key
    )
    return rows, outcomes


ROW_FIELDS = [
    "strategy", "fusion", "budget", "seed", "subject",
    "acc_before", "acc_after", "f1_before", "f1_after", "scanned",
]


def write_rows_jsonl(rows: list[ReportRow], path: str) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(dataclasses.asdict(r), sort_keys=True) + "\n")


def read_rows_jsonl(path: str) -> list[ReportRow]:
    rows = []
    with open(path) as fh:
        for line in fh:
            rows.append(ReportRow(**json.loads(line)))
    return rows


def write_report(rows: list[ReportRow], out_dir: str, outcomes: list[CellOutcome] | None = None) -> None:
    """Emit report.csv, aggregate.csv, and the per-figure JSON series."""
    os.makedirs(out_dir, exist_ok=True)
    rows = sorted(rows, key=ReportRow.sort_key)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_FIELDS)
        for r in rows:
            writer.writerow([getattr(r, f) for f in ROW_FIELDS])

    write_rows_jsonl(rows, os.path.join(out_dir, "rows.jsonl"))

    groups: dict[tuple[str, str], list[ReportRow]] = {}
    for r in rows:
        groups.setdefault((r.strategy, r.fusion), []).append(r)
    with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "fusion", "acc_before", "acc_after", "f1_before", "f1_after", "rows"]
        )
        for (strategy, fusion), group in sorted(groups.items()):
            writer.writerow(
                [
                    strategy,
                    fusion,
                    float(np.mean([g.acc_before for g in group])),
                    float(np.mean([g.acc_after for g in group])),
                    float(np.mean([g.f1_before for g in group])),
                    float(np.mean([g.f1_after for g in group])),
                    len(group),
                ]
            )

    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    curves: dict[tuple[str, str], dict[int, list[ReportRow]]] = {}
    for r in rows:
        curves.setdefault((r.strategy, r.fusion), {}).setdefault(r.budget, []).append(r)
    curve_series = [
        {
            "strategy": strategy,
            "fusion": fusion,
            "points": [
                {
                    "budget": budget,
                    "acc_before": float(np.mean([g.acc_before for g in group])),
                    "acc_after": float(np.mean([g.acc_after for g in group])),
                    "f1_before": float(np.mean([g.f1_before for g in group])),
                    "f1_after": float(np.mean([g.f1_after for g in group])),
                }
                for budget, group in sorted(by_budget.items())
            ],
        }
        for (strategy, fusion), by_budget in sorted(curves.items())
    ]
    with open(os.path.join(fig_dir, "budget_curves.json"), "w") as fh:
        json.dump(curve_series, fh, indent=2, sort_keys=True)

    subjects: dict[tuple[str, str, int, str], list[ReportRow]] = {}
    for r in rows:
        subjects.setdefault((r.strategy, r.fusion, r.budget, r.subject), []).append(r)
    subject_series = [
        {
            "strategy": strategy,
            "fusion": fusion,
            "budget": budget,
            "subject": subject,
            "acc_before": float(np.mean([g.acc_before for g in group])),
            "acc_after": float(np.mean([g.acc_after for g in group])),
            "f1_before": float(np.mean([g.f1_before for g in group])),
            "f1_after": float(np.mean([g.f1_after for g in group])),
        }
        for (strategy, fusion, budget, subject), group in sorted(subjects.items())
    ]
    with open(os.path.join(fig_dir, "per_subject.json"), "w") as fh:
        json.dump(subject_series, fh, indent=2, sort_keys=True)

    scanned: dict[tuple[str, str, int], list[float]] = {}
    for r in rows:
        scanned.setdefault((r.strategy, r.fusion, r.budget), []).append(r.scanned)
    scanned_series = [
        {
            "strategy": strategy,
            "fusion": fusion,
            "budget": budget,
            "mean_scanned": float(np.mean(values)),
        }
        for (strategy, fusion, budget), values in sorted(scanned.items())
    ]
    with open(os.path.join(fig_dir, "scanned.json"), "w") as fh:
        json.dump(scanned_series, fh, indent=2, sort_keys=True)

    if outcomes is not None:
        with open(os.path.join(out_dir, "cells.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["strategy", "fusion", "budget", "repeat", "mean_train_scanned", "train_filled_episodes"]
            )
            for o in sorted(outcomes, key=CellOutcome.sort_key):
                writer.writerow(
                    [o.strategy, o.fusion, o.budget, o.repeat, o.mean_train_scanned, o.train_filled_episodes]
                )
        failures = [o for o in outcomes if o.error]
        if failures:
            with open(os.path.join(out_dir, "failures.jsonl"), "w") as fh:
                for o in failures:
                    fh.write(
                        json.dumps(
                            {
                                "strategy": o.strategy,
                                "fusion": o.fusion,
                                "budget": o.budget,
                                "repeat": o.repeat,
                                "error": o.error,
                            }
                        )
                        + "\n"
                    )
