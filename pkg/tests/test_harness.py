"""Config schema, grid runner, reporting, and the CLI subcommands."""

import csv
import json
import os

import numpy as np
import pytest

from mmal import grid as grid_mod
from mmal.cli import main
from mmal.config import ExperimentConfig, config_from_dict, load_config
from mmal.errors import ConfigurationError


def tiny_experiment(**overrides) -> dict:
    base = {
        "generator": {
            "train_subjects": 2,
            "test_subjects": 4,
            "windows_per_subject": 10,
            "modalities": [["a", 4], ["b", 3]],
            "t_steps": 5,
            "seed": 3,
        },
        "train": {
            "episodes": 2,
            "epochs_per_episode": 1,
            "classifier_hidden": 5,
            "q_hidden": 4,
            "q_batch": 8,
        },
        "strategies": ["rnd", "unc"],
        "fusions": ["model-f"],
        "budgets": [2, 3],
        "repeats": 3,
        "personalization_repeats": 2,
        "master_seed": 11,
    }
    base.update(overrides)
    return base


def test_config_full_defaulting():
    cfg = config_from_dict({})
    assert cfg.budgets == [5, 10, 20, 50, 100]
    assert cfg.train.episodes == 100
    assert cfg.train.epochs_per_episode == 10
    assert cfg.train.lr_q == 0.001
    assert cfg.train.rewards.gamma == 0.9
    assert cfg.generator.t_steps == 10


def test_config_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown keys"):
        config_from_dict({"generator": {"bogus_knob": 1}})
    with pytest.raises(ConfigurationError, match="unknown keys"):
        config_from_dict({"mystery": True})


def test_config_validation_gates():
    with pytest.raises(ConfigurationError):
        config_from_dict({"strategies": []})
    with pytest.raises(ConfigurationError):
        config_from_dict({"strategies": ["quantum"]})
    with pytest.raises(ConfigurationError):
        config_from_dict({"budgets": [0]})


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(tiny_experiment()))
    cfg = load_config(str(path))
    assert cfg.repeats == 3
    assert cfg.generator.modalities == [("a", 4), ("b", 3)]
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "missing.json"))


def test_derive_seed_stable_and_sensitive():
    a = grid_mod.derive_seed(1, "rnd", "model-f", 5, 0)
    assert a == grid_mod.derive_seed(1, "rnd", "model-f", 5, 0)
    assert a != grid_mod.derive_seed(1, "rnd", "model-f", 5, 1)
    assert a != grid_mod.derive_seed(2, "rnd", "model-f", 5, 0)


@pytest.fixture(scope="module")
def tiny_grid_result():
    cfg = config_from_dict(tiny_experiment())
    return grid_mod.run_grid(cfg, workers=1), cfg


def test_grid_row_cardinality(tiny_grid_result):
    (rows, outcomes), cfg = tiny_grid_result
    # 2 strategies x 2 budgets x 3 repeats x 4 subjects
    assert len(rows) == 48
    assert len(outcomes) == 12
    assert all(o.error is None for o in outcomes)
    assert all(0.0 <= r.acc_after <= 100.0 and 0.0 <= r.f1_after <= 100.0 for r in rows)


def test_grid_is_order_and_worker_independent(tiny_grid_result):
    (rows, _), cfg = tiny_grid_result
    rows2, _ = grid_mod.run_grid(cfg, workers=2)
    assert [json.dumps(r.__dict__ if not hasattr(r, "__dataclass_fields__") else
                       {f: getattr(r, f) for f in grid_mod.ROW_FIELDS}, sort_keys=True)
            for r in rows] == [
        json.dumps({f: getattr(r, f) for f in grid_mod.ROW_FIELDS}, sort_keys=True)
        for r in rows2
    ]


def test_removing_a_budget_only_removes_its_rows(tiny_grid_result):
    (rows, _), cfg = tiny_grid_result
    import dataclasses

    smaller = config_from_dict(tiny_experiment(budgets=[2]))
    rows_small, _ = grid_mod.run_grid(smaller, workers=1)
    kept = [r for r in rows if r.budget == 2]
    assert len(rows_small) == len(kept)
    for a, b in zip(rows_small, kept):
        for f in grid_mod.ROW_FIELDS:
            assert getattr(a, f) == getattr(b, f)


def test_report_files_and_aggregation(tiny_grid_result, tmp_path):
    (rows, outcomes), _ = tiny_grid_result
    out = tmp_path / "report"
    grid_mod.write_report(rows, str(out), outcomes)
    with open(out / "report.csv", newline="") as fh:
        records = list(csv.DictReader(fh))
    assert len(records) == len(rows)
    with open(out / "aggregate.csv", newline="") as fh:
        agg = {(r["strategy"], r["fusion"]): r for r in csv.DictReader(fh)}
    group = [r for r in rows if r.strategy == "rnd"]
    expected = float(np.mean([r.acc_after for r in group]))
    assert float(agg[("rnd", "model-f")]["acc_after"]) == pytest.approx(expected, abs=1e-12)
    for name in ("budget_curves.json", "per_subject.json", "scanned.json"):
        payload = json.loads((out / "figures" / name).read_text())
        assert payload
    curves = json.loads((out / "figures" / "budget_curves.json").read_text())
    series = {(c["strategy"], c["fusion"]): c["points"] for c in curves}
    assert [p["budget"] for p in series[("rnd", "model-f")]] == [2, 3]


def test_report_csv_deterministic(tiny_grid_result, tmp_path):
    (rows, outcomes), _ = tiny_grid_result
    a, b = tmp_path / "a", tmp_path / "b"
    grid_mod.write_report(rows, str(a), outcomes)
    grid_mod.write_report(list(reversed(rows)), str(b), outcomes)
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()


def test_grid_cell_failures_recorded_not_fatal(monkeypatch, tmp_path):
    real = grid_mod.run_cell

    def flaky(cfg, strategy, fusion, budget, repeat):
        if strategy == "unc" and budget == 2 and repeat == 0:
            raise RuntimeError("injected failure")
        return real(cfg, strategy, fusion, budget, repeat)

    monkeypatch.setattr(grid_mod, "run_cell", flaky)
    cfg = config_from_dict(tiny_experiment(repeats=1))
    rows, outcomes = grid_mod.run_grid(cfg, workers=1)
    errors = [o for o in outcomes if o.error]
    assert len(errors) == 1 and "injected failure" in errors[0].error
    assert rows  # the healthy cells still produced rows
    out = tmp_path / "rep"
    grid_mod.write_report(rows, str(out), outcomes)
    assert (out / "failures.jsonl").exists()


def test_grid_all_cells_failed_raises(monkeypatch):
    monkeypatch.setattr(
        grid_mod, "run_cell", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("boom"))
    )
    cfg = config_from_dict(tiny_experiment(repeats=1, budgets=[2]))
    with pytest.raises(ConfigurationError, match="every grid cell failed"):
        grid_mod.run_grid(cfg, workers=1)


# -- CLI ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "exp.json"
    cfg_path.write_text(json.dumps(tiny_experiment()))
    data_dir = root / "data"
    assert main(["generate", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
    return root, cfg_path, data_dir


def test_cli_generate_wrote_dataset(cli_workspace):
    root, _, data_dir = cli_workspace
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["train"] == ["train00", "train01"]
    assert len(manifest["test"]) == 4


def test_cli_train_personalize_evaluate_report(cli_workspace):
    root, cfg_path, data_dir = cli_workspace
    run_dir = root / "run-rnd"
    rc = main(
        [
            "train", "--data", str(data_dir), "--strategy", "rnd", "--budget", "3",
            "--seed", "7", "--config", str(cfg_path), "--out", str(run_dir),
        ]
    )
    assert rc == 0
    assert (run_dir / "ensemble" / "a.json").exists()
    assert (run_dir / "episodes.jsonl").exists()
    assert not (run_dir / "qnetwork.json").exists()  # baselines carry no policy

    pers_dir = root / "pers"
    rc = main(
        [
            "personalize", "--data", str(data_dir), "--run", str(run_dir),
            "--budget", "2", "--repeats", "2", "--out", str(pers_dir),
        ]
    )
    assert rc == 0
    rows = grid_mod.read_rows_jsonl(str(pers_dir / "rows.jsonl"))
    assert {r.subject for r in rows} == {"test00", "test01", "test02", "test03"}

    report_dir = root / "report"
    rc = main(["report", "--runs", str(root), "--out", str(report_dir)])
    assert rc == 0
    assert (report_dir / "report.csv").exists()


def test_cli_personalize_budget_zero_matches_evaluate(cli_workspace):
    root, cfg_path, data_dir = cli_workspace
    run_dir = root / "run-mmql"
    assert (
        main(
            [
                "train", "--data", str(data_dir), "--strategy", "mmql-cont0",
                "--budget", "2", "--seed", "3", "--config", str(cfg_path),
                "--out", str(run_dir),
            ]
        )
        == 0
    )
    assert (run_dir / "qnetwork.json").exists()
    p0 = root / "pers0"
    ev = root / "eval"
    assert main(
        ["personalize", "--data", str(data_dir), "--run", str(run_dir),
         "--budget", "0", "--repeats", "1", "--out", str(p0)]
    ) == 0
    assert main(
        ["evaluate", "--data", str(data_dir), "--run", str(run_dir), "--out", str(ev)]
    ) == 0
    assert (p0 / "rows.jsonl").read_bytes() == (ev / "rows.jsonl").read_bytes()


def test_cli_train_deterministic_checkpoints(cli_workspace):
    root, cfg_path, data_dir = cli_workspace
    out1, out2 = root / "det1", root / "det2"
    for out in (out1, out2):
        assert (
            main(
                [
                    "train", "--data", str(data_dir), "--strategy", "mmql-cont0",
                    "--budget", "2", "--seed", "9", "--config", str(cfg_path),
                    "--out", str(out),
                ]
            )
            == 0
        )
    assert (out1 / "qnetwork.json").read_bytes() == (out2 / "qnetwork.json").read_bytes()
    assert (out1 / "ensemble" / "a.json").read_bytes() == (out2 / "ensemble" / "a.json").read_bytes()
    assert (out1 / "episodes.jsonl").read_bytes() == (out2 / "episodes.jsonl").read_bytes()


def test_cli_grid_subcommand(cli_workspace, tmp_path):
    root, cfg_path, _ = cli_workspace
    cfg = tiny_experiment(repeats=1, budgets=[2], strategies=["rnd"])
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "gridout"
    assert main(["grid", "--config", str(path), "--workers", "1", "--out", str(out)]) == 0
    assert (out / "report.csv").exists()
    assert (out / "cells.csv").exists()


def test_cli_errors_are_structured(capsys, tmp_path):
    rc = main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigurationError"


def test_cli_out_env_override(cli_workspace, monkeypatch, tmp_path):
    _, cfg_path, _ = cli_workspace
    target = tmp_path / "env-out"
    monkeypatch.setenv("MMAL_OUT", str(target))
    assert main(["generate", "--config", str(cfg_path)]) == 0
    assert (target / "manifest.json").exists()


def test_cli_missing_out_errors(monkeypatch, capsys, cli_workspace):
    _, cfg_path, _ = cli_workspace
    monkeypatch.delenv("MMAL_OUT", raising=False)
    rc = main(["generate", "--config", str(cfg_path)])
    assert rc == 1
    assert "MMAL_OUT" in capsys.readouterr().err
