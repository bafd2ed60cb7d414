import json

import numpy as np
import pytest

from emsdistill.bench import runner as runner_mod
from emsdistill.bench.plan import ExperimentPlan, parse_policy
from emsdistill.bench.report import EvalReport, best_per_building, reduction
from emsdistill.bench.runner import PlanRunner, compression_summary, run_plan
from emsdistill.data import BatterySpec, synth_bundle
from emsdistill.dt import DTConfig, Standardizer, build_model, dt_checkpoint_bytes
from emsdistill.errors import DataError
from emsdistill.workspace import add_bundle, write_manifest

from helpers import env_from_arrays

BUILDINGS = ["synth-arbitrage-0", "synth-arbitrage-1"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    entries = [add_bundle(root, synth_bundle(s, 14, "arbitrage"), BatterySpec(4.0, 1.5)) for s in range(2)]
    write_manifest(root, entries)
    return root


def small_plan(**kw):
    base = dict(buildings=BUILDINGS, seeds=[42, 1894, 314159],
                policies=["no_battery", "rule_based", "oracle", "dt:tiny"], eval_weeks=1, oracle_grid=65,
                context=8, train_steps=10, eval_every=5, batch_size=8)
    base.update(kw)
    return ExperimentPlan(**base)


@pytest.fixture(scope="module")
def first_run(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_plan(small_plan(), data_dir, out)


def test_plan_produces_every_cell(first_run):
    _, report = first_run
    assert len(report.rows) == 2 * 3 * 4
    assert all(r["status"] == "ok" for r in report.rows)
    assert report.meta["failed"] == []
    gap = {(r["building_id"], r["seed"]): r["gap_bound"] for r in report.rows if r["policy"] == "oracle"}
    for bid in BUILDINGS:
        for s in (42, 1894, 314159):
            oracle = report.cost("oracle", bid, s)
            assert oracle <= report.cost("no_battery", bid, s)
            assert report.cost("rule_based", bid, s) <= report.cost("no_battery", bid, s)
            # DT SoE traces are off-grid, so only the gap-bound relaxation holds
            assert oracle <= report.cost("dt:tiny", bid, s) + gap[(bid, s)]


def test_every_cell_has_terminal_ledger_status(first_run):
    out, _ = first_run
    entries = {}
    for line in (out / "ledger.jsonl").read_text().splitlines():
        rec = json.loads(line)
        entries[rec["key"]] = rec["status"]
    for policy, bid, seed in small_plan().cells():
        assert entries[f"cell:{policy}|{bid}|{seed}"] in ("ok", "failed")
    assert ExperimentPlan.from_json((out / "plan.json").read_text()) == small_plan()


def test_rerun_computes_nothing(first_run, data_dir):
    out, report = first_run
    again = run_plan(small_plan(), data_dir, out)
    assert again.meta["computed"] == 0
    assert again.to_csv() == report.to_csv()


def test_fresh_run_is_identical(first_run, data_dir, tmp_path):
    out, report = first_run
    fresh = run_plan(small_plan(), data_dir, tmp_path)
    assert fresh.to_csv() == report.to_csv()
    for name in ("dt_tiny_42.ckpt", "dataset_42.jsonl"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_aggregates_recompute_from_raw_rows(first_run):
    _, report = first_run
    back = EvalReport.from_csv(report.to_csv())
    assert back.aggregate() == report.aggregate()
    for agg in report.aggregate():
        per_b = []
        for bid in BUILDINGS:
            costs = [r["cost"] for r in back.rows if (r["policy"], r["building_id"]) == (agg["policy"], bid)]
            per_b.append(sum(costs) / len(costs))
        assert agg["mean"] == pytest.approx(sum(per_b) / len(per_b), rel=1e-12)
    md = report.to_markdown()
    assert md.count("\n") == 2 + len(BUILDINGS) + 1


def test_failed_cell_is_recorded_and_run_continues(data_dir, tmp_path, monkeypatch):
    real = runner_mod.evaluate_cell

    def flaky(policy, building, *args):
        if policy == "rule_based" and building.building_id == BUILDINGS[1]:
            raise RuntimeError("boom")
        return real(policy, building, *args)

    monkeypatch.setattr(runner_mod, "evaluate_cell", flaky)
    plan = small_plan(policies=["no_battery", "rule_based"], seeds=[42])
    report = run_plan(plan, data_dir, tmp_path)
    status = {(r["policy"], r["building_id"]): r["status"] for r in report.rows}
    assert status[("rule_based", BUILDINGS[1])] == "failed"
    assert sum(s == "ok" for s in status.values()) == 3
    assert report.meta["failed"] == [f"cell:rule_based|{BUILDINGS[1]}|42"]
    ledger = [json.loads(line) for line in (tmp_path / "ledger.jsonl").read_text().splitlines()]
    assert {e["status"] for e in ledger} <= {"ok", "failed"}
    assert "boom" in next(e["error"] for e in ledger if e["status"] == "failed")
    # the failed cell is retried on resume; the others are not
    monkeypatch.setattr(runner_mod, "evaluate_cell", real)
    again = run_plan(plan, data_dir, tmp_path)
    assert again.meta["computed"] == 1
    assert all(r["status"] == "ok" for r in again.rows)


def test_missing_dependency_names_stage(data_dir, tmp_path):
    with pytest.raises(DataError, match="stage ingest"):
        PlanRunner(small_plan(buildings=["nope"]), data_dir, tmp_path)
    with pytest.raises(DataError, match="stage ingest"):
        PlanRunner(small_plan(), tmp_path / "empty", tmp_path / "out")
    PlanRunner(small_plan(), data_dir, tmp_path)
    with pytest.raises(DataError, match="different plan"):
        PlanRunner(small_plan(seeds=[1]), data_dir, tmp_path)


def test_plan_validation_and_json():
    plan = small_plan(policies=["dt:tiny", "kd:small:tiny", "ddpg"])
    assert ExperimentPlan.from_json(plan.to_json()) == plan
    assert len(plan.cells()) == 3 * 2 * 3
    assert parse_policy("kd:medium:tiny") == ("kd", "medium", "tiny")
    for bad in ("dt:huge", "kd:tiny", "random"):
        with pytest.raises(DataError):
            parse_policy(bad)
    with pytest.raises(DataError):
        small_plan(policies=["oracle", "oracle"])
    with pytest.raises(DataError):
        small_plan(buildings=[])


def test_best_per_building_tie_break():
    rows = []
    for policy, params, cost in (("dt:small", 900, 1.0), ("dt:tiny", 100, 1.0), ("ddpg", 50, 2.0),
                                 ("oracle", None, 0.5)):
        rows.append({"policy": policy, "building_id": "b", "seed": 0, "cost": cost, "params": params})
    rows.append({"policy": "ddpg", "building_id": "c", "seed": 0, "cost": 0.1, "params": 50})
    rows.append({"policy": "dt:tiny", "building_id": "c", "seed": 0, "cost": 0.2, "params": 100})
    best = best_per_building(EvalReport(rows))
    assert best[0] == {"building_id": "b", "policy": "dt:tiny", "cost": 1.0}
    assert best[1]["policy"] == "ddpg"
    assert best[2] == {"building_id": "share", "ddpg": 50.0, "dt:tiny": 50.0}
    only = best_per_building(EvalReport(rows[:1]))
    assert only[-1] == {"building_id": "share", "dt:small": 100.0}


def test_compression_summary():
    cfg = DTConfig.from_size("tiny", context_length=8, state_dim=5, max_timestep=512)
    std = Standardizer({"__all__": {"state_mean": [0.0] * 5, "state_std": [1.0] * 5, "ctg_mean": 0.0,
                                    "ctg_std": 1.0, "action_mean": 0.0, "action_std": 1.0}})
    data = dt_checkpoint_bytes(build_model(cfg, 0), std)
    env = env_from_arrays(np.zeros(300), np.full(300, 0.2), cap=2.0, power=1.0)
    s = compression_summary(data, data, env, repeats=3)
    assert s["param_reduction"] == 0.0 and s["memory_reduction"] == 0.0
    assert abs(s["latency_reduction"]) <= 10.0
    assert s["teacher_params"] == s["student_params"] == (12 * 64 * 64 + 13 * 64) + (5 + 10 + 512) * 64 + 1
    assert reduction(10.0, 1.0) == pytest.approx(90.0)
