"""Plan execution with an append-only ledger so interrupted runs resume.

Stages run in dependency order: behaviour data, DDPG actors, DT teachers,
KD students, then one evaluation cell per (policy, building, seed).
Artifacts live under ``out_dir``; the ledger (``ledger.jsonl``) records
every finished stage and cell, and anything recorded there is not recomputed.
"""

from __future__ import annotations

import json
import os
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..baselines import RuleBasedPolicy, no_battery_cost
from ..baselines.dataset import ActorFactory, generate_trajectories
from ..baselines.ddpg import DDPGActor, DDPGConfig, ddpg_train
from ..distill import KDConfig, Teacher, distill, kd_meta
from ..dt.model import DTConfig
from ..dt.policy import DTPolicy, default_target, memory_estimate, time_inference
from ..dt.train import TrainConfig, dt_checkpoint_bytes, dt_from_bytes, train_dt, train_meta
from ..env import read_jsonl, rollout, write_jsonl
from ..errors import DataError
from ..oracle import OracleConfig, dp_optimal_schedule, grid_gap_bound
from ..workspace import Building, load_buildings
from .plan import ExperimentPlan, parse_policy
from .report import EvalReport, reduction


class Ledger:
    """JSON Lines log of terminal statuses, keyed by stage/cell name. Single writer."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self.entries[rec["key"]] = rec

    def done(self, key: str) -> bool:
        return self.entries.get(key, {}).get("status") == "ok"

    def get(self, key: str) -> dict | None:
        return self.entries.get(key)

    def record(self, key: str, status: str, **payload) -> dict:
        rec = {"key": key, "status": status, **payload}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.entries[key] = rec
        return rec


def _write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class PlanRunner:
    def __init__(self, plan: ExperimentPlan, data_dir, out_dir, jobs: int = 1):
        self.plan = plan
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.jobs = max(1, int(jobs))
        try:
            self.buildings = {b.building_id: b for b in load_buildings(data_dir, plan.buildings, plan.eval_weeks)}
        except DataError as exc:
            raise DataError(f"stage ingest: {exc}") from None
        plan_path = self.out / "plan.json"
        if plan_path.exists() and plan_path.read_text() != plan.to_json():
            raise DataError(f"{plan_path} holds a different plan; use a fresh --out-dir")
        plan_path.write_text(plan.to_json())
        self.ledger = Ledger(self.out / "ledger.jsonl")
        self.computed = 0

    # --- stages -------------------------------------------------------------

    def _stage(self, key: str, path: Path, build) -> Path:
        if self.ledger.done(key) and path.exists():
            return path
        try:
            build(path)
        except Exception as exc:
            self.ledger.record(key, "failed", error=f"{type(exc).__name__}: {exc}")
            raise
        self.computed += 1
        self.ledger.record(key, "ok", artifact=path.name)
        return path

    def ddpg_actor(self, building_id: str, seed: int) -> Path:
        b = self.buildings[building_id]
        path = self.out / f"ddpg_{building_id}_{seed}.ckpt"

        def build(p):
            res = ddpg_train(b.env("train"), DDPGConfig(train_steps=self.plan.ddpg_steps, seed=seed))
            _write_bytes(p, res.actor.to_bytes())

        return self._stage(f"stage:ddpg|{building_id}|{seed}", path, build)

    def dataset(self, seed: int) -> Path:
        path = self.out / f"dataset_{seed}.jsonl"
        plan = self.plan

        def build(p):
            configs = [self.buildings[b].env("train") for b in plan.buildings]
            ep_seeds = [seed * 1000 + k for k in range(plan.behaviour_episodes)]
            if plan.behaviour == "ddpg":
                actors = {b: self.ddpg_actor(b, seed).read_bytes() for b in plan.buildings}
                trajs = generate_trajectories(configs, ep_seeds, plan.behaviour_sigma, ActorFactory(actors),
                                              "ddpg", self.jobs)
            else:
                trajs = generate_trajectories(configs, ep_seeds, plan.behaviour_sigma, jobs=self.jobs)
            write_jsonl(p, trajs)

        return self._stage(f"stage:dataset|{seed}", path, build)

    def _train_config(self, seed: int) -> TrainConfig:
        p = self.plan
        return TrainConfig(lr=p.lr, weight_decay=p.weight_decay, batch_size=p.batch_size, max_steps=p.train_steps,
                           patience=p.patience, eval_every=p.eval_every, seed=seed)

    def dt_checkpoint(self, size: str, seed: int) -> Path:
        path = self.out / f"dt_{size}_{seed}.ckpt"

        def build(p):
            trajs = read_jsonl(self.dataset(seed))
            hp = self._train_config(seed)
            res = train_dt(trajs, DTConfig.from_size(size, context_length=self.plan.context), hp)
            _write_bytes(p, dt_checkpoint_bytes(res.model, res.standardizer, train_meta(res, hp)))

        return self._stage(f"stage:dt:{size}|{seed}", path, build)

    def kd_checkpoint(self, teacher: str, student: str, seed: int) -> Path:
        path = self.out / f"kd_{teacher}_{student}_{seed}.ckpt"

        def build(p):
            tpath = self.dt_checkpoint(teacher, seed)
            t = Teacher.load(tpath)
            p_ = self.plan
            cfg = KDConfig(student=DTConfig.from_size(student, context_length=p_.context), lr=p_.lr,
                           weight_decay=p_.weight_decay, batch_size=p_.batch_size, max_steps=p_.kd_steps,
                           patience=p_.patience, eval_every=p_.eval_every, seed=seed)
            res = distill(cfg, t, read_jsonl(self.dataset(seed)))
            _write_bytes(p, dt_checkpoint_bytes(res.student, res.standardizer, kd_meta(res, cfg, t)))
            if tpath.read_bytes() != t.data:
                raise RuntimeError("teacher checkpoint changed during distillation")

        return self._stage(f"stage:kd:{teacher}:{student}|{seed}", path, build)

    def model_path(self, policy: str, seed: int) -> Path:
        spec = parse_policy(policy)
        if spec[0] == "dt":
            return self.dt_checkpoint(spec[1], seed)
        if spec[0] == "kd":
            return self.kd_checkpoint(spec[1], spec[2], seed)
        raise DataError(f"policy {policy!r} has no DT checkpoint")

    # --- evaluation -----------------------------------------------------------

    def prepare(self) -> None:
        """Build every artifact the plan needs, in dependency order."""
        for seed in self.plan.seeds:
            for policy in self.plan.policies:
                kind = parse_policy(policy)[0]
                if kind in ("dt", "kd"):
                    self.model_path(policy, seed)
                elif kind == "ddpg":
                    for b in self.plan.buildings:
                        self.ddpg_actor(b, seed)

    def cell_task(self, policy: str, building_id: str, seed: int) -> tuple:
        kind = parse_policy(policy)[0]
        artifact = None
        if kind in ("dt", "kd"):
            artifact = str(self.model_path(policy, seed))
        elif kind == "ddpg":
            artifact = str(self.ddpg_actor(building_id, seed))
        return (policy, self.buildings[building_id], seed, artifact, self.plan.oracle_grid, self.plan.target_scale)

    def run(self) -> EvalReport:
        self.prepare()
        pending = [c for c in self.plan.cells() if not self.ledger.done(_cell_key(*c))]
        tasks = [self.cell_task(*c) for c in pending]
        if self.jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(_safe_eval, tasks))
        else:
            results = [_safe_eval(t) for t in tasks]
        for (policy, bid, seed), (row, err) in zip(pending, results):
            self.computed += 1
            if err is None:
                self.ledger.record(_cell_key(policy, bid, seed), "ok", row=row)
            else:
                self.ledger.record(_cell_key(policy, bid, seed), "failed", error=err,
                                   row={"policy": policy, "building_id": bid, "seed": seed, "status": "failed"})
        if self.plan.measure_latency:
            self._latency()
        return self.report()

    def _latency(self) -> None:
        """Single-threaded, exclusive timing: median over repeats of per-episode means."""
        from threadpoolctl import threadpool_limits

        for policy in self.plan.policies:
            if parse_policy(policy)[0] not in ("dt", "kd"):
                continue
            seed = self.plan.seeds[0]
            key = f"latency:{policy}"
            if self.ledger.done(key):
                continue
            model, std, _ = dt_from_bytes(self.model_path(policy, seed).read_bytes())
            env = self.buildings[self.plan.buildings[0]].env("eval")
            with threadpool_limits(limits=1):
                ms = statistics.median(time_inference(model, std, env) for _ in range(self.plan.latency_repeats))
            self.computed += 1
            self.ledger.record(key, "ok", latency_ms=ms)

    def report(self) -> EvalReport:
        rows = []
        for policy, bid, seed in self.plan.cells():
            rec = self.ledger.get(_cell_key(policy, bid, seed))
            if rec is None:
                continue
            row = dict(rec["row"])
            lat = self.ledger.get(f"latency:{policy}")
            row["latency_ms"] = lat["latency_ms"] if lat else None
            rows.append(row)
        failed = [k for k, v in self.ledger.entries.items() if v["status"] != "ok"]
        return EvalReport(rows, meta={"computed": self.computed, "failed": failed})


def _cell_key(policy: str, building_id: str, seed: int) -> str:
    return f"cell:{policy}|{building_id}|{seed}"


def _safe_eval(task) -> tuple[dict | None, str | None]:
    try:
        return evaluate_cell(*task), None
    except Exception as exc:  # recorded in the ledger; the run continues
        return None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def evaluate_cell(policy: str, building: Building, seed: int, artifact: str | None, oracle_grid: int,
                  target_scale: float) -> dict:
    env = building.env("eval")
    spec = parse_policy(policy)
    row = {"policy": policy, "building_id": building.building_id, "seed": seed, "params": None,
           "memory_bytes": None, "status": "ok"}
    if spec[0] == "no_battery":
        row["cost"] = no_battery_cost(env)
    elif spec[0] == "rule_based":
        row["cost"] = rollout(env, RuleBasedPolicy(env.spec), policy, seed).total_cost
    elif spec[0] == "oracle":
        row["cost"] = dp_optimal_schedule(OracleConfig(env, oracle_grid)).total_cost
        row["gap_bound"] = grid_gap_bound(env, oracle_grid)
    elif spec[0] == "ddpg":
        actor = DDPGActor.load(artifact)
        row["cost"] = rollout(env, actor, policy, seed).total_cost
        row["params"] = actor.net.count_params()
    else:
        model, std, extra = dt_from_bytes(Path(artifact).read_bytes())
        best = extra.get("behaviour_best", {})
        if building.building_id not in best:
            raise DataError(f"checkpoint has no behaviour cost for {building.building_id}")
        target = default_target(best[building.building_id], target_scale)
        row["cost"] = rollout(env, DTPolicy(model, std, target), policy, seed).total_cost
        row["params"] = model.count_params()
        row["memory_bytes"] = memory_estimate(model)
    return row


def run_plan(plan: ExperimentPlan, data_dir, out_dir, jobs: int = 1) -> EvalReport:
    return PlanRunner(plan, data_dir, out_dir, jobs).run()


def compression_summary(teacher_ckpt: bytes, student_ckpt: bytes, env, repeats: int = 3) -> dict:
    """Param, memory and latency reductions (percent) from teacher to student.

    Latency is the median over ``repeats`` single-threaded runs of the mean
    per-step time over ``env``'s episode, first 10 steps discarded.
    """
    from threadpoolctl import threadpool_limits

    t_model, t_std, _ = dt_from_bytes(teacher_ckpt)
    s_model, s_std, _ = dt_from_bytes(student_ckpt)
    t_runs, s_runs = [], []
    with threadpool_limits(limits=1):
        # interleaved so drifting machine load hits both models alike
        for _ in range(repeats):
            t_runs.append(time_inference(t_model, t_std, env))
            s_runs.append(time_inference(s_model, s_std, env))
    t_lat, s_lat = statistics.median(t_runs), statistics.median(s_runs)
    tp, sp = t_model.count_params(), s_model.count_params()
    tm, sm = memory_estimate(t_model), memory_estimate(s_model)
    return {"teacher_params": tp, "student_params": sp, "param_reduction": reduction(tp, sp),
            "teacher_memory": tm, "student_memory": sm, "memory_reduction": reduction(tm, sm),
            "teacher_latency_ms": t_lat, "student_latency_ms": s_lat, "latency_reduction": reduction(t_lat, s_lat)}
