"""Offline response-based distillation of a frozen DT teacher into a student DT.

The student sees exactly the windows of the behaviour dataset and is fitted
to the teacher's continuous action outputs with a Smooth L1 loss. Both
models share the teacher's standardisation statistics, so "logits" here are
the raw head outputs in standardised action units; multiply by the
building's action std to get kWh.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import checkpoint
from .autodiff import tensor as T
from .autodiff.optim import AdamState, adam_step
from .autodiff.tensor import Tape, Tensor
from .dt.model import DecisionTransformer, DTConfig, build_model
from .dt.policy import DTPolicy, default_target
from .dt.train import Standardizer, WindowSet, canonical_order, dt_from_bytes, split_episodes
from .env import EnvConfig, Trajectory, rollout
from .errors import DataError, NumericError


@dataclass
class KDConfig:
    student: DTConfig
    beta: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_steps: int = 20_000
    patience: int = 500
    eval_every: int = 25
    val_fraction: float = 0.1
    val_windows: int = 256
    final_only: bool = False  # match only the last timestep of each window
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.batch_size < 1 or self.patience < 1 or self.eval_every < 1 or self.max_steps < 0:
            raise ValueError(f"invalid distillation config {self}")


class Teacher:
    """Frozen teacher loaded from checkpoint bytes; never switched to training mode."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.model, self.standardizer, self.extra = dt_from_bytes(self.data)
        self.model.eval()
        self.digest = hashlib.sha256(self.data).hexdigest()

    @classmethod
    def load(cls, path) -> "Teacher":
        with open(path, "rb") as fh:
            return cls(fh.read())

    def logits(self, batch: dict) -> np.ndarray:
        return self.model(batch["ctg"], batch["states"], batch["actions"], batch["timesteps"],
                          batch["valid"]).data


class TeacherLogitCache:
    """Teacher outputs per window id (the window's flat end index), filled lazily.

    Stored on disk in the checkpoint container: one float32 block of shape
    ``(n_windows, K)`` plus the ids, context and teacher digest in the header.
    """

    def __init__(self, teacher: Teacher, windows: WindowSet):
        self.teacher = teacher
        self.windows = windows
        self.table: dict[int, np.ndarray] = {}

    def get(self, ends: np.ndarray) -> np.ndarray:
        ends = np.asarray(ends, dtype=np.int64)
        missing = sorted({int(e) for e in ends} - set(self.table))
        for i in range(0, len(missing), 64):
            chunk = np.asarray(missing[i:i + 64])
            out = self.teacher.logits(self.windows.batch(chunk))
            for e, row in zip(chunk, out):
                self.table[int(e)] = row
        return np.stack([self.table[int(e)] for e in ends])

    def save(self, path) -> None:
        ids = sorted(self.table)
        block = np.stack([self.table[i] for i in ids]) if ids else np.zeros((0, self.windows.context), np.float32)
        checkpoint.save(path, {"logits": block}, config={
            "kind": "teacher_logits", "window_ids": ids, "context": self.windows.context,
            "teacher_sha256": self.teacher.digest})

    def load(self, path) -> int:
        meta, tensors, _ = checkpoint.load(path)
        if meta.get("kind") != "teacher_logits":
            raise DataError(f"{path} is not a teacher logit cache")
        if meta["teacher_sha256"] != self.teacher.digest or meta["context"] != self.windows.context:
            raise DataError(f"{path} was built for a different teacher or context length")
        for i, row in zip(meta["window_ids"], tensors["logits"]):
            self.table[int(i)] = row
        return len(meta["window_ids"])


def _weights(valid: np.ndarray, final_only: bool) -> np.ndarray:
    w = valid.copy()
    if final_only:
        w[:, :-1] = False
    return w


def distillation_loss(student: DecisionTransformer, teacher_logits: np.ndarray, batch: dict, beta: float = 1.0,
                      final_only: bool = False, rng=None) -> Tensor:
    """Mean Smooth L1 between student and teacher outputs over the matched positions."""
    w = _weights(batch["valid"], final_only)
    z = student(batch["ctg"], batch["states"], batch["actions"], batch["timesteps"], batch["valid"], rng=rng)
    diff = T.sub(z, Tensor(teacher_logits, dtype=z.dtype))
    per = T.smooth_l1(diff, beta)
    wt = w.astype(z.dtype) / max(int(w.sum()), 1)
    return T.reduce_sum(T.mul(per, Tensor(wt, dtype=z.dtype)))


@dataclass
class KDResult:
    student: DecisionTransformer
    standardizer: Standardizer
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_val: float = math.nan
    best_val: float = math.inf
    best_step: int = 0
    steps: int = 0
    val_abs_kwh: float = math.nan  # held-out mean |z_S - z_T| in kWh


def _val_stats(student, cache: TeacherLogitCache, ws: WindowSet, ends, std: Standardizer, beta: float,
               final_only: bool) -> tuple[float, float]:
    loss_sum, abs_sum, n = 0.0, 0.0, 0
    for i in range(0, len(ends), 64):
        e = ends[i:i + 64]
        b = ws.batch(e)
        zt = cache.get(e).astype(np.float64)
        zs = student(b["ctg"], b["states"], b["actions"], b["timesteps"], b["valid"]).data.astype(np.float64)
        w = _weights(b["valid"], final_only)
        d = zs - zt
        ad = np.abs(d)
        sl1 = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
        a_std = np.array([std.for_building(ws.trajectories[k].building_id)["action_std"]
                          for k in ws.episode[e]])
        loss_sum += float(sl1[w].sum())
        abs_sum += float((ad * a_std[:, None])[w].sum())
        n += int(w.sum())
    return loss_sum / max(n, 1), abs_sum / max(n, 1)


def distill(cfg: KDConfig, teacher: Teacher, trajectories: Sequence[Trajectory],
            student: DecisionTransformer | None = None, cache_path=None) -> KDResult:
    """Train a student on dataset windows to reproduce the frozen teacher's outputs.

    Validation Smooth L1 on held-out episodes drives early stopping (patience
    in evaluations); the best student is restored. ``cache_path`` persists
    the teacher outputs and reuses them when the file matches the teacher.
    """
    tcfg = teacher.model.cfg
    scfg = cfg.student
    if scfg.state_dim != tcfg.state_dim:
        raise DataError(f"student state_dim {scfg.state_dim} != teacher state_dim {tcfg.state_dim}")
    if scfg.context_length > tcfg.context_length:
        raise DataError(f"student context {scfg.context_length} exceeds teacher context {tcfg.context_length}")
    if scfg.max_timestep > tcfg.max_timestep:
        raise DataError(f"student max_timestep {scfg.max_timestep} exceeds the teacher's {tcfg.max_timestep}")
    if not trajectories:
        raise DataError("distillation dataset is empty")
    dims = {tr.states.shape[1] for tr in trajectories}
    if dims != {scfg.state_dim}:
        raise DataError(f"dataset state dims {sorted(dims)} do not match state_dim {scfg.state_dim}")
    trajs = canonical_order(trajectories)
    seeds = np.random.SeedSequence([cfg.seed, 1]).spawn(4)
    split_rng, sample_rng, drop_rng, val_rng = (np.random.default_rng(s) for s in seeds)
    train, val = split_episodes(trajs, cfg.val_fraction, split_rng)
    if not val:
        val = train
    std = teacher.standardizer
    # one WindowSet over all episodes so window ids are stable across the split
    ws = WindowSet(trajs, std, scfg.context_length)
    train_ids = {id(t) for t in train}
    in_train = np.array([id(t) in train_ids for t in ws.trajectories])[ws.episode]
    train_ends = np.nonzero(in_train)[0]
    val_pool = np.nonzero(~in_train)[0] if len(val) and val is not train else train_ends
    val_ends = val_pool if len(val_pool) <= cfg.val_windows else np.sort(
        val_rng.choice(val_pool, size=cfg.val_windows, replace=False))

    cache = TeacherLogitCache(teacher, ws)
    if cache_path is not None and os.path.exists(cache_path):
        cache.load(cache_path)

    if student is None:
        # own init stream: a same-size student must not start at the teacher's init
        student = build_model(scfg, int(np.random.SeedSequence([cfg.seed, 2]).generate_state(1)[0]))
    params = student.named_parameters()
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    res = KDResult(student=student, standardizer=std)
    v0, _ = _val_stats(student, cache, ws, val_ends, std, cfg.beta, cfg.final_only)
    res.initial_val = res.best_val = v0
    res.val_loss.append((0, v0))
    best_state = student.state_dict()
    bad = 0
    for it in range(1, cfg.max_steps + 1):
        ends = train_ends[sample_rng.integers(len(train_ends), size=cfg.batch_size)]
        b = ws.batch(ends)
        zt = cache.get(ends)
        student.train()
        with Tape() as tape:
            loss = distillation_loss(student, zt, b, cfg.beta, cfg.final_only, rng=drop_rng)
        student.eval()
        lv = float(loss.data)
        if not math.isfinite(lv):
            raise NumericError(f"non-finite distillation loss at step {it}; window ends {ends.tolist()}")
        T.backward(tape, loss, list(params.values()))
        adam_step(params, opt)
        res.train_loss.append(lv)
        res.steps = it
        if it % cfg.eval_every == 0 or it == cfg.max_steps:
            v, _ = _val_stats(student, cache, ws, val_ends, std, cfg.beta, cfg.final_only)
            res.val_loss.append((it, v))
            if v < res.best_val:
                res.best_val, res.best_step, bad = v, it, 0
                best_state = student.state_dict()
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    student.load_state_dict(best_state)
    student.eval()
    _, res.val_abs_kwh = _val_stats(student, cache, ws, val_ends, std, cfg.beta, cfg.final_only)
    if cache_path is not None:
        cache.save(cache_path)
    return res


def kd_meta(res: KDResult, cfg: KDConfig, teacher: Teacher) -> dict:
    hp = asdict(cfg)
    hp.pop("student")
    return {"kd": hp, "teacher_sha256": teacher.digest, "behaviour_best": teacher.extra.get("behaviour_best", {}),
            "initial_val": res.initial_val, "best_val": res.best_val, "best_step": res.best_step,
            "steps": res.steps, "val_abs_kwh": res.val_abs_kwh}


def compare_policies(teacher: tuple, student: tuple, configs: Sequence[EnvConfig], targets: dict | None = None,
                     target_scale: float = 0.9, seed: int = 0) -> list[dict]:
    """Per-building paired rollout costs; ``teacher``/``student`` are ``(model, standardizer, extra)``.

    Both policies get the same Cost-to-Go target (``targets[building]`` or the
    teacher's best behaviour cost scaled by ``target_scale``). The last row is the mean.
    """
    t_model, t_std, t_extra = teacher
    s_model, s_std, _ = student
    if t_model.cfg.state_dim != s_model.cfg.state_dim:
        raise DataError("teacher and student disagree on state_dim")
    best = t_extra.get("behaviour_best", {})
    rows = []
    for cfg in configs:
        if cfg.state_dim != t_model.cfg.state_dim:
            raise DataError(f"env state_dim {cfg.state_dim} does not match the models ({t_model.cfg.state_dim})")
        bid = cfg.bundle.building_id
        if targets and bid in targets:
            tgt = float(targets[bid])
        elif bid in best:
            tgt = default_target(best[bid], target_scale)
        else:
            raise DataError(f"no Cost-to-Go target for building {bid!r}")
        tc = rollout(cfg, DTPolicy(t_model, t_std, tgt), "teacher", seed).total_cost
        sc = rollout(cfg, DTPolicy(s_model, s_std, tgt), "student", seed).total_cost
        rows.append({"building_id": bid, "target": tgt, "teacher_cost": tc, "student_cost": sc,
                     "improvement": tc - sc})
    n = len(rows)
    if n:
        rows.append({"building_id": "mean", "target": sum(r["target"] for r in rows) / n,
                     "teacher_cost": sum(r["teacher_cost"] for r in rows) / n,
                     "student_cost": sum(r["student_cost"] for r in rows) / n,
                     "improvement": sum(r["improvement"] for r in rows) / n})
    return rows


def logit_gap(teacher: tuple, student: tuple, trajectories: Sequence[Trajectory], context: int | None = None,
              final_only: bool = False) -> dict:
    """Mean |z_S - z_T| in kWh per building over every window of ``trajectories``.

    Both models are fed the same windows, standardised with the teacher's statistics.
    """
    t_model, t_std, _ = teacher
    s_model, _, _ = student
    K = context or min(t_model.cfg.context_length, s_model.cfg.context_length)
    trajs = canonical_order(trajectories)
    ws = WindowSet(trajs, t_std, K)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for i in range(0, len(ws), 64):
        e = np.arange(i, min(i + 64, len(ws)))
        b = ws.batch(e)
        args = (b["ctg"], b["states"], b["actions"], b["timesteps"], b["valid"])
        d = np.abs(s_model(*args).data.astype(np.float64) - t_model(*args).data.astype(np.float64))
        w = _weights(b["valid"], final_only)
        for row, k in enumerate(ws.episode[e]):
            bid = ws.trajectories[k].building_id
            a_std = t_std.for_building(bid)["action_std"]
            sums[bid] = sums.get(bid, 0.0) + float(d[row][w[row]].sum()) * a_std
            counts[bid] = counts.get(bid, 0) + int(w[row].sum())
    return {bid: sums[bid] / counts[bid] for bid in sorted(sums)}
