"""Supervised DT training on offline trajectories, plus checkpoint I/O."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import checkpoint
from ..autodiff import tensor as T
from ..autodiff.optim import AdamState, adam_step
from ..autodiff.tensor import Tape, Tensor
from ..env import Trajectory
from ..errors import DataError, NumericError
from .model import DecisionTransformer, DTConfig, build_model

STD_FLOOR = 1e-3
POOLED = "__all__"


def _moments(x: np.ndarray, axis=0):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=axis), np.maximum(x.std(axis=axis), STD_FLOOR)


@dataclass
class Standardizer:
    """Per-building z-scoring of states, Cost-to-Go and actions.

    Unknown buildings fall back to statistics pooled over all training data.
    """

    stats: dict

    @classmethod
    def fit(cls, trajectories: Sequence[Trajectory]) -> "Standardizer":
        groups: dict[str, list[Trajectory]] = {}
        for tr in trajectories:
            groups.setdefault(tr.building_id, []).append(tr)
        groups[POOLED] = list(trajectories)
        stats = {}
        for bid in sorted(groups):
            trs = groups[bid]
            s_mu, s_sd = _moments(np.concatenate([t.states for t in trs]).astype(np.float64))
            c_mu, c_sd = _moments(np.concatenate([t.ctg for t in trs]))
            a_mu, a_sd = _moments(np.concatenate([t.actions for t in trs]))
            stats[bid] = {"state_mean": s_mu.tolist(), "state_std": s_sd.tolist(), "ctg_mean": float(c_mu),
                          "ctg_std": float(c_sd), "action_mean": float(a_mu), "action_std": float(a_sd)}
        return cls(stats)

    def for_building(self, building_id: str) -> dict:
        return self.stats.get(building_id, self.stats[POOLED])

    def arrays(self, building_id: str):
        s = self.for_building(building_id)
        return (np.asarray(s["state_mean"]), np.asarray(s["state_std"]), s["ctg_mean"], s["ctg_std"],
                s["action_mean"], s["action_std"])

    def states(self, building_id: str, x):
        s = self.for_building(building_id)
        return (np.asarray(x, dtype=np.float64) - np.asarray(s["state_mean"])) / np.asarray(s["state_std"])

    def ctg(self, building_id: str, x):
        s = self.for_building(building_id)
        return (np.asarray(x, dtype=np.float64) - s["ctg_mean"]) / s["ctg_std"]

    def actions(self, building_id: str, x):
        s = self.for_building(building_id)
        return (np.asarray(x, dtype=np.float64) - s["action_mean"]) / s["action_std"]

    def unscale_actions(self, building_id: str, z):
        s = self.for_building(building_id)
        return np.asarray(z, dtype=np.float64) * s["action_std"] + s["action_mean"]


def canonical_order(trajectories: Sequence[Trajectory]) -> list[Trajectory]:
    """Sort episodes so the sampler does not depend on file order."""
    return sorted(trajectories, key=lambda t: (t.building_id, t.policy, int(t.seed), int(t.t0)))


class WindowSet:
    """Flat, standardised view of a set of episodes for K-window sampling."""

    def __init__(self, trajectories: Sequence[Trajectory], std: Standardizer, context: int):
        if not trajectories:
            raise DataError("no episodes to sample windows from")
        self.context = context
        self.trajectories = list(trajectories)
        lens = np.array([len(t) for t in trajectories])
        self.starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
        self.lengths = lens
        self.states = np.concatenate([std.states(t.building_id, t.states) for t in trajectories]).astype(np.float32)
        self.ctg = np.concatenate([std.ctg(t.building_id, t.ctg) for t in trajectories]).astype(np.float32)
        self.actions = np.concatenate([std.actions(t.building_id, t.actions) for t in trajectories]).astype(np.float32)
        self.episode = np.repeat(np.arange(len(trajectories)), lens)
        self.timestep = np.concatenate([np.arange(n) for n in lens])

    def __len__(self):
        return len(self.episode)

    def batch(self, ends: np.ndarray) -> dict:
        """Windows ending at the given flat indices, left-padded to the context length."""
        K = self.context
        ends = np.asarray(ends, dtype=np.int64)
        pos = ends[:, None] + np.arange(-K + 1, 1)[None, :]
        first = self.starts[self.episode[ends]]
        valid = pos >= first[:, None]
        pos = np.where(valid, pos, ends[:, None])
        zero = np.float32(0)
        return {
            "ctg": np.where(valid, self.ctg[pos], zero),
            "states": np.where(valid[..., None], self.states[pos], zero),
            "actions": np.where(valid, self.actions[pos], zero),
            "timesteps": np.where(valid, self.timestep[pos], 0),
            "valid": valid,
            "ends": ends,
        }


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_steps: int = 20_000
    patience: int = 500  # counted in evaluations
    eval_every: int = 25
    val_fraction: float = 0.1
    val_windows: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 0 or self.patience < 1 or self.eval_every < 1:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainResult:
    model: DecisionTransformer
    standardizer: Standardizer
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_val: float = math.inf
    best_step: int = 0
    steps: int = 0
    behaviour_best: dict = field(default_factory=dict)


def split_episodes(trajectories: Sequence[Trajectory], fraction: float, rng: np.random.Generator):
    """Hold out ``fraction`` of episodes (at least one when there are two or more)."""
    n = len(trajectories)
    n_val = 0 if fraction <= 0 or n < 2 else max(1, int(round(fraction * n)))
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [t for i, t in enumerate(trajectories) if i not in val_idx]
    val = [t for i, t in enumerate(trajectories) if i in val_idx]
    return train, val


def masked_mse(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    w = valid.astype(pred.dtype) / max(int(valid.sum()), 1)
    diff = T.sub(pred, Tensor(target, dtype=pred.dtype))
    return T.reduce_sum(T.mul(T.mul(diff, diff), Tensor(w, dtype=pred.dtype)))


def _fixed_val_ends(ws: WindowSet, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(ws) <= n:
        return np.arange(len(ws))
    return np.sort(rng.choice(len(ws), size=n, replace=False))


def evaluate_loss(model: DecisionTransformer, ws: WindowSet, ends: np.ndarray, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for i in range(0, len(ends), batch_size):
        b = ws.batch(ends[i:i + batch_size])
        pred = model(b["ctg"], b["states"], b["actions"], b["timesteps"], b["valid"]).data.astype(np.float64)
        err = (pred - b["actions"]) ** 2
        total += float(err[b["valid"]].sum())
        count += int(b["valid"].sum())
    return total / max(count, 1)


def behaviour_best_costs(trajectories: Sequence[Trajectory]) -> dict:
    best: dict[str, float] = {}
    for tr in trajectories:
        c = tr.total_cost
        if tr.building_id not in best or c < best[tr.building_id]:
            best[tr.building_id] = c
    return dict(sorted(best.items()))


def train_dt(trajectories: Sequence[Trajectory], cfg: DTConfig, hp: TrainConfig,
             model: DecisionTransformer | None = None) -> TrainResult:
    """Minimise masked MSE between predicted and logged (standardised) actions.

    Windows end at a uniformly drawn dataset step. Validation loss on a fixed
    set of held-out windows is computed every ``eval_every`` steps; training
    stops after ``patience`` evaluations without improvement and the best
    parameters are restored.
    """
    if not trajectories:
        raise DataError("training dataset is empty")
    dims = {tr.states.shape[1] for tr in trajectories}
    if dims != {cfg.state_dim}:
        raise DataError(f"dataset state dims {sorted(dims)} do not match model state_dim {cfg.state_dim}")
    longest = max(len(t) for t in trajectories)
    if longest > cfg.max_timestep:
        raise DataError(f"episode of {longest} steps exceeds max_timestep {cfg.max_timestep}")
    trajs = canonical_order(trajectories)
    seeds = np.random.SeedSequence(hp.seed).spawn(4)
    split_rng, sample_rng, drop_rng, val_rng = (np.random.default_rng(s) for s in seeds)
    train, val = split_episodes(trajs, hp.val_fraction, split_rng)
    if not val:
        val = train
    std = Standardizer.fit(train)
    ws_train = WindowSet(train, std, cfg.context_length)
    ws_val = WindowSet(val, std, cfg.context_length)
    val_ends = _fixed_val_ends(ws_val, hp.val_windows, val_rng)

    if model is None:
        model = build_model(cfg, hp.seed)
    params = model.named_parameters()
    opt = AdamState(lr=hp.lr, weight_decay=hp.weight_decay)
    res = TrainResult(model=model, standardizer=std, behaviour_best=behaviour_best_costs(trajs))
    best_state = model.state_dict()
    res.best_val = evaluate_loss(model, ws_val, val_ends)
    res.val_loss.append((0, res.best_val))
    bad_evals = 0
    for it in range(1, hp.max_steps + 1):
        b = ws_train.batch(sample_rng.integers(len(ws_train), size=hp.batch_size))
        model.train()
        with Tape() as tape:
            pred = model(b["ctg"], b["states"], b["actions"], b["timesteps"], b["valid"], rng=drop_rng)
            loss = masked_mse(pred, b["actions"], b["valid"])
        model.eval()
        lv = float(loss.data)
        if not math.isfinite(lv):
            eps = sorted({(ws_train.trajectories[e].building_id, ws_train.trajectories[e].seed)
                          for e in ws_train.episode[b["ends"]]})
            raise NumericError(f"non-finite training loss at step {it}; batch episodes {eps}, "
                               f"window ends {b['ends'].tolist()}")
        T.backward(tape, loss, list(params.values()))
        adam_step(params, opt)
        res.train_loss.append(lv)
        res.steps = it
        if it % hp.eval_every == 0 or it == hp.max_steps:
            v = evaluate_loss(model, ws_val, val_ends)
            res.val_loss.append((it, v))
            if v < res.best_val:
                res.best_val, res.best_step, bad_evals = v, it, 0
                best_state = model.state_dict()
            else:
                bad_evals += 1
                if bad_evals >= hp.patience:
                    break
    model.load_state_dict(best_state)
    model.eval()
    return res


# --- checkpoints -------------------------------------------------------------

def dt_checkpoint_bytes(model: DecisionTransformer, std: Standardizer, extra: dict | None = None) -> bytes:
    meta = {"kind": "dt", "dt": model.cfg.to_dict(), "standardizer": std.stats}
    return checkpoint.encode(model.state_dict(), config=meta, extra=extra or {})


def save_dt(path, model: DecisionTransformer, std: Standardizer, extra: dict | None = None) -> None:
    data = dt_checkpoint_bytes(model, std, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def dt_from_bytes(data: bytes):
    meta, tensors, extra = checkpoint.decode(data)
    if meta.get("kind") != "dt":
        raise DataError("checkpoint does not hold a Decision Transformer")
    cfg = DTConfig(**meta["dt"])
    model = build_model(cfg, 0)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint tensors do not fit the stored config: {exc}") from None
    return model, Standardizer(meta["standardizer"]), extra


def load_dt(path):
    with open(path, "rb") as fh:
        return dt_from_bytes(fh.read())


def train_meta(res: TrainResult, hp: TrainConfig) -> dict:
    return {"train": asdict(hp), "behaviour_best": res.behaviour_best, "best_val": res.best_val,
            "best_step": res.best_step, "steps": res.steps}
