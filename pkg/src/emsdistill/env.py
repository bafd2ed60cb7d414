"""Finite-horizon residential battery environment.

One step is one 30-minute slot. The requested action is first snapped to
the energy lattice, limited to ``+-power_max/2`` and then clipped so the
SoE stays within ``[0, capacity_max]``; the gap between requested and
effective action is charged as a penalty in the reward. Imports are billed
at the slot price, exports credited at the feed-in tariff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .data import BatterySpec, TimeSeriesBundle, snap_energy
from .errors import DataError, NumericError

DEFAULT_HORIZON = 24
DEFAULT_FEED_IN = 0.1


def state_dim(horizon: int) -> int:
    return 1 + 2 * (horizon + 2)


@dataclass
class EnvConfig:
    bundle: TimeSeriesBundle
    spec: BatterySpec
    horizon_h: int = DEFAULT_HORIZON
    feed_in_tariff: float = DEFAULT_FEED_IN
    episode_start: int = 0
    episode_len: int | None = None

    def __post_init__(self):
        if self.episode_len is None:
            self.episode_len = len(self.bundle) - self.episode_start
        if self.horizon_h < 0:
            raise DataError(f"horizon_h must be >= 0, got {self.horizon_h}")
        if self.episode_len < 1:
            raise DataError(f"episode_len must be >= 1, got {self.episode_len}")
        if self.episode_start < 0 or self.episode_start + self.episode_len > len(self.bundle):
            raise DataError(f"episode [{self.episode_start}, {self.episode_start + self.episode_len}) "
                            f"does not fit a bundle of {len(self.bundle)} slots")
        n = len(self.bundle)
        pad = self.horizon_h + 2
        self._pros = np.concatenate([self.bundle.prosumption, np.repeat(self.bundle.prosumption[-1:], pad)])
        self._price = np.concatenate([self.bundle.price, np.repeat(self.bundle.price[-1:], pad)])
        self._n = n

    @property
    def state_dim(self) -> int:
        return state_dim(self.horizon_h)

    @property
    def action_bound(self) -> float:
        return self.spec.action_bound

    def prosumption_at(self, t: int) -> float:
        return float(self._pros[t])

    def price_at(self, t: int) -> float:
        return float(self._price[t])

    def episode_slice(self) -> slice:
        return slice(self.episode_start, self.episode_start + self.episode_len)

    def replace(self, **kw) -> "EnvConfig":
        base = dict(bundle=self.bundle, spec=self.spec, horizon_h=self.horizon_h,
                    feed_in_tariff=self.feed_in_tariff, episode_start=self.episode_start,
                    episode_len=self.episode_len)
        base.update(kw)
        return EnvConfig(**base)


@dataclass
class EnvState:
    config: EnvConfig
    soe: float
    t: int
    k: int = 0

    @property
    def done(self) -> bool:
        return self.k >= self.config.episode_len


@dataclass
class StepResult:
    action: float
    effective_action: float
    grid_exchange: float
    cost: float
    reward: float
    penalty: float
    soe: float
    next_soe: float


def reset(config: EnvConfig) -> EnvState:
    return EnvState(config=config, soe=config.spec.initial_soe, t=config.episode_start, k=0)


def observe(state: EnvState) -> np.ndarray:
    """``[soe, prosumption[t..t+h+1], price[t..t+h+1]]`` in float64.

    Slots past the end of the data repeat the last recorded value.
    """
    cfg = state.config
    w = cfg.horizon_h + 2
    out = np.empty(1 + 2 * w)
    out[0] = state.soe
    out[1:1 + w] = cfg._pros[state.t:state.t + w]
    out[1 + w:] = cfg._price[state.t:state.t + w]
    return out


def slot_cost(grid: float, price: float, feed_in: float) -> float:
    return grid * price if grid >= 0 else grid * feed_in


def step(state: EnvState, action: float) -> StepResult:
    if state.done:
        raise DataError("episode already finished")
    a = float(action)
    if math.isnan(a):
        raise NumericError(f"NaN action at step {state.k}")
    cfg = state.config
    cap = cfg.spec.capacity_max
    bound = cfg.action_bound
    a = snap_energy(min(max(a, -1e6), 1e6))
    limited = min(max(a, -bound), bound)
    soe = state.soe
    new_soe = min(max(soe + limited, 0.0), cap)
    eff = new_soe - soe
    grid = cfg._pros[state.t] + eff
    cost = slot_cost(grid, cfg._price[state.t], cfg.feed_in_tariff)
    penalty = abs(a - eff)
    result = StepResult(action=a, effective_action=eff, grid_exchange=float(grid), cost=float(cost),
                        reward=float(-cost - penalty), penalty=penalty, soe=soe, next_soe=new_soe)
    state.soe = new_soe
    state.t += 1
    state.k += 1
    return result


def cost_to_go(costs: Iterable[float]) -> np.ndarray:
    """Suffix sums ``C_t = c_t + C_{t+1}`` accumulated back to front in float64."""
    c = np.asarray(list(costs) if not isinstance(costs, np.ndarray) else costs, dtype=np.float64)
    out = np.empty_like(c)
    acc = 0.0
    for i in range(len(c) - 1, -1, -1):
        acc = float(c[i]) + acc
        out[i] = acc
    return out


class BatteryEnv:
    """Object wrapper around the functional step API."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state = reset(config)

    def reset(self) -> np.ndarray:
        self.state = reset(self.config)
        return observe(self.state)

    def observe(self) -> np.ndarray:
        return observe(self.state)

    def step(self, action: float) -> StepResult:
        return step(self.state, action)

    @property
    def done(self) -> bool:
        return self.state.done


@dataclass
class Trajectory:
    building_id: str
    policy: str
    seed: int
    t0: int
    h: int
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    rewards: np.ndarray
    ctg: np.ndarray
    effective_actions: np.ndarray | None = None
    penalties: np.ndarray | None = None
    soe: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    @property
    def total_cost(self) -> float:
        """Equals ``ctg[0]``: the suffix sum accumulated back to front."""
        return float(self.ctg[0]) if len(self.ctg) else 0.0

    def to_json(self) -> str:
        rec = {
            "building_id": self.building_id, "policy": self.policy, "seed": int(self.seed),
            "t0": int(self.t0), "h": int(self.h),
            "states": [_f32_list(row) for row in self.states],
            "actions": _f32_list(self.actions), "costs": _f32_list(self.costs),
            "rewards": _f32_list(self.rewards), "ctg": _f32_list(self.ctg),
        }
        return json.dumps(rec, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Trajectory":
        rec = json.loads(line)
        missing = {"building_id", "policy", "seed", "t0", "h", "states", "actions", "costs", "rewards",
                   "ctg"} - set(rec)
        if missing:
            raise DataError(f"trajectory record lacks fields {sorted(missing)}")
        n = len(rec["actions"])
        if not all(len(rec[k]) == n for k in ("states", "costs", "rewards", "ctg")):
            raise DataError("trajectory arrays are not aligned")
        return cls(building_id=rec["building_id"], policy=rec["policy"], seed=rec["seed"], t0=rec["t0"],
                   h=rec["h"], states=np.asarray(rec["states"], dtype=np.float32).reshape(n, -1),
                   actions=np.asarray(rec["actions"], dtype=np.float32),
                   costs=np.asarray(rec["costs"], dtype=np.float64),
                   rewards=np.asarray(rec["rewards"], dtype=np.float64),
                   ctg=np.asarray(rec["ctg"], dtype=np.float64))


def _f32_list(arr) -> list:
    return [float(f"{v:.9g}") for v in np.asarray(arr, dtype=np.float32).tolist()]


def write_jsonl(path, trajectories: Iterable[Trajectory]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajectories:
            fh.write(tr.to_json())
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Trajectory.from_json(line))
            except (json.JSONDecodeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


Policy = Callable[[np.ndarray], float]


def zero_policy(obs: np.ndarray) -> float:
    return 0.0


def rollout(config: EnvConfig, policy, policy_name: str = "policy", seed: int = 0) -> Trajectory:
    """Run one episode. ``policy`` maps an observation to an action (kWh).

    Policies may also define ``begin_episode(config)`` and ``observe_step(result)``
    hooks, which are called at the start and after every step.
    """
    state = reset(config)
    n = config.episode_len
    states = np.empty((n, config.state_dim))
    actions, eff, costs, rewards, pens, soes = (np.empty(n) for _ in range(6))
    begin = getattr(policy, "begin_episode", None)
    if begin is not None:
        begin(config)
    hook = getattr(policy, "observe_step", None)
    for k in range(n):
        obs = observe(state)
        a = float(policy(obs))
        if math.isnan(a):
            raise NumericError(f"policy {policy_name!r} emitted NaN at step {k}")
        res = step(state, a)
        states[k] = obs
        actions[k], eff[k], costs[k], rewards[k], pens[k], soes[k] = (
            res.action, res.effective_action, res.cost, res.reward, res.penalty, res.soe)
        if hook is not None:
            hook(res)
    return Trajectory(building_id=config.bundle.building_id, policy=policy_name, seed=seed,
                      t0=config.episode_start, h=config.horizon_h, states=states.astype(np.float32),
                      actions=actions, costs=costs, rewards=rewards, ctg=cost_to_go(costs),
                      effective_actions=eff, penalties=pens, soe=np.append(soes, state.soe))
