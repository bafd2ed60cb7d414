"""Reference controllers: no battery and greedy PV self-consumption."""

from __future__ import annotations

import numpy as np

from ..data import BatterySpec
from ..env import EnvConfig, rollout, zero_policy


def no_battery_cost(config: EnvConfig) -> float:
    """Episode cost when the battery is never used."""
    return rollout(config, zero_policy, "no_battery").total_cost


def rule_based_action(obs: np.ndarray, spec: BatterySpec) -> float:
    """Charge from PV surplus, discharge into demand, always feasible.

    Surplus (prosumption < 0) charges ``min(surplus, headroom, bound)``;
    demand discharges ``min(demand, soe, bound)``.
    """
    soe = float(obs[0])
    pros = float(obs[1])
    bound = spec.action_bound
    if pros < 0:
        return min(-pros, spec.capacity_max - soe, bound)
    if pros > 0:
        return -min(pros, soe, bound)
    return 0.0


class RuleBasedPolicy:
    def __init__(self, spec: BatterySpec):
        self.spec = spec

    def __call__(self, obs: np.ndarray) -> float:
        return rule_based_action(obs, self.spec)
