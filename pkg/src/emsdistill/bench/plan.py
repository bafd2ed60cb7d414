"""Experiment plans: which policies run on which buildings with which seeds."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..dt.model import SIZES
from ..errors import DataError

DEFAULT_SEEDS = (42, 1894, 314159)
BENCHMARKS = ("no_battery", "rule_based", "oracle")


def parse_policy(name: str) -> tuple:
    """``no_battery`` | ``rule_based`` | ``oracle`` | ``ddpg`` | ``dt:<size>`` | ``kd:<teacher>:<student>``."""
    if name in BENCHMARKS or name == "ddpg":
        return (name,)
    parts = name.split(":")
    if parts[0] == "dt" and len(parts) == 2 and parts[1] in SIZES:
        return ("dt", parts[1])
    if parts[0] == "kd" and len(parts) == 3 and parts[1] in SIZES and parts[2] in SIZES:
        return ("kd", parts[1], parts[2])
    raise DataError(f"unknown policy {name!r}; expected one of {BENCHMARKS + ('ddpg',)}, dt:<size> or "
                    f"kd:<teacher>:<student> with sizes {sorted(SIZES)}")


def is_learning(name: str) -> bool:
    return parse_policy(name)[0] in ("ddpg", "dt", "kd")


@dataclass
class ExperimentPlan:
    buildings: list
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    policies: list = field(default_factory=lambda: list(BENCHMARKS) + ["dt:tiny"])
    eval_weeks: int = 4
    oracle_grid: int = 1025
    # behaviour data
    behaviour: str = "rule_based"  # or "ddpg"
    behaviour_sigma: float = 0.3  # noise as a fraction of the action bound
    behaviour_episodes: int = 1  # noisy episodes per building and plan seed
    ddpg_steps: int = 2000
    # DT / KD training
    context: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    train_steps: int = 300
    kd_steps: int = 2000
    patience: int = 500
    eval_every: int = 50
    target_scale: float = 0.9
    # measurement
    measure_latency: bool = False
    latency_repeats: int = 3

    def __post_init__(self):
        if not self.buildings:
            raise DataError("plan needs at least one building")
        if not self.seeds:
            raise DataError("plan needs at least one seed")
        for p in self.policies:
            parse_policy(p)
        if len(set(self.policies)) != len(self.policies):
            raise DataError(f"duplicate policies in plan: {self.policies}")
        if self.behaviour not in ("rule_based", "ddpg"):
            raise DataError(f"behaviour policy must be rule_based or ddpg, got {self.behaviour!r}")
        self.buildings = list(self.buildings)
        self.seeds = [int(s) for s in self.seeds]
        self.policies = list(self.policies)

    def cells(self) -> list[tuple[str, str, int]]:
        return [(p, b, s) for p in self.policies for b in self.buildings for s in self.seeds]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"invalid plan: {exc}") from None
