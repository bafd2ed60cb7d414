"""Offline behaviour dataset generation (JSON Lines, one episode per line)."""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from ..env import EnvConfig, Trajectory, rollout, write_jsonl
from ..errors import DataError
from .rules import RuleBasedPolicy


class NoisyPolicy:
    """Adds clipped Gaussian noise (``sigma_frac`` times the action bound) to a base policy."""

    def __init__(self, base: Callable, bound: float, sigma_frac: float, rng: np.random.Generator):
        self.base = base
        self.bound = bound
        self.sigma = sigma_frac * bound
        self.rng = rng

    def begin_episode(self, config):
        hook = getattr(self.base, "begin_episode", None)
        if hook is not None:
            hook(config)

    def observe_step(self, result):
        hook = getattr(self.base, "observe_step", None)
        if hook is not None:
            hook(result)

    def __call__(self, obs):
        a = float(self.base(obs))
        if self.sigma > 0:
            a += float(self.rng.normal(0.0, self.sigma))
        return min(max(a, -self.bound), self.bound)


class SchedulePolicy:
    """Replays a fixed action sequence, e.g. an oracle schedule."""

    def __init__(self, actions: Sequence[float]):
        self.actions = list(actions)
        self._k = 0

    def begin_episode(self, config):
        self._k = 0

    def __call__(self, obs):
        a = self.actions[self._k]
        self._k += 1
        return a


def episode_rng(seed: int, building_id: str, t0: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(building_id.encode()), int(t0)])


def _one_episode(args) -> Trajectory:
    make_policy, name, config, seed, sigma_frac = args
    base = make_policy(config) if make_policy is not None else RuleBasedPolicy(config.spec)
    pol = NoisyPolicy(base, config.action_bound, sigma_frac,
                      episode_rng(seed, config.bundle.building_id, config.episode_start))
    return rollout(config, pol, name, seed)


def _rule_factory(config: EnvConfig):
    return RuleBasedPolicy(config.spec)


def generate_trajectories(configs: Sequence[EnvConfig], seeds: Sequence[int], sigma_frac: float = 0.0,
                          make_policy: Callable[[EnvConfig], Callable] | None = None,
                          policy_name: str = "rule_based", jobs: int = 1) -> list[Trajectory]:
    """One episode per (config, seed); order is config-major then seed.

    ``make_policy`` builds the behaviour policy for a config (it must be
    picklable when ``jobs > 1``); the default is the rule-based controller.
    """
    if not configs or not seeds:
        raise DataError("dataset generation needs at least one env config and one seed")
    tasks = [(make_policy or _rule_factory, policy_name, c, s, sigma_frac) for c in configs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one_episode, tasks))
    return [_one_episode(t) for t in tasks]


def generate_offline_dataset(path, configs: Sequence[EnvConfig], seeds: Sequence[int], sigma_frac: float = 0.0,
                             make_policy=None, policy_name: str = "rule_based", jobs: int = 1) -> list[Trajectory]:
    trajs = generate_trajectories(configs, seeds, sigma_frac, make_policy, policy_name, jobs)
    write_jsonl(path, trajs)
    return trajs


class ActorFactory:
    """Picklable factory that hands out a loaded DDPG actor per building."""

    def __init__(self, actors: dict):
        self.actors = actors  # building_id -> checkpoint bytes

    def __call__(self, config: EnvConfig):
        from .ddpg import DDPGActor

        data = self.actors.get(config.bundle.building_id)
        if data is None:
            raise DataError(f"no DDPG actor for building {config.bundle.building_id!r}")
        return DDPGActor.from_bytes(data)
