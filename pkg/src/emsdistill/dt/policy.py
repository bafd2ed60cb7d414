"""Autoregressive control with a trained DT, and size/latency metrics."""

from __future__ import annotations

import math
import time

import numpy as np

from ..env import EnvConfig, Trajectory, observe, reset, rollout, step
from ..errors import DataError
from .model import DecisionTransformer
from .train import Standardizer

WARMUP_STEPS = 10


def default_target(best_cost: float, scale: float = 0.9) -> float:
    """``scale * best`` for positive costs; for negative costs the target moves down by the same margin."""
    return best_cost - (1.0 - scale) * abs(best_cost)


class DTPolicy:
    """Stateful policy: feeds the last K (Cost-to-Go, state, action) steps to the model.

    After each env step the Cost-to-Go prompt is decremented by the realised cost.
    """

    def __init__(self, model: DecisionTransformer, std: Standardizer, target_ctg: float,
                 context: int | None = None, building_id: str | None = None):
        if not math.isfinite(target_ctg):
            raise DataError(f"target Cost-to-Go must be finite, got {target_ctg}")
        self.model = model.eval()
        self.std = std
        self.target_ctg = float(target_ctg)
        self.context = min(context or model.cfg.context_length, model.cfg.context_length)
        self.building_id = building_id
        self.last_logit = None

    def begin_episode(self, config: EnvConfig):
        cfg = self.model.cfg
        if config.state_dim != cfg.state_dim:
            raise DataError(f"env state_dim {config.state_dim} != model state_dim {cfg.state_dim}")
        if config.episode_len > cfg.max_timestep:
            raise DataError(f"episode of {config.episode_len} steps exceeds model max_timestep {cfg.max_timestep}")
        bid = self.building_id or config.bundle.building_id
        (self._s_mu, self._s_sd, self._c_mu, self._c_sd,
         self._a_mu, self._a_sd) = self.std.arrays(bid)
        n = config.episode_len
        self._states = np.zeros((n, cfg.state_dim), dtype=np.float32)
        self._ctg = np.zeros(n, dtype=np.float32)
        self._actions = np.zeros(n, dtype=np.float32)
        self._k = 0
        self._ctg_now = self.target_ctg
        self.bound = config.action_bound

    def __call__(self, obs: np.ndarray) -> float:
        k = self._k
        self._states[k] = (np.asarray(obs, dtype=np.float64) - self._s_mu) / self._s_sd
        self._ctg[k] = (self._ctg_now - self._c_mu) / self._c_sd
        lo = max(0, k + 1 - self.context)
        sl = slice(lo, k + 1)
        ts = np.arange(lo, k + 1)[None, :]
        z = self.model(self._ctg[None, sl], self._states[None, sl], self._actions[None, sl], ts).data[0, -1]
        self.last_logit = float(z)
        a = float(z) * self._a_sd + self._a_mu
        a = min(max(a, -self.bound), self.bound)
        return a

    def observe_step(self, result) -> None:
        k = self._k
        self._actions[k] = (result.action - self._a_mu) / self._a_sd
        self._ctg_now -= result.cost
        self._k = k + 1


def act(model: DecisionTransformer, std: Standardizer, config: EnvConfig, target_ctg: float,
        context: int | None = None, seed: int = 0, policy_name: str = "dt") -> Trajectory:
    return rollout(config, DTPolicy(model, std, target_ctg, context), policy_name, seed)


def count_params(model) -> int:
    return model.count_params()


def activation_bytes(cfg, length: int | None = None, itemsize: int = 4) -> int:
    """Peak live activations for one forward pass over a window of ``length`` timesteps.

    Largest of the attention stage (residual, q, k, v, context, output, plus
    scores and probabilities per head) and the feed-forward stage (residual,
    hidden, output), with the embedding stage (three token streams, the
    timestep rows and the interleaved sequence) as a floor.
    """
    L = cfg.context_length if length is None else length
    N, d, h = 3 * L, cfg.d_model, cfg.n_heads
    embed = 3 * L * d + L * d + N * d
    attn = 6 * N * d + 2 * h * N * N
    ffn = 2 * N * d + N * cfg.ffn_multiplier * d
    return itemsize * max(embed, attn, ffn)


def memory_estimate(model) -> int:
    """Parameter bytes (float32) plus :func:`activation_bytes` at the full context length."""
    return 4 * model.count_params() + activation_bytes(model.cfg)


def time_inference(model: DecisionTransformer, std: Standardizer, config: EnvConfig, steps: int | None = None,
                   target_ctg: float = 0.0, warmup: int = WARMUP_STEPS) -> float:
    """Mean wall-clock milliseconds per control step, after ``warmup`` discarded steps.

    Runs the full policy (standardise, forward, env step) for ``warmup + steps``
    steps on ``config``; ``steps=None`` uses the whole episode.
    """
    total = config.episode_len if steps is None else warmup + steps
    if total > config.episode_len or total <= warmup:
        raise DataError(f"cannot time {total} steps (warm-up {warmup}) on a {config.episode_len}-step episode")
    pol = DTPolicy(model, std, target_ctg)
    pol.begin_episode(config)
    state = reset(config)
    t_start = None
    for k in range(total):
        if k == warmup:
            t_start = time.perf_counter()
        r = step(state, pol(observe(state)))
        pol.observe_step(r)
    return (time.perf_counter() - t_start) * 1000.0 / (total - warmup)
