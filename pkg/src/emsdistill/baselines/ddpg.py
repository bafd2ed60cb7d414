"""DDPG behaviour policy (deterministic actor, Q critic, target networks)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import checkpoint
from ..autodiff import tensor as T
from ..autodiff.nn import MLP
from ..autodiff.optim import AdamState, adam_step
from ..autodiff.tensor import Tape, Tensor
from ..env import EnvConfig, observe, reset, step
from ..errors import DataError, NumericError


@dataclass
class DDPGConfig:
    hidden: tuple = (256, 256)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    sigma: float | None = None  # kWh; None -> 0.1 * action bound
    replay_capacity: int = 100_000
    batch_size: int = 64
    train_steps: int = 20_000
    episode_len: int = 48
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros(self.capacity, dtype=np.float32)
        self.reward = np.zeros(self.capacity, dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=np.float32)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self._next
        self.obs[i], self.action[i], self.reward[i] = obs, action, reward
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx]


@dataclass
class ObsScaler:
    """Maps raw observations to roughly unit scale."""

    capacity: float
    pros_mean: float
    pros_std: float
    price_mean: float
    price_std: float
    horizon: int

    @classmethod
    def fit(cls, config: EnvConfig) -> "ObsScaler":
        sl = config.episode_slice()
        pros = config.bundle.prosumption[sl]
        price = config.bundle.price[sl]
        return cls(capacity=max(config.spec.capacity_max, 1e-9), pros_mean=float(pros.mean()),
                   pros_std=float(max(pros.std(), 1e-3)), price_mean=float(price.mean()),
                   price_std=float(max(price.std(), 1e-3)), horizon=config.horizon_h)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        w = self.horizon + 2
        out = np.empty_like(obs)
        out[..., 0] = obs[..., 0] / self.capacity * 2.0 - 1.0
        out[..., 1:1 + w] = (obs[..., 1:1 + w] - self.pros_mean) / self.pros_std
        out[..., 1 + w:] = (obs[..., 1 + w:] - self.price_mean) / self.price_std
        return out.astype(np.float32)


class DDPGActor:
    """Deterministic policy ``bound * tanh(mlp(scaled obs))``; callable on raw observations."""

    def __init__(self, net: MLP, scaler: ObsScaler, bound: float, config: DDPGConfig):
        self.net = net
        self.scaler = scaler
        self.bound = float(bound)
        self.config = config

    def forward(self, obs_scaled: Tensor) -> Tensor:
        return T.scale(T.tanh(self.net(obs_scaled)), self.bound)

    def __call__(self, obs: np.ndarray) -> float:
        x = Tensor(self.scaler(obs)[None, :])
        return float(self.forward(x).data[0, 0])

    def to_bytes(self) -> bytes:
        cfg = asdict(self.config)
        cfg["hidden"] = list(self.config.hidden)
        meta = {"kind": "ddpg_actor", "ddpg": cfg, "scaler": asdict(self.scaler), "bound": self.bound,
                "obs_dim": int(self.net.layers[0].weight.shape[0])}
        return checkpoint.encode(self.net.state_dict(), config=meta)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "DDPGActor":
        meta, tensors, _ = checkpoint.decode(data)
        if meta.get("kind") != "ddpg_actor":
            raise DataError("checkpoint does not hold a DDPG actor")
        cfg = DDPGConfig(**meta["ddpg"])
        net = MLP([meta["obs_dim"], *cfg.hidden, 1], np.random.default_rng(0))
        net.load_state_dict(tensors)
        return cls(net, ObsScaler(**meta["scaler"]), meta["bound"], cfg)

    @classmethod
    def load(cls, path) -> "DDPGActor":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _copy_params(src: MLP, dst: MLP) -> None:
    for (_, p), (_, q) in zip(src.named_parameters().items(), dst.named_parameters().items()):
        q.data = p.data.copy()


def soft_update(online: MLP, target: MLP, tau: float) -> None:
    for (_, p), (_, q) in zip(online.named_parameters().items(), target.named_parameters().items()):
        q.data = (tau * p.data.astype(np.float64) + (1.0 - tau) * q.data.astype(np.float64)).astype(q.dtype)


@dataclass
class DDPGResult:
    actor: DDPGActor
    critic: MLP
    target_actor: MLP
    target_critic: MLP
    critic_losses: list = field(default_factory=list)
    actor_losses: list = field(default_factory=list)


def _critic_input(obs: np.ndarray | Tensor, act: Tensor, bound: float) -> Tensor:
    o = obs if isinstance(obs, Tensor) else Tensor(obs)
    return T.concat([o, T.scale(act, 1.0 / max(bound, 1e-9))], axis=-1)


def ddpg_update(res: DDPGResult, batch, cfg: DDPGConfig, actor_opt: AdamState, critic_opt: AdamState) -> tuple[float, float]:
    """One critic + actor gradient step followed by the soft target update."""
    obs, act, rew, nxt, done = batch
    actor = res.actor
    bound = actor.bound
    # TD target from target networks, no tape
    a_next = T.scale(T.tanh(res.target_actor(Tensor(nxt))), bound)
    q_next = res.target_critic(_critic_input(nxt, a_next, bound)).data[:, 0].astype(np.float64)
    y = (rew + cfg.gamma * (1.0 - done) * q_next).astype(np.float32)[:, None]

    critic_params = res.critic.named_parameters()
    with Tape() as tape:
        q = res.critic(_critic_input(obs, Tensor(act[:, None]), bound))
        diff = T.sub(q, Tensor(y))
        c_loss = T.reduce_mean(T.mul(diff, diff))
    T.backward(tape, c_loss, list(critic_params.values()))
    if not np.isfinite(c_loss.data):
        raise NumericError(f"critic loss diverged ({float(c_loss.data)}); last |y| max {np.abs(y).max():.3g}")
    adam_step(critic_params, critic_opt)

    actor_params = actor.net.named_parameters()
    with Tape() as tape:
        a = actor.forward(Tensor(obs))
        a_loss = T.scale(T.reduce_mean(res.critic(_critic_input(obs, a, bound))), -1.0)
    T.backward(tape, a_loss, list(actor_params.values()))
    adam_step(actor_params, actor_opt)

    soft_update(actor.net, res.target_actor, cfg.tau)
    soft_update(res.critic, res.target_critic, cfg.tau)
    return float(c_loss.data), float(a_loss.data)


def build_ddpg(config: EnvConfig, cfg: DDPGConfig) -> DDPGResult:
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    obs_dim = config.state_dim
    actor_net = MLP([obs_dim, *cfg.hidden, 1], np.random.default_rng(seeds[0]))
    critic = MLP([obs_dim + 1, *cfg.hidden, 1], np.random.default_rng(seeds[1]))
    target_actor = MLP([obs_dim, *cfg.hidden, 1], np.random.default_rng(0))
    target_critic = MLP([obs_dim + 1, *cfg.hidden, 1], np.random.default_rng(0))
    _copy_params(actor_net, target_actor)
    _copy_params(critic, target_critic)
    actor = DDPGActor(actor_net, ObsScaler.fit(config), config.action_bound, cfg)
    return DDPGResult(actor, critic, target_actor, target_critic)


def ddpg_train(config: EnvConfig, cfg: DDPGConfig) -> DDPGResult:
    """Train on 1-day windows sampled uniformly from ``config``'s episode range."""
    res = build_ddpg(config, cfg)
    actor = res.actor
    rng_episode, rng_noise, rng_batch = (np.random.default_rng(s)
                                         for s in np.random.SeedSequence([cfg.seed, 7]).spawn(3))
    bound = config.action_bound
    sigma = 0.1 * bound if cfg.sigma is None else cfg.sigma
    ep_len = min(cfg.episode_len, config.episode_len)
    n_starts = config.episode_len - ep_len + 1
    buffer = ReplayBuffer(cfg.replay_capacity, config.state_dim)
    actor_opt = AdamState(lr=cfg.actor_lr)
    critic_opt = AdamState(lr=cfg.critic_lr)
    state = None
    scaler = actor.scaler
    for _ in range(cfg.train_steps):
        if state is None or state.done:
            start = config.episode_start + int(rng_episode.integers(n_starts))
            state = reset(config.replace(episode_start=start, episode_len=ep_len))
        obs = observe(state)
        a = actor(obs)
        if sigma > 0:
            a = a + float(rng_noise.normal(0.0, sigma))
        a = min(max(a, -bound), bound)
        r = step(state, a)
        nxt = observe(state) if not state.done else obs
        buffer.add(scaler(obs), r.action, r.reward, scaler(nxt), state.done)
        if len(buffer) >= cfg.batch_size:
            c_loss, a_loss = ddpg_update(res, buffer.sample(cfg.batch_size, rng_batch), cfg, actor_opt, critic_opt)
            res.critic_losses.append(c_loss)
            res.actor_losses.append(a_loss)
    return res
