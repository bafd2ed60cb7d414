"""Cost-to-Go conditioned Decision Transformer.

Each timestep contributes three tokens in the order (Cost-to-Go, state,
action). Every modality has its own linear embedding, a learned timestep
embedding is added to all three tokens of a timestep, and the 3K-token
sequence runs through post-layer-norm decoder blocks under a strictly
causal mask. The action for timestep t is read from the output at the
state token of t, so it never sees ``A_t`` itself.

Parameter count for ``L`` blocks of width ``d`` with ``ffn_multiplier`` f
and ``max_timestep`` M::

    L * (4d^2 + 4d  +  2 f d^2 + f d + d  +  4d)     attention, FFN, 2 LNs
    + (state_dim + 1) d + 2d + 2d + M d + 2d + 2d + d + 1

which is ``L (12 d^2 + 13 d) + (state_dim + 10 + M) d + 1`` for f = 4.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import Embedding, LayerNorm, Linear, Module
from ..autodiff.tensor import Tensor
from ..env import state_dim as _state_dim
from ..errors import ShapeError

DEFAULT_CONTEXT = 96
DEFAULT_MAX_TIMESTEP = 1344  # one 4-week evaluation episode

# (n_layers, n_heads, d_model)
SIZES = {
    "tiny": (1, 1, 64),
    "mini": (2, 2, 128),
    "small": (3, 1, 128),
    "medium": (8, 2, 256),
    "large": (12, 4, 512),
}


@dataclass
class DTConfig:
    n_layers: int
    n_heads: int
    d_model: int
    context_length: int = DEFAULT_CONTEXT
    state_dim: int = _state_dim(24)
    ffn_multiplier: int = 4
    dropout: float = 0.1
    max_timestep: int = DEFAULT_MAX_TIMESTEP

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "context_length", "state_dim", "ffn_multiplier",
                     "max_timestep"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"DTConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def from_size(cls, size: str, **kw) -> "DTConfig":
        if size not in SIZES:
            raise ValueError(f"unknown size {size!r}; choose from {sorted(SIZES)}")
        n_layers, n_heads, d_model = SIZES[size]
        return cls(n_layers=n_layers, n_heads=n_heads, d_model=d_model, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def closed_form_params(cfg: DTConfig) -> int:
    d, f, L = cfg.d_model, cfg.ffn_multiplier, cfg.n_layers
    attn = 4 * (d * d + d)
    ffn = (d * f * d + f * d) + (f * d * d + d)
    block = attn + ffn + 2 * (2 * d)
    embed = (cfg.state_dim * d + d) + (d + d) + (d + d) + cfg.max_timestep * d + 2 * d
    head = 2 * d + (d + 1)
    return L * block + embed + head


class SelfAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor, B: int, N: int) -> Tensor:
        dh = x.shape[-1] // self.n_heads
        return T.transpose(T.reshape(x, (B, N, self.n_heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, blocked: np.ndarray, p_drop: float, rng) -> Tensor:
        B, N, d = x.shape
        dh = d // self.n_heads
        q = self._split(self.q(x), B, N)
        k = self._split(self.k(x), B, N)
        v = self._split(self.v(x), B, N)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        att = T.softmax_lastdim(T.masked_fill(scores, blocked, -np.inf))
        att = T.dropout(att, p_drop, rng)
        ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (B, N, d))
        return self.o(ctx)


class Block(Module):
    """Post-LN decoder block: ``LN(x + attn(x))`` then ``LN(x + ffn(x))``."""

    def __init__(self, d: int, n_heads: int, ffn_multiplier: int, rng: np.random.Generator):
        self.attn = SelfAttention(d, n_heads, rng)
        self.ln1 = LayerNorm(d)
        self.fc1 = Linear(d, ffn_multiplier * d, rng)
        self.fc2 = Linear(ffn_multiplier * d, d, rng)
        self.ln2 = LayerNorm(d)

    def __call__(self, x: Tensor, blocked: np.ndarray, p_drop: float, rng) -> Tensor:
        x = self.ln1(T.add(x, T.dropout(self.attn(x, blocked, p_drop, rng), p_drop, rng)))
        h = self.fc2(T.relu(self.fc1(x)))
        return self.ln2(T.add(x, T.dropout(h, p_drop, rng)))


class DecisionTransformer(Module):
    def __init__(self, cfg: DTConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.embed_state = Linear(cfg.state_dim, d, rng)
        self.embed_ctg = Linear(1, d, rng)
        self.embed_action = Linear(1, d, rng)
        self.embed_time = Embedding(cfg.max_timestep, d, rng)
        self.embed_ln = LayerNorm(d)
        self.blocks = [Block(d, cfg.n_heads, cfg.ffn_multiplier, rng) for _ in range(cfg.n_layers)]
        self.final_ln = LayerNorm(d)
        self.head = Linear(d, 1, rng)

    def __call__(self, ctg, states, actions, timesteps, valid=None, rng=None) -> Tensor:
        return forward(self, ctg, states, actions, timesteps, valid, rng)


def build_model(cfg: DTConfig, seed: int) -> DecisionTransformer:
    """Seeded init: linear weights U(+-1/sqrt(fan_in)), biases 0, timestep table U(+-1/sqrt(d)), LN (1, 0)."""
    model = DecisionTransformer(cfg, np.random.default_rng(seed))
    return model.eval()


def attention_block_mask(valid: np.ndarray) -> np.ndarray:
    """Boolean ``(B, 1, 3L, 3L)`` mask of blocked (query, key) pairs.

    A key is visible when it is not in the future and its timestep is not
    padding; the diagonal always stays visible so padded rows remain finite.
    """
    B, L = valid.shape
    N = 3 * L
    future = np.triu(np.ones((N, N), dtype=bool), k=1)
    pad_key = ~np.repeat(valid, 3, axis=1)  # (B, N)
    blocked = future[None, :, :] | pad_key[:, None, :]
    blocked[:, np.arange(N), np.arange(N)] = False
    return blocked[:, None, :, :]


def _as_tensor(x, shape_tail: tuple) -> Tensor:
    shape = x.shape if isinstance(x, Tensor) else np.shape(x)
    if int(np.prod(shape[2:], dtype=int)) != int(np.prod(shape_tail, dtype=int)):
        raise ShapeError(f"expected trailing shape {shape_tail}, got {tuple(shape)}")
    if isinstance(x, Tensor):
        return x if x.ndim == 2 + len(shape_tail) else T.reshape(x, x.shape[:2] + shape_tail)
    return Tensor(np.asarray(x).reshape(shape[:2] + shape_tail))


def forward(model: DecisionTransformer, ctg, states, actions, timesteps, valid=None, rng=None) -> Tensor:
    """Standardised action prediction for every timestep of each window.

    ``ctg`` and ``actions`` are ``(B, L)``, ``states`` ``(B, L, state_dim)``,
    ``timesteps`` integer ``(B, L)``. ``valid`` flags real (non-padding)
    timesteps. Inputs may be Tensors, which lets tests differentiate with
    respect to them. ``rng`` enables dropout when the model is in training
    mode. Returns ``(B, L)``.
    """
    cfg = model.cfg
    timesteps = np.asarray(timesteps)
    if timesteps.ndim != 2:
        raise ShapeError(f"timesteps must be (B, L), got {timesteps.shape}")
    B, L = timesteps.shape
    if L > cfg.context_length:
        raise ShapeError(f"window of {L} timesteps exceeds context length {cfg.context_length}")
    if L < 1:
        raise ShapeError("empty window")
    if timesteps.min() < 0 or timesteps.max() >= cfg.max_timestep:
        raise ShapeError(f"timesteps must lie in [0, {cfg.max_timestep}), got [{timesteps.min()}, {timesteps.max()}]")
    s = _as_tensor(states, (cfg.state_dim,))
    if s.shape != (B, L, cfg.state_dim):
        raise ShapeError(f"states must be {(B, L, cfg.state_dim)}, got {s.shape}")
    c = _as_tensor(ctg, (1,))
    a = _as_tensor(actions, (1,))
    if valid is None:
        valid = np.ones((B, L), dtype=bool)
    p_drop = cfg.dropout if (model.training and rng is not None) else 0.0
    drng = rng if p_drop > 0 else None

    d = cfg.d_model
    te = model.embed_time(timesteps)
    toks = [T.add(model.embed_ctg(c), te), T.add(model.embed_state(s), te), T.add(model.embed_action(a), te)]
    x = T.concat([T.reshape(t, (B, L, 1, d)) for t in toks], axis=2)
    x = T.reshape(x, (B, 3 * L, d))
    x = T.dropout(model.embed_ln(x), p_drop, drng)
    blocked = attention_block_mask(np.asarray(valid, dtype=bool))
    for blk in model.blocks:
        x = blk(x, blocked, p_drop, drng)
    x = T.slice_(T.reshape(x, (B, L, 3, d)), (slice(None), slice(None), 1))
    out = model.head(model.final_ln(x))
    return T.reshape(out, (B, L))
