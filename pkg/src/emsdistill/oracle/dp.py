"""Perfect-foresight minimum-cost schedule by dynamic programming on an SoE grid.

The SoE range ``[0, capacity_max]`` is split into ``soe_grid_points`` nodes.
Each slot the battery moves from node ``i`` to any node ``j`` with
``|grid[j] - grid[i]| <= power_max / 2``. Stage cost is the piecewise tariff
on ``prosumption + (grid[j] - grid[i])``; there is no terminal value for
leftover energy. Among equal-cost moves the smaller grid offset wins, then
the discharging one.

Values accumulate back to front (``c_t + V_{t+1}``), the same order the
environment uses for Cost-to-Go, so replaying a schedule reproduces the
optimal value bit for bit.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from ..data import snap_energy
from ..env import EnvConfig, cost_to_go
from ..errors import DataError
from . import _dp_py

DEFAULT_GRID_POINTS = 1025
BRUTE_FORCE_LIMIT = 10 ** 6

dp_backward_python = _dp_py.dp_backward
try:
    from ._dp_kernel import dp_backward as dp_backward_compiled
except ImportError:  # extension not built
    dp_backward_compiled = None

if dp_backward_compiled is not None and os.environ.get("EMSDISTILL_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
    _dp_backward = dp_backward_compiled
else:
    BACKEND = "python"
    _dp_backward = dp_backward_python


@dataclass
class OracleConfig:
    env: EnvConfig
    soe_grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if self.soe_grid_points < 2:
            raise DataError(f"soe_grid_points must be >= 2, got {self.soe_grid_points}")


@dataclass
class Schedule:
    actions: np.ndarray
    soe: np.ndarray
    grid_exchange: np.ndarray
    costs: np.ndarray
    total_cost: float
    grid_points: int
    spacing: float

    def __len__(self):
        return len(self.actions)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "action_kwh", "soe_kwh", "grid_kwh", "cost_eur"])
        for t in range(len(self.actions)):
            w.writerow([t, repr(float(self.actions[t])), repr(float(self.soe[t + 1])),
                        repr(float(self.grid_exchange[t])), repr(float(self.costs[t]))])
        w.writerow(["total", "", repr(float(self.soe[-1])), repr(float(self.grid_exchange.sum())),
                    repr(float(self.total_cost))])
        return buf.getvalue()


def make_grid(capacity: float, points: int) -> np.ndarray:
    """Uniform SoE grid snapped to the energy lattice; endpoints are exact.

    With ``points = 2**k + 1`` the grids are nested under refinement.
    """
    grid = snap_energy(np.arange(points) * float(capacity) / (points - 1))
    grid[0] = 0.0
    grid[-1] = capacity
    return grid


def _problem(cfg: OracleConfig):
    env = cfg.env
    sl = env.episode_slice()
    pros = env.bundle.prosumption[sl].astype(np.float64)
    price = env.bundle.price[sl].astype(np.float64)
    grid = make_grid(env.spec.capacity_max, cfg.soe_grid_points)
    hits = np.nonzero(grid == env.spec.initial_soe)[0]
    if hits.size == 0:
        raise DataError(f"initial SoE {env.spec.initial_soe} is not a node of the {cfg.soe_grid_points}-point grid")
    return pros, price, grid, int(hits[0]), env.action_bound, env.feed_in_tariff


def _schedule_from_nodes(nodes: np.ndarray, pros, price, grid, feed_in, total: float | None,
                         points: int) -> Schedule:
    soe = grid[nodes]
    actions = soe[1:] - soe[:-1]
    g = pros + actions
    costs = np.where(g >= 0, g * price, g * feed_in)
    ctg = cost_to_go(costs)
    total_cost = float(ctg[0]) if len(ctg) else 0.0
    if total is not None and total != total_cost:
        raise AssertionError(f"schedule replay {total_cost!r} != DP value {total!r}")
    spacing = float(grid[1] - grid[0]) if len(grid) > 1 else 0.0
    return Schedule(actions=actions, soe=soe, grid_exchange=g, costs=costs, total_cost=total_cost,
                    grid_points=points, spacing=spacing)


def dp_optimal_schedule(cfg: OracleConfig, backend=None) -> Schedule:
    pros, price, grid, i0, bound, feed_in = _problem(cfg)
    kernel = backend or _dp_backward
    V, choice = kernel(pros, price, feed_in, grid, bound)
    T = len(pros)
    nodes = np.empty(T + 1, dtype=np.int64)
    nodes[0] = i0
    for t in range(T):
        j = nodes[t] + choice[t, nodes[t]]
        if not 0 <= j < len(grid):
            raise DataError(f"no feasible transition from node {nodes[t]} at step {t}")
        nodes[t + 1] = j
    return _schedule_from_nodes(nodes, pros, price, grid, feed_in, float(V[0, i0]), cfg.soe_grid_points)


def brute_force_schedule(cfg: OracleConfig) -> Schedule:
    """Exhaustive search over all node sequences with the DP's tie-break order.

    Sequences are ranked by (total, key_1, suffix_2, key_2, suffix_3, ...),
    where ``key`` ranks an offset (0, -1, +1, -2, ...) and ``suffix_t`` is the
    back-to-front cost from step t on; this is exactly the order in which
    the DP commits to its choices.
    """
    pros, price, grid, i0, bound, feed_in = _problem(cfg)
    T, G = len(pros), len(grid)
    n = G ** T
    if n > BRUTE_FORCE_LIMIT:
        raise DataError(f"brute force needs grid_points**T <= {BRUTE_FORCE_LIMIT}, got {G}**{T} = {n}")
    idx = np.arange(n)
    seq = np.empty((n, T), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        seq[:, t] = idx % G
        idx //= G
    prev = np.concatenate([np.full((n, 1), i0, dtype=np.int64), seq[:, :-1]], axis=1)
    d = grid[seq] - grid[prev]
    ok = np.all(np.abs(d) <= bound, axis=1)
    seq, prev, d = seq[ok], prev[ok], d[ok]
    g = pros[None, :] + d
    c = np.where(g >= 0, g * price[None, :], g * feed_in)
    suffix = np.empty_like(c)
    acc = np.zeros(len(c))
    for t in range(T - 1, -1, -1):
        acc = c[:, t] + acc
        suffix[:, t] = acc
    off = seq - prev
    key = 2 * np.abs(off) + (off > 0)
    order_keys = []
    for t in range(T):
        if t > 0:
            order_keys.append(suffix[:, t])
        order_keys.append(key[:, t])
    best = np.lexsort(tuple(reversed([suffix[:, 0]] + order_keys)))[0]
    nodes = np.concatenate([[i0], seq[best]])
    return _schedule_from_nodes(nodes, pros, price, grid, feed_in, float(suffix[best, 0]), cfg.soe_grid_points)


def lower_bound_cost(config: EnvConfig, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    """Optimal cost on the discretised action set (a lower bound for grid-aligned policies)."""
    return dp_optimal_schedule(OracleConfig(config, grid_points)).total_cost


def grid_gap_bound(config: EnvConfig, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    """Reported slack for comparing the grid oracle with continuous policies.

    ``max_t max(|price_t|, feed_in) * grid_spacing * T``.
    """
    sl = config.episode_slice()
    spread = float(max(np.abs(config.bundle.price[sl]).max(), abs(config.feed_in_tariff)))
    spacing = config.spec.capacity_max / (grid_points - 1)
    return spread * spacing * config.episode_len
