"""Vectorised numpy backward pass; bit-identical to the compiled kernel."""

from __future__ import annotations

import numpy as np


def offset_order(kmax: int) -> np.ndarray:
    """0, -1, +1, -2, +2, ... : the tie-break preference over grid offsets."""
    out = [0]
    for k in range(1, kmax + 1):
        out += [-k, k]
    return np.array(out, dtype=np.int64)


def dp_backward(pros, price, feed_in, grid, bound):
    pros = np.ascontiguousarray(pros, dtype=np.float64)
    price = np.ascontiguousarray(price, dtype=np.float64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    T, G = len(pros), len(grid)
    # widest feasible offset over all nodes
    kmax = 0
    for k in range(1, G):
        if np.any(np.abs(grid[k:] - grid[:-k]) <= bound):
            kmax = k
        else:
            break
    offs = offset_order(kmax)
    rows = np.arange(G)
    J = rows[:, None] + offs[None, :]
    valid = (J >= 0) & (J < G)
    Jc = np.clip(J, 0, G - 1)
    dsoe = grid[Jc] - grid[:, None]
    valid &= np.abs(dsoe) <= bound
    V = np.zeros((T + 1, G))
    choice = np.zeros((T, G), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        g = pros[t] + dsoe
        c = np.where(g >= 0, g * price[t], g * feed_in)
        cand = c + V[t + 1][Jc]
        cand[~valid] = np.inf
        best = np.argmin(cand, axis=1)
        V[t] = cand[rows, best]
        choice[t] = offs[best]
    return V, choice
