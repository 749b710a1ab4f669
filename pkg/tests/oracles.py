"""Independent reference computations used by the tests.

Nothing here calls into ``levsim.clearing``; excess demand is rewritten from the
model equations with numpy so it can check the bisection solver.
"""

from __future__ import annotations

import numpy as np


def excess_demand_grid(prices, xi, N, V, funds, p_prev, a, b, r_b, threshold):
    """Vectorised excess demand.

    ``funds`` holds tuples ``(beta, cap, W_prev, D_prev, C_prev, r_perf_prev)``.
    """
    p = np.asarray(prices, dtype=np.float64)
    total = xi / p
    m = V - p
    for beta, cap, W, D, C, rp in funds:
        r = D * (p - p_prev) / W if W > 0 else np.zeros_like(p)
        perf = (1 - a) * rp + a * r
        value = D * p + C
        flow = np.where(value > 0, np.maximum(b * (perf - r_b) * value, -value), 0.0)
        w = W + (p - p_prev) * D + flow
        alive = (w >= threshold) & (w > 0)
        linear = beta * m * w / p
        capped = cap * w / p
        demand = np.where(m >= cap / beta, capped, linear)
        demand = np.where((m > 0) & alive, demand, 0.0)
        total = total + demand
    return total - N


def sign_change_cells(f, lo, hi, coarse, fine):
    """Left edges of fine grid cells ``[q, q + fine]`` where ``f`` changes sign.

    Scans ``[lo, hi]`` at step ``coarse`` and refines every coarse cell that
    changes sign at step ``fine``.
    """
    grid = np.arange(lo, hi + coarse, coarse)
    vals = f(grid)
    pos = vals > 0
    idx = np.nonzero(pos[:-1] != pos[1:])[0]
    cells = []
    for i in idx:
        g = np.arange(grid[i], grid[i + 1] + fine, fine)
        v = f(g) > 0
        j = np.nonzero(v[:-1] != v[1:])[0]
        cells.extend(g[j].tolist())
    return np.array(cells)


def pareto_sample(alpha: float, n: int, seed: int) -> np.ndarray:
    """Exact Pareto(alpha) draws on [1, inf) by inverse-CDF sampling."""
    u = np.random.default_rng(seed).random(n)
    return (1.0 - u) ** (-1.0 / alpha)
