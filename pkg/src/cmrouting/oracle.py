"""Brute-force validators on small instances (at most three links).

Nothing here calls the water-filling solvers: optimal flows come from
exhaustive enumeration of a discretized simplex and equilibrium checks from
explicit unilateral deviations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Flow, PiecewiseLatency, as_piecewise

MAX_POINTS = 10**8


@dataclass(frozen=True)
class GridSpec:
    step: float = 1e-3
    max_links: int = 3

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.max_links > 3:
            raise ValueError("the oracle enumerates at most three links")


def _segments(lat: PiecewiseLatency):
    bps = np.asarray(lat.breakpoints, dtype=float)
    return bps[:, 0], bps[:, 1], bps[:, 2]


def evaluate(lat: PiecewiseLatency, x: np.ndarray) -> np.ndarray:
    """Vectorized latency from raw segment arithmetic.

    A point equal to a breakpoint belongs to the segment on its left, which
    is what makes the function lower semicontinuous at upward jumps.
    """
    xs, vs, ss = _segments(lat)
    idx = np.searchsorted(xs, x, side="left") - 1
    idx = np.clip(idx, 0, len(xs) - 1)
    return vs[idx] + ss[idx] * (x - xs[idx])


def _crosscheck(lat: PiecewiseLatency, x: np.ndarray) -> None:
    sample = np.concatenate([np.asarray(lat.xs), x[:: max(1, len(x) // 16)]])
    raw = evaluate(lat, sample)
    ref = np.array([lat(float(v)) for v in sample])
    assert np.allclose(raw, ref, rtol=1e-12, atol=1e-12), "latency evaluation disagrees"


def lipschitz_bound(latencies, r: float) -> float:
    """Bound on the per-unit cost change when flow on [0, r] moves between links."""
    lats = as_piecewise(latencies)
    return max(lat(r) + r * max(lat.slopes) for lat in lats)


def grid_opt(instance_or_latencies, r: float, grid: GridSpec = GridSpec()) -> tuple[Flow, float]:
    """Minimum-cost flow over ``{f : f_i in h*Z>=0, sum f_i = r}`` by enumeration."""
    lats = as_piecewise(instance_or_latencies)
    m = len(lats)
    if m == 0:
        raise ValueError("no links")
    if m > grid.max_links:
        raise ValueError(f"{m} links exceeds the oracle limit of {grid.max_links}")
    h = grid.step
    n = int(round(r / h))
    if abs(n * h - r) > 1e-9 * max(1.0, r):
        raise ValueError(f"rate {r} is not a multiple of the grid step {h}")
    points = math.comb(n + m - 1, m - 1)
    if points > MAX_POINTS:
        raise ValueError(f"{points} grid points exceed the guard of {MAX_POINTS}")

    cols = _simplex(n, m)
    cost = np.zeros(len(cols[0]))
    for lat, c in zip(lats, cols):
        x = c * h
        _crosscheck(lat, x)
        cost += x * evaluate(lat, x)
    best = int(np.argmin(cost))
    flows = [float(c[best] * h) for c in cols]
    return Flow(flows, float(n * h)), float(cost[best])


def grid_equilibrium_check(latencies, flow, grid: GridSpec = GridSpec()) -> bool:
    """True iff no user gains more than ``h * max_slope`` by moving ``h`` units.

    For each ordered pair ``(i, j)`` with ``f_i >= h`` the mover's current
    latency on ``i`` is compared with the latency of ``j`` after it absorbs
    ``h`` more units.
    """
    lats = as_piecewise(latencies)
    f = np.asarray(flow.per_link if isinstance(flow, Flow) else flow, dtype=float)
    if len(f) != len(lats):
        raise ValueError("latency and flow dimensions differ")
    h = grid.step
    max_slope = max(max(lat.slopes) for lat in lats)
    tol = h * max_slope + 1e-12
    here = np.array([evaluate(lat, np.array([fi]))[0] for lat, fi in zip(lats, f)])
    there = np.array([evaluate(lat, np.array([fi + h]))[0] for lat, fi in zip(lats, f)])
    for i in range(len(lats)):
        if f[i] < h - 1e-12:
            continue
        for j in range(len(lats)):
            if j != i and there[j] < here[i] - tol * max(1.0, abs(here[i])):
                return False
    return True


def _simplex(n: int, m: int) -> list[np.ndarray]:
    units = np.arange(n + 1)
    if m == 1:
        return [np.array([n])]
    if m == 2:
        return [units, n - units]
    i, j = np.meshgrid(units, units, indexing="ij")
    keep = i + j <= n
    i, j = i[keep], j[keep]
    return [i, j, n - i - j]


def grid_epoa(mechanism, r: float, grid: GridSpec = GridSpec()) -> float:
    """Brute-force engineered ratio: worst grid equilibrium cost over grid optimum.

    Enumerates the simplex, keeps every point that passes the deviation test
    of :func:`grid_equilibrium_check`, and divides the largest modified cost
    among them by :func:`grid_opt`.  Only meaningful away from rates where the
    equilibrium cost jumps.
    """
    lats = list(mechanism.modified)
    m = len(lats)
    if m > grid.max_links:
        raise ValueError(f"{m} links exceeds the oracle limit of {grid.max_links}")
    _, opt = grid_opt(mechanism.instance, r, grid)
    h = grid.step
    n = int(round(r / h))
    cols = _simplex(n, m)
    xs = [c * h for c in cols]
    here = [evaluate(lat, x) for lat, x in zip(lats, xs)]
    there = [evaluate(lat, x + h) for lat, x in zip(lats, xs)]
    tol = h * max(max(lat.slopes) for lat in lats) + 1e-12
    ok = np.ones(len(cols[0]), dtype=bool)
    for i in range(m):
        others = [there[j] for j in range(m) if j != i]
        if not others:
            break
        best_other = np.min(np.vstack(others), axis=0)
        gain = best_other < here[i] - tol * np.maximum(1.0, np.abs(here[i]))
        ok &= ~((xs[i] >= h - 1e-12) & gain)
    cost = sum(x * v for x, v in zip(xs, here))
    return float(np.max(cost[ok])) / opt
