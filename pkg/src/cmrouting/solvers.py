"""Exact water-filling solvers for affine and piecewise-affine parallel links."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

from .model import AffineLatency, Flow, Instance, PiecewiseLatency, as_piecewise, validate

LIMIT = "limit"
EPSILON = "epsilon"
DEFAULT_EPSILON = 1e-9
# residuals below this (relative to the rate) are float noise, not flow
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class ActiveSetCoefficients:
    """Water-filling state for one rate.

    ``k`` is the index of the last active link (0-based).  ``lambda_or_L`` is
    the common marginal cost (optimum) or common latency (Nash).  ``Lambda_k``,
    ``Gamma_k`` and ``C_k`` are taken over the strictly increasing active links;
    ``capped`` is set when a constant link is active and fixes the level.
    """

    k: int
    lambda_or_L: float
    Lambda_k: float
    Gamma_k: float
    C_k: float
    capped: bool = False


def _sorted_order(instance: Instance) -> list[int]:
    return sorted(range(len(instance)), key=lambda i: (instance[i].b, instance[i].a, i))


def _check_inputs(instance: Instance, r: float) -> None:
    if r < 0 or not math.isfinite(r):
        raise ValueError(f"rate must be a finite nonnegative number, got {r}")
    if len(instance) == 0:
        raise ValueError("empty instance")
    violations = validate(instance)
    if violations:
        raise ValueError("; ".join(violations))


def _pair_constant(links: Sequence[AffineLatency], Lam: float) -> float:
    total = 0.0
    for h in range(len(links)):
        for i in range(h):
            d = links[h].b - links[i].b
            total += d * d / (links[h].a * links[i].a)
    return total / (4.0 * Lam)


def _water_fill(instance: Instance, r: float, factor: float):
    """Equalize ``factor*a_i*f_i + b_i`` over the cheapest links.

    ``factor`` is 2 for marginal costs (optimum) and 1 for latencies (Nash).
    Returns ``(flows, level, k, Lambda, Gamma, capped)`` with ``k`` an index
    into the original link order.
    """
    _check_inputs(instance, r)
    order = _sorted_order(instance)
    flows = [0.0] * len(instance)
    if r == 0:
        first = order[0]
        return flows, instance[first].b, first, 0.0, 0.0, False
    Lam = Gam = 0.0
    used: list[int] = []
    for pos, i in enumerate(order):
        link = instance[i]
        if link.a == 0.0:
            level = link.b
            for j in used:
                flows[j] = (level - instance[j].b) / (factor * instance[j].a)
            flows[i] = max(r - sum(flows[j] for j in used), 0.0)
            return flows, level, i, Lam, Gam, True
        Lam += 1.0 / link.a
        Gam += link.b / link.a
        used.append(i)
        level = (factor * r + Gam) / Lam
        nxt = instance[order[pos + 1]].b if pos + 1 < len(order) else math.inf
        if level <= nxt:
            break
    for j in used:
        flows[j] = max((level - instance[j].b) / (factor * instance[j].a), 0.0)
    # rounding in `level` is amplified by 1/a on shallow links; one Newton step along
    # the positive-flow links (weights 1/a keep their marginal costs equal) removes it
    pos = [j for j in used if flows[j] > 0]
    gap = r - sum(flows)
    if gap and pos:
        inv = sum(1.0 / instance[j].a for j in pos)
        for j in pos:
            flows[j] = max(flows[j] + gap / (instance[j].a * inv), 0.0)
        level += factor * gap / inv
    # a zero-flow tie at the boundary is not "active"
    k = used[-1]
    while flows[k] == 0.0 and len(used) > 1:
        used.pop()
        k = used[-1]
    return flows, level, k, Lam, Gam, False


def opt_flow(instance: Instance, r: float) -> Flow:
    """Minimum-cost flow: equal marginal costs ``2 a_i f_i + b_i`` on used links."""
    flows, *_ = _water_fill(instance, r, 2.0)
    return Flow(flows, r)


def nash_flow(instance: Instance, r: float) -> Flow:
    """Wardrop flow: equal latencies on used links, unused links no cheaper."""
    flows, *_ = _water_fill(instance, r, 1.0)
    return Flow(flows, r)


def nash_latency(instance: Instance, r: float) -> float:
    """Common latency of the used links in the Nash flow at rate ``r``."""
    flows, level, *_ = _water_fill(instance, r, 1.0)
    return level


def active_set(instance: Instance, r: float, kind: str = "opt") -> ActiveSetCoefficients:
    factor = {"opt": 2.0, "nash": 1.0}[kind]
    flows, level, k, Lam, Gam, capped = _water_fill(instance, r, factor)
    active = [instance[i] for i in _sorted_order(instance) if flows[i] > 0 and instance[i].a > 0]
    if not active:
        return ActiveSetCoefficients(k, level, 0.0, 0.0, 0.0, capped)
    Lam = sum(1.0 / l.a for l in active)
    Gam = sum(l.b / l.a for l in active)
    return ActiveSetCoefficients(k, level, Lam, Gam, _pair_constant(active, Lam), capped)


def opt_cost_closed_form(instance: Instance, r: float) -> float:
    """Optimal cost as ``(r^2 + r*Gamma_k)/Lambda_k - C_k`` over the active prefix.

    Raises ``ValueError`` when a constant link is active at ``r``; use
    :func:`flow_cost` on :func:`opt_flow` there instead.
    """
    if r == 0:
        _check_inputs(instance, r)
        return 0.0
    coef = active_set(instance, r, "opt")
    if coef.capped:
        raise ValueError("constant link active; closed form not applicable")
    return (r * r + r * coef.Gamma_k) / coef.Lambda_k - coef.C_k


def flow_cost(latencies, flow) -> float:
    """Total latency ``sum_i f_i * l_i(f_i)``."""
    lats = latencies.links if isinstance(latencies, Instance) else latencies
    per_link = flow.per_link if isinstance(flow, Flow) else flow
    if len(lats) != len(per_link):
        raise ValueError("latency and flow dimensions differ")
    return sum(f * lat(f) for lat, f in zip(lats, per_link) if f != 0.0)


@dataclass(frozen=True)
class _UEState:
    level: float
    below: list[float]  # x_i(level-)
    at: list[float]  # x_i(level)
    total_below: float
    total_at: float


def _total(lats: Sequence[PiecewiseLatency], level: float, lower: bool) -> float:
    if lower:
        return sum(l.lower_inverse(level) for l in lats)
    return sum(l.upper_inverse(level) for l in lats)


def ue_state(latencies, level: float) -> _UEState:
    lats = as_piecewise(latencies)
    below = [l.lower_inverse(level) for l in lats]
    at = [l.upper_inverse(level) for l in lats]
    return _UEState(level, below, at, sum(below), sum(at))


def _distribute(state: _UEState, residual: float) -> list[float]:
    widths = [hi - lo for lo, hi in zip(state.below, state.at)]
    flows = list(state.below)
    unbounded = [i for i, w in enumerate(widths) if math.isinf(w)]
    if unbounded:
        for i in unbounded:
            flows[i] += residual / len(unbounded)
        return flows
    total = sum(widths)
    for i, w in enumerate(widths):
        if w > 0:
            flows[i] += residual * w / total
    return flows


def _ue_level(lats: Sequence[PiecewiseLatency], r: float):
    levels = sorted(set().union(*(l.levels() for l in lats)))
    totals_at = {}

    def t_at(c):
        if c not in totals_at:
            totals_at[c] = _total(lats, c, lower=False)
        return totals_at[c]

    lo, hi = 0, len(levels)
    while lo < hi:
        mid = (lo + hi) // 2
        if t_at(levels[mid]) >= r:
            hi = mid
        else:
            lo = mid + 1
    idx = lo
    if idx == len(levels):
        # above every breakpoint level: all last segments are sloped
        c = levels[-1]
        inv_slope = sum(1.0 / l.slopes[-1] for l in lats)
        return c + (r - t_at(c)) / inv_slope, False
    c = levels[idx]
    below = _total(lats, c, lower=True)
    tol = RESIDUAL_TOL * max(1.0, r)
    if below >= r - tol:
        if idx == 0:
            return c, True
        prev = levels[idx - 1]
        t_prev = t_at(prev)
        span = below - t_prev
        if span <= 0:
            return c, True
        lam = prev + (r - t_prev) * (c - prev) / span
        if lam >= c:
            return c, True
        return lam, False
    return c, True


def ue_flow(latencies, r: float, mode: str = LIMIT) -> tuple[Flow, float]:
    """User equilibrium under nondecreasing lower-semicontinuous latencies.

    Finds the smallest level ``lam`` with ``sum_i x_i(lam) >= r`` where
    ``x_i(lam) = sup{x : l_i(x) <= lam}``, sweeping the finitely many segment
    levels and solving exactly on the affine piece in between.  Flow that
    lands on flat segments at ``lam`` is split in proportion to their widths
    (an unbounded constant link takes all of it).  In ``epsilon`` mode the
    latencies must be strictly increasing apart from constant links.
    """
    lats = as_piecewise(latencies)
    if r < 0 or not math.isfinite(r):
        raise ValueError(f"rate must be a finite nonnegative number, got {r}")
    if not lats:
        raise ValueError("no links")
    if mode not in (LIMIT, EPSILON):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == EPSILON:
        for i, l in enumerate(lats):
            for x0, x1, _ in l.flat_segments():
                if math.isfinite(x1):
                    raise ValueError(f"link {i} has a flat segment on [{x0}, {x1}] in epsilon mode")
    if r == 0:
        return Flow([0.0] * len(lats), 0.0), min(l.starts[0] for l in lats)
    lam, at_level = _ue_level(lats, r)
    if not at_level:
        return Flow(_flows_at(lats, lam, r), r), lam
    state = ue_state(lats, lam)
    residual = r - state.total_below
    if residual <= RESIDUAL_TOL * max(1.0, r):
        return Flow(state.below, r), lam
    return Flow(_distribute(state, residual), r), lam



def _flows_at(lats: Sequence[PiecewiseLatency], lam: float, r: float) -> list[float]:
    """Flows ``x_i(lam)`` nudged so they sum to ``r``.

    Near-flat segments (epsilon mode) have inverse slopes around 1/eps, so
    the float error in ``lam`` is amplified; one Newton step along the links
    that are strictly inside a sloped segment removes it.
    """
    flows = []
    weights = []
    for l in lats:
        x = l.upper_inverse(lam)
        flows.append(x)
        j = bisect.bisect_right(l.starts, lam) - 1
        s = l.slopes[j] if j >= 0 else 0.0
        inside = j >= 0 and s > 0 and x < l._seg_right_end(j)
        weights.append(1.0 / s if inside else 0.0)
    gap = r - sum(flows)
    total = sum(weights)
    if gap != 0.0 and total > 0:
        flows = [max(f + gap * w / total, 0.0) for f, w in zip(flows, weights)]
    return flows
