"""Engineered price of anarchy: evaluation, sweeps, closed forms and bounds."""
from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .mechanisms import (
    CONSTANT,
    ERRORTOLERANT,
    MINCHARGE,
    UNMODIFIED,
    Mechanism,
    build_constant,
    build_error_tolerant,
    build_min_charge,
    plateau_bounds,
)
from .model import Instance, normalize
from .solvers import LIMIT, flow_cost, opt_flow, ue_flow

BOUND_TOL = 1e-7
PIGOU = 4.0 / 3.0

OVERPREDICT = "overpredict"
IN_TOLERANCE = "in_tolerance"
LEVEL_PLATEAU = "level_plateau"
BEYOND = "beyond_mechanism"

CSV_COLUMNS = ["r", "r_bar", "eta", "nash_cost", "opt_cost", "epoa", "regime", "bound", "bound_satisfied"]


@dataclass(frozen=True)
class EpoaPoint:
    r: float
    r_bar: float
    eta: float  # signed, r - r_bar
    nash_cost: float
    opt_cost: float
    epoa: float
    regime: str
    # set for analytic right limits, which are suprema rather than attained values
    limit: bool = False


@dataclass
class BoundReport:
    bound_name: str
    parameters: dict
    bound_value: float
    observed_value: float
    satisfied: bool = field(init=False)

    def __post_init__(self):
        self.satisfied = self.observed_value <= self.bound_value + BOUND_TOL


def opt_cost(instance: Instance, r: float) -> float:
    return flow_cost(instance, opt_flow(instance, r))


def regime_of(mech: Mechanism, r: float) -> str:
    if r <= mech.r_bar:
        return OVERPREDICT
    if r <= mech.r_bar + mech.eta_bar:
        return IN_TOLERANCE
    _, end = plateau_bounds(mech)
    return LEVEL_PLATEAU if r <= end else BEYOND


def epoa(mech: Mechanism, r: float) -> EpoaPoint:
    """Equilibrium cost under the modified latencies over the original optimum."""
    if not r > 0:
        raise ValueError(f"rate must be positive, got {r}")
    flow, _ = ue_flow(mech.modified, r, mode=mech.mode)
    hat = flow_cost(mech.modified, flow)
    opt = opt_cost(mech.instance, r)
    return EpoaPoint(r, mech.r_bar, r - mech.r_bar, hat, opt, hat / opt, regime_of(mech, r))


def _limit_twin(mech: Mechanism) -> Mechanism:
    if mech.mode == LIMIT:
        return mech
    return build_constant(mech.instance, mech.r_bar, mech.level, LIMIT, force=True,
                          kind=mech.kind, eta_bar=mech.eta_bar)


def plateau_entry(mech: Mechanism) -> EpoaPoint | None:
    """Right limit of the ratio where the equilibrium level first reaches ``level``.

    Just past that rate every flat segment at ``level`` takes a share of the
    extra flow, so all traffic on those links pays ``level``; the limit is
    not attained by any rate and grids would miss it.  ``None`` if the rate
    is not positive.
    """
    twin = _limit_twin(mech)
    level = twin.level
    lats = twin.modified
    below = [l.lower_inverse(level) for l in lats]
    widths = [l.upper_inverse(level) - x for l, x in zip(lats, below)]
    r0 = sum(below)
    if not r0 > 0:
        return None
    unbounded = [math.isinf(w) for w in widths]
    if any(unbounded):
        receivers = unbounded
    else:
        receivers = [w > 0 for w in widths]
    hat = sum(x * (level if rec else l(x)) for l, x, rec in zip(lats, below, receivers))
    opt = opt_cost(mech.instance, r0)
    return EpoaPoint(r0, mech.r_bar, r0 - mech.r_bar, hat, opt, hat / opt, LEVEL_PLATEAU, limit=True)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ROUTING_MECH_THREADS", "1")))
    except ValueError:
        return 1


def _epoa_star(args):
    return epoa(*args)


def epoa_sweep(mech: Mechanism, r_grid: Iterable[float], workers: int | None = None) -> list[EpoaPoint]:
    """Ratio at every grid rate plus the supremum candidates, sorted by rate.

    Candidates are the plateau-entry right limit and the regime boundary rates
    ``r_bar``, ``r_bar + eta_bar`` and the plateau exit.
    """
    grid = [float(r) for r in r_grid]
    if not grid:
        raise ValueError("empty rate grid")
    if any(r <= 0 for r in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("rate grid must be positive and strictly increasing")
    extra = {mech.r_bar, mech.r_bar + mech.eta_bar}
    _, end = plateau_bounds(mech)
    if math.isfinite(end):
        extra.add(end)
    rates = grid + sorted(x for x in extra if x > 0 and x not in grid)
    workers = workers or _workers()
    if workers > 1 and len(rates) > 64:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_epoa_star, [(mech, r) for r in rates], chunksize=32))
    else:
        points = [epoa(mech, r) for r in rates]
    entry = plateau_entry(mech)
    if entry is not None:
        points.append(entry)
    points.sort(key=lambda p: (p.r, p.limit))
    return points


def sweep_max(points: Sequence[EpoaPoint]) -> EpoaPoint:
    return max(points, key=lambda p: p.epoa)


# -- two links normalized to l1(x) = x, l2(x) = a x + b ------------------------


def two_link_opt_cost(a: float, b: float, r: float) -> float:
    if r < b / 2:
        return r * r
    return r * r - (r - b / 2) ** 2 / (a + 1)


def two_link_poa(a: float, b: float, r: float) -> float:
    """Price of anarchy at rate ``r`` for ``l1 = x``, ``l2 = a x + b``."""
    if r < b / 2 or r == 0:
        return 1.0
    den = (a + 1) * r * r - (r - b / 2) ** 2
    if den <= 0:
        return 1.0
    if r < b:
        return (a + 1) * r * r / den
    return (a * r + b) * r / den


def two_link_et_middle_bound(a: float, b: float, eta: float) -> float:
    """Upper bound on the in-tolerance ratio; tight as ``r_bar`` decreases to ``b/2``."""
    den = a * eta * eta + (a + 1) * b * eta + (a + 1) * b * b / 4
    return 1 + a - a * b * (a + 1) * (b / 4 + eta) / den


@dataclass(frozen=True)
class TwoLinkRegimes:
    f1_bar: float
    f2_bar: float
    level: float
    r_low: float  # largest rate whose Nash flow on link 1 stays below f1_bar
    r_high: float  # plateau exit rate


def two_link_et_regimes(a: float, b: float, r_bar: float, eta_bar: float) -> TwoLinkRegimes:
    f1 = (2 * a * r_bar + b) / (2 * (a + 1))
    f2 = r_bar - f1
    level = a * (f2 + eta_bar) + b
    r_low = f1 + max(0.0, (f1 - b) / a) if a > 0 else f1
    r_high = level + (level - b) / a if a > 0 else math.inf
    return TwoLinkRegimes(f1, f2, level, r_low, r_high)


def two_link_et_plateau(a: float, b: float, r_bar: float, eta_bar: float, r: float) -> float:
    """All traffic at the mechanism level over the original optimum."""
    level = a * ((r_bar - b / 2) / (a + 1) + eta_bar) + b
    return r * level / (r * r - (r - b / 2) ** 2 / (a + 1))


def two_link_et_epoa(a: float, b: float, r_bar: float, eta_bar: float, r: float) -> float:
    """Closed-form ratio of the error-tolerant mechanism on two normalized links.

    Regimes: the plain price of anarchy up to ``r_low`` and past the plateau;
    link 1 pinned at its predicted share on ``[r_low, r_bar + eta_bar]``,
    where the ratio is exactly ``1 + a^2 eta^2 / ((a+1) C_opt(r))``; every
    unit at the mechanism level on ``(r_bar + eta_bar, r_high]``.  With a
    constant second link the constant link absorbs all extra traffic.
    """
    if b <= 0:
        warnings.warn("b = 0 merges both links; falling back to the numeric ratio", RuntimeWarning)
        inst, _ = normalize(Instance([(1.0, 0.0), (a, b)]))
        mech = build_error_tolerant(inst, r_bar, eta_bar)
        return epoa(mech, r).epoa
    if r_bar <= b / 2:
        return two_link_poa(a, b, r)
    reg = two_link_et_regimes(a, b, r_bar, eta_bar)
    if r <= reg.r_low:
        return two_link_poa(a, b, r)
    if r <= r_bar + eta_bar:
        eta = r - r_bar
        return 1 + a * a * eta * eta / ((a + 1) * two_link_opt_cost(a, b, r))
    if r <= reg.r_high:
        if a == 0:
            return 1.0
        return two_link_et_plateau(a, b, r_bar, eta_bar, r)
    return two_link_poa(a, b, r)


def two_link_witness(a: float, b: float, eta_bar: float) -> float:
    return (1 + a / b * eta_bar) * (2 * b + 4 * eta_bar) / (b + 4 * eta_bar + 4 * a / (b * (a + 1)) * eta_bar ** 2)


def two_link_et_robustness(a: float, b: float, eta_bar: float) -> tuple[float, dict]:
    """Worst-case ratio ``max(2, 1 + a)`` and the witness at ``r_bar = b/2``."""
    if not b > 0:
        raise ValueError("two-link robustness needs b > 0")
    witness = {
        "r_bar": b / 2,
        "r": b / 2 + eta_bar,
        "value": two_link_witness(a, b, eta_bar),
    }
    return max(2.0, 1.0 + a), witness


# -- many links ----------------------------------------------------------------


def _tolerance_bound(mech: Mechanism, eta: float, beyond: bool = False) -> tuple[str, float, dict]:
    inst = mech.instance
    k = mech.k_bar
    a_k, b_k = inst[k].a, inst[k].b
    a_max = max(inst.slopes)
    params = {"a_max": a_max, "a_k": a_k, "b_k": b_k, "eta": eta, "eta_bar": mech.eta_bar, "k": k}
    robust = 2 + 2 * mech.eta_bar * a_k / b_k if b_k > 0 else math.inf
    if beyond or eta > mech.eta_bar:
        return "beyond_tolerance", robust, params
    if eta == 0:
        return "consistency", 1.0, params
    if a_k == 0:
        # constant link k: the prefix sums are undefined; the all-rate cap still applies
        return "tolerance_robust_cap", robust, params
    prefix = inst.links[: k + 1]
    Lam = sum(1 / l.a for l in prefix)
    Gam = sum(l.b / l.a for l in prefix)
    C = sum((prefix[h].b - prefix[i].b) ** 2 / (prefix[h].a * prefix[i].a)
            for h in range(len(prefix)) for i in range(h)) / (4 * Lam)
    den = eta * eta + Gam * eta - Lam * C
    params.update(Lambda_k=Lam, Gamma_k=Gam, C_k=C, denominator=den)
    bound = 1 + Lam * (a_max + a_k) * eta * eta / den if den > 0 else math.inf
    return "within_tolerance", bound, params


def many_link_bounds(mech: Mechanism, eta: float) -> BoundReport:
    """Compare the observed ratio at ``r_bar + eta`` with the applicable bound.

    ``eta < 0`` uses the 4/3 overprediction cap.  For ``0 <= eta <= eta_bar``
    the bound is ``1 + Lambda_k (a_max + a_k) eta^2 / (eta^2 + Gamma_k eta -
    Lambda_k C_k)``; when that denominator is not positive the bound says
    nothing and is reported as infinite.  Past ``eta_bar`` it is
    ``2 + 2 eta_bar a_k / b_k``.  ``parameters["intermediate"]`` holds the
    sharper ``1 + eta^2 (a_max + a_k) / C_opt(r)`` inside the tolerance.
    """
    r = mech.r_bar + eta
    if not r > 0:
        raise ValueError("r_bar + eta must be positive")
    observed = epoa(mech, r).epoa
    if eta < 0:
        return BoundReport("overprediction", {"eta": eta}, PIGOU, observed)
    name, bound, params = _tolerance_bound(mech, eta)
    if name == "within_tolerance":
        params["intermediate"] = 1 + eta * eta * (params["a_max"] + params["a_k"]) / opt_cost(mech.instance, r)
    return BoundReport(name, params, bound, observed)


def applicable_bound(mech: Mechanism, point: EpoaPoint) -> tuple[str, float] | None:
    """Bound that the ratio at ``point`` must respect, if the mechanism has one.

    Right limits belong to the rates just above them.
    """
    if point.r <= mech.r_bar and not point.limit:
        return "overprediction", PIGOU
    if mech.kind == MINCHARGE or (mech.kind == CONSTANT and math.isclose(mech.level, mech.L, rel_tol=1e-12)):
        return "robustness", 2.0
    if mech.kind == UNMODIFIED:
        return "pigou", PIGOU
    if mech.kind == ERRORTOLERANT:
        beyond = point.limit and point.eta >= mech.eta_bar
        name, bound, _ = _tolerance_bound(mech, point.eta, beyond)
        return name, bound
    return None


def lower_bound_family(delta: float, points: int = 2001, r_max: float = 1.2):
    """Two links ``x`` and ``2x + 2 - 3 delta`` with prediction 1.

    Returns the instance, the prediction and the largest MinCharge ratio over
    ``(1, r_max]`` including the right limit at the prediction; it tends to 2
    as ``delta`` shrinks.
    """
    if not 0 < delta < 2 / 3:
        raise ValueError("delta must lie in (0, 2/3)")
    inst = Instance([(1.0, 0.0), (2.0, 2.0 - 3.0 * delta)])
    mech = build_min_charge(inst, 1.0)
    grid = np.linspace(1.0, r_max, points)[1:]
    best = sweep_max(epoa_sweep(mech, grid, workers=1))
    return inst, 1.0, best.epoa


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def write_sweep_csv(points: Sequence[EpoaPoint], mech: Mechanism, fh) -> bool:
    """Write the sweep CSV; returns False if any bound is violated."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    all_ok = True
    for p in points:
        b = applicable_bound(mech, p)
        if b is None:
            bound, ok = "", ""
        else:
            ok_flag = p.epoa <= b[1] + BOUND_TOL
            all_ok &= ok_flag
            bound, ok = _fmt(float(b[1])), "true" if ok_flag else "false"
        writer.writerow([_fmt(p.r), _fmt(p.r_bar), _fmt(p.eta), _fmt(p.nash_cost), _fmt(p.opt_cost),
                         _fmt(p.epoa), p.regime, bound, ok])
    return all_ok
