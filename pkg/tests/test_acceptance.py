"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import itertools
import math

import numpy as np

from corpus import corpus
from cmrouting.analysis import (
    epoa,
    epoa_sweep,
    lower_bound_family,
    many_link_bounds,
    plateau_entry,
    sweep_max,
    two_link_et_epoa,
    two_link_poa,
    two_link_witness,
)
from cmrouting.mechanisms import (
    build_error_tolerant,
    build_min_charge,
    build_unmodified,
    is_active,
    plateau_bounds,
)
from cmrouting.model import Instance, normalize, normalize_two_link
from cmrouting.oracle import GridSpec, grid_equilibrium_check, grid_opt, lipschitz_bound
from cmrouting.solvers import flow_cost, nash_flow, opt_cost_closed_form, opt_flow, ue_flow

CORPUS = corpus(1000)
ETA_BARS = (0.01, 0.1, 1.0, 10.0)


def _eta_bar(i):
    return ETA_BARS[i % len(ETA_BARS)]


def _upper_rate(mech):
    _, end = plateau_bounds(mech)
    top = end if math.isfinite(end) else mech.r_bar + mech.eta_bar
    return 1.5 * max(top, mech.r_bar) + 1.0


def test_consistency(report):
    worst = 0.0
    for i, (inst, r_bar) in enumerate(CORPUS):
        for mech in (build_min_charge(inst, r_bar), build_error_tolerant(inst, r_bar, _eta_bar(i))):
            worst = max(worst, abs(epoa(mech, r_bar).epoa - 1.0))
    assert report(1, "consistency", worst <= 1e-9, f"max |epoa(r_bar, r_bar) - 1| = {worst:.3g}")


def test_min_charge_two_robust(report):
    worst = 0.0
    for inst, r_bar in CORPUS:
        mech = build_min_charge(inst, r_bar)
        top = _upper_rate(mech)
        worst = max(worst, sweep_max(epoa_sweep(mech, np.linspace(top / 100, top, 100), workers=1)).epoa)
    _, _, lower = lower_bound_family(1e-3)
    ok = worst <= 2 + 1e-7 and lower >= 1.99
    assert report(2, "2-robustness", ok, f"corpus max epoa = {worst:.9f}, lower-bound family = {lower:.6f}")


def test_overprediction_cap(report):
    worst = 0.0
    for i, (inst, r_bar) in enumerate(CORPUS):
        grid = np.linspace(r_bar / 50, r_bar, 50)
        for mech in (build_min_charge(inst, r_bar), build_error_tolerant(inst, r_bar, _eta_bar(i))):
            worst = max(worst, max(epoa(mech, r).epoa for r in grid))
    pigou = Instance([(1, 0), (0, 1)])
    numeric = flow_cost(pigou, nash_flow(pigou, 1.0)) / flow_cost(pigou, opt_flow(pigou, 1.0))
    unmodified = epoa(build_unmodified(pigou, 1.0), 1.0).epoa
    pigou_err = max(abs(numeric - 4 / 3), abs(unmodified - 4 / 3), abs(two_link_poa(0, 1, 1) - 4 / 3))
    ok = worst <= 4 / 3 + 1e-7 and pigou_err <= 1e-9
    assert report(3, "overprediction cap", ok, f"max epoa for r <= r_bar = {worst:.9f}, Pigou error = {pigou_err:.3g}")


def test_closed_forms(report):
    cost_err = 0.0
    for inst, r_bar in CORPUS:
        for r in np.linspace(0, 2 * r_bar, 100):
            direct = flow_cost(inst, opt_flow(inst, r))
            cost_err = max(cost_err, abs(opt_cost_closed_form(inst, r) - direct) / max(1.0, direct))

    poa_err = et_err = 0.0
    for a, b in itertools.product((0.0, 0.1, 0.5, 1.0, 3.0, 9.0), (0.2, 1.0, 4.0)):
        inst, _ = normalize(Instance([(1, 0), (a, b)]))
        plain = build_unmodified(inst, 1.0)
        for r in np.linspace(0.01, 4 * b + 6, 60):
            poa_err = max(poa_err, abs(two_link_poa(a, b, r) - epoa(plain, r).epoa))
        for r_bar, eta_bar in itertools.product((0.3 * b, 0.5 * b, 0.55 * b, b, 2 * b, 6.0), (0.05, 0.5, 2.0)):
            mech = build_error_tolerant(inst, r_bar, eta_bar)
            for r in np.linspace(0.01, r_bar + eta_bar + 4 * b + 6, 60):
                et_err = max(et_err, abs(two_link_et_epoa(a, b, r_bar, eta_bar, r) - epoa(mech, r).epoa))

    cor_err = 0.0
    for a, b in itertools.product((0.0, 0.5, 1.0, 2.0, 7.0), (0.5, 1.0, 3.0)):
        target = 1 + 1 / (4 * a + 3)
        plain = build_unmodified(normalize(Instance([(1, 0), (a, b)]))[0], 1.0)
        cor_err = max(cor_err, abs(two_link_poa(a, b, b) - target), abs(epoa(plain, b).epoa - target))

    ok = cost_err <= 1e-9 and poa_err <= 1e-6 and et_err <= 1e-6 and cor_err <= 1e-9
    detail = f"opt cost {cost_err:.3g}, poa {poa_err:.3g}, error-tolerant {et_err:.3g}, peak at r=b {cor_err:.3g}"
    assert report(4, "closed forms", ok, detail)


def test_two_link_robustness(report):
    match_err = 0.0
    excess = -math.inf
    for a, b in itertools.product((0.1, 0.5, 1.0, 2.0, 5.0, 10.0), (0.5, 1.0, 3.0)):
        inst, _ = normalize(Instance([(1, 0), (a, b)]))
        cap = max(2.0, 1.0 + a)
        for eta_bar in (0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0):
            # the witness is the limit r_bar -> b/2 from above; at b/2 itself link 2 is unused
            mech = build_error_tolerant(inst, b / 2 * (1 + 1e-10), eta_bar)
            top = _upper_rate(mech)
            sup = sweep_max(epoa_sweep(mech, np.linspace(top / 200, top, 200), workers=1)).epoa
            match_err = max(match_err, abs(sup - two_link_witness(a, b, eta_bar)))
            excess = max(excess, sup - cap)
            for r_bar in (0.75 * b, 2 * b):
                other = build_error_tolerant(inst, r_bar, eta_bar)
                top = _upper_rate(other)
                s = sweep_max(epoa_sweep(other, np.linspace(top / 100, top, 100), workers=1)).epoa
                excess = max(excess, s - cap)
    ok = match_err <= 1e-6 and excess <= 1e-7
    assert report(5, "two-link robustness", ok, f"witness error {match_err:.3g}, max excess over cap {excess:.3g}")


def test_many_link_bounds(report):
    checked = vacuous = failures = 0
    for i, (inst, r_bar) in enumerate(CORPUS):
        eta_bar = _eta_bar(i)
        mech = build_error_tolerant(inst, r_bar, eta_bar)
        etas = [eta_bar * t for t in (0.1, 0.3, 0.6, 1.0, 1.5, 3.0, 10.0)]
        for eta in etas:
            rep = many_link_bounds(mech, eta)
            if eta > eta_bar and rep.parameters["b_k"] == 0:
                continue
            checked += 1
            vacuous += math.isinf(rep.bound_value)
            failures += not rep.satisfied
        entry = plateau_entry(mech)
        k_link = inst[mech.k_bar]
        if entry is not None and k_link.b > 0:
            checked += 1
            failures += entry.epoa > 2 + 2 * eta_bar * k_link.a / k_link.b + 1e-7
    ok = failures == 0
    assert report(6, "many-link bounds", ok, f"{checked} points, {failures} violations, {vacuous} vacuous")


def _max_step(mech, lo, hi, step):
    n = int(round((hi - lo) / step))
    grid = np.linspace(lo, hi, n + 1)
    values = [epoa(mech, r).epoa for r in grid if r > 0]
    return max(abs(x - y) for x, y in zip(values, values[1:]))


def test_error_tolerance_continuity(report):
    eta_bar = 0.25
    steps = (1e-2, 1e-3, 1e-4)
    worst_ratio = 0.0
    min_jump = math.inf
    used = 0
    for inst, r_bar in corpus(200, seed=7):
        mc = build_min_charge(inst, r_bar)
        if not is_active(mc):
            continue
        et = build_error_tolerant(inst, r_bar, eta_bar)
        lo, hi = max(r_bar - eta_bar, 0.0), r_bar + eta_bar
        smooth = [_max_step(et, lo, hi, s) for s in steps]
        jumpy = [_max_step(mc, lo, hi, s) for s in steps]
        for coarse, fine in zip(smooth, smooth[1:]):
            if coarse > 1e-12:
                worst_ratio = max(worst_ratio, fine / coarse)
        min_jump = min(min_jump, min(jumpy) / max(jumpy))
        used += 1
        if used == 8:
            break
    # linear scaling means each tenfold refinement cuts the largest step about tenfold
    ok = used == 8 and worst_ratio <= 0.2 and min_jump >= 0.9
    detail = f"{used} instances, worst step ratio per refinement {worst_ratio:.3f}, MinCharge jump retained {min_jump:.3f}"
    assert report(7, "error-tolerance continuity", ok, detail)


def test_oracle_equivalence(report):
    rng = np.random.default_rng(99)
    spec = GridSpec(step=1e-2)
    cost_fail = eq_fail = 0
    for _ in range(50):
        m = int(rng.integers(1, 4))
        inst, _ = normalize(Instance(list(zip(rng.uniform(0.05, 10, m).tolist(), rng.uniform(0, 10, m).tolist()))))
        r_bar = round(float(rng.uniform(0.1, 5)), 2)
        r = round(float(rng.uniform(0.1, 5)), 2)
        _, grid_cost = grid_opt(inst, r, spec)
        exact = flow_cost(inst, opt_flow(inst, r))
        cost_fail += abs(grid_cost - exact) > lipschitz_bound(inst, r) * spec.step
        for lats in (inst, build_min_charge(inst, r_bar).modified, build_error_tolerant(inst, r_bar, 0.5).modified):
            for rate in (r, r_bar):
                flow, _ = ue_flow(lats, rate)
                eq_fail += not grid_equilibrium_check(lats, flow, spec)
    ok = cost_fail == 0 and eq_fail == 0
    assert report(8, "oracle equivalence", ok, f"{cost_fail} cost mismatches, {eq_fail} equilibrium rejections")


def test_normalization(report):
    rng = np.random.default_rng(5)
    cost_err = 0.0
    for _ in range(300):
        m = int(rng.integers(1, 7))
        a = rng.choice([0.0, 0.5, 1.0, 2.0, 3.0], m)
        b = rng.choice([0.0, 1.0, 2.0, 2.5], m)
        original = Instance(list(zip(a.tolist(), b.tolist())))
        merged, _ = normalize(original)
        for r in (0.0, 0.7, 3.0, 11.0):
            for solve in (opt_flow, nash_flow):
                c0 = flow_cost(original, solve(original, r))
                c1 = flow_cost(merged, solve(merged, r))
                cost_err = max(cost_err, abs(c0 - c1) / max(1.0, c0))
    flow_err = 0.0
    for _ in range(300):
        (a1, a2), (b1, b2) = rng.uniform(0.1, 5, 2), rng.uniform(0, 5, 2)
        original = Instance(sorted([(a1, b1), (a2, b2)], key=lambda p: (p[1], p[0])))
        scaled = normalize_two_link(original)
        for r in (0.3, 1.0, 4.0, 12.0):
            for solve in (opt_flow, nash_flow):
                diff = np.subtract(list(solve(original, r)), list(solve(scaled, r)))
                flow_err = max(flow_err, float(np.max(np.abs(diff))) / r)
    ok = cost_err <= 1e-9 and flow_err <= 1e-12
    assert report(9, "normalization", ok, f"cost error {cost_err:.3g}, two-link flow error {flow_err:.3g}")
