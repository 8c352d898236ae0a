import numpy as np
import pytest

from cmrouting.mechanisms import build_error_tolerant, build_min_charge
from cmrouting.model import Instance, PiecewiseLatency, as_piecewise
from cmrouting.oracle import (
    GridSpec,
    evaluate,
    grid_epoa,
    grid_equilibrium_check,
    grid_opt,
    lipschitz_bound,
)
from cmrouting.analysis import epoa
from cmrouting.solvers import nash_flow

TWO = Instance([(1, 0), (1, 1)])
PIGOU = Instance([(1, 0), (0, 1)])


def test_grid_opt_examples():
    assert grid_opt(TWO, 2.0)[1] == pytest.approx(2.875, abs=5e-3)
    assert grid_opt(PIGOU, 1.0)[1] == pytest.approx(0.75, abs=2e-3)
    flow, cost = grid_opt(Instance([(2, 1)]), 1.5)
    assert list(flow) == [1.5] and cost == pytest.approx(6.0)


def test_grid_opt_guards():
    with pytest.raises(ValueError):
        grid_opt(Instance([(1, 0)] * 4), 1.0)
    with pytest.raises(ValueError):
        grid_opt(TWO, 1.0005)
    with pytest.raises(ValueError):
        GridSpec(step=0)
    with pytest.raises(ValueError):
        grid_opt(Instance([(1, 0)] * 3), 100.0, GridSpec(step=1e-4))


def test_equilibrium_check_examples():
    assert grid_equilibrium_check(TWO, nash_flow(TWO, 2.0))
    assert not grid_equilibrium_check(TWO, [2.0, 0.0])
    assert grid_equilibrium_check(TWO, [0.0, 0.0])


def test_evaluate_uses_left_value_at_jumps():
    lat = PiecewiseLatency(((0.0, 0.0, 1.0), (1.25, 1.75, 0.0), (1.75, 1.75, 1.0)))
    xs = np.array([0.0, 1.25, 1.3, 1.75, 2.0])
    assert evaluate(lat, xs).tolist() == [lat(x) for x in xs]


def test_lipschitz_bound():
    assert lipschitz_bound(TWO, 2.0) == pytest.approx(3.0 + 2.0)


def test_grid_epoa_agrees_with_solver_away_from_jumps():
    mech = build_min_charge(TWO, 2.0)
    for r in (1.0, 2.2, 3.0):
        assert grid_epoa(mech, r, GridSpec(step=1e-3)) == pytest.approx(epoa(mech, r).epoa, abs=2e-3)
    et = build_error_tolerant(Instance([(1, 0), (2, 1), (1, 2)]), 2.0, 0.5)
    assert grid_epoa(et, 2.3, GridSpec(step=1e-2)) == pytest.approx(epoa(et, 2.3).epoa, abs=2e-2)


def test_mechanism_latencies_pass_through():
    mech = build_min_charge(TWO, 2.0)
    assert as_piecewise(mech.modified) == list(mech.modified)
