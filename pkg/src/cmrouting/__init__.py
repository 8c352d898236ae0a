"""Prediction-based coordination mechanisms for selfish routing on parallel links."""
from .analysis import (
    BoundReport,
    EpoaPoint,
    epoa,
    epoa_sweep,
    lower_bound_family,
    many_link_bounds,
    plateau_entry,
    two_link_et_epoa,
    two_link_et_robustness,
    two_link_poa,
)
from .mechanisms import (
    Mechanism,
    build,
    build_constant,
    build_error_tolerant,
    build_min_charge,
    check_consistent,
    check_error_tolerant,
)
from .model import AffineLatency, Flow, Instance, InstanceError, PiecewiseLatency, normalize, parse_instance
from .solvers import flow_cost, nash_flow, opt_cost_closed_form, opt_flow, ue_flow

__all__ = [
    "AffineLatency", "BoundReport", "EpoaPoint", "Flow", "Instance", "InstanceError", "Mechanism",
    "PiecewiseLatency", "build", "build_constant", "build_error_tolerant", "build_min_charge",
    "check_consistent", "check_error_tolerant", "epoa", "epoa_sweep", "flow_cost", "lower_bound_family",
    "many_link_bounds", "nash_flow", "normalize", "opt_cost_closed_form", "opt_flow", "parse_instance",
    "plateau_entry", "two_link_et_epoa", "two_link_et_robustness", "two_link_poa", "ue_flow",
]
