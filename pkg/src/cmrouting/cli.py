"""Command-line front end.

Exit status: 0 on success, 1 when the input is invalid, 2 when a checked
bound or verification fails.
"""
from __future__ import annotations

import argparse
import math
import sys
from contextlib import contextmanager

import numpy as np

from . import analysis, mechanisms, oracle, solvers
from .mechanisms import KINDS, build, check_consistent, check_error_tolerant
from .model import InstanceError, load_instance, normalize, unmerge_flow

OK, INVALID, VIOLATED = 0, 1, 2
_DEFAULT_TOLS = (analysis.BOUND_TOL, mechanisms.CHECK_TOL, solvers.RESIDUAL_TOL)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for failed bounds here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(INVALID, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:points`` with both endpoints included."""
    try:
        start, stop, points = text.split(":")
        start, stop, points = float(start), float(stop), int(points)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like start:stop:points, got {text!r}") from None
    if not start < stop or points < 2:
        raise argparse.ArgumentTypeError("grid needs start < stop and at least 2 points")
    return np.linspace(start, stop, points)


def _positive(text: str) -> float:
    val = float(text)
    if not (val > 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return val


def _nonneg(text: str) -> float:
    val = float(text)
    if not (val >= 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text!r}")
    return val


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _mechanism(args):
    inst, merge_log = normalize(load_instance(args.instance))
    if args.mode == solvers.EPSILON and not args.epsilon > 0:
        raise ValueError("epsilon mode needs --epsilon > 0")
    mech = build(args.mechanism, inst, args.r_bar, eta_bar=args.eta_bar, c=args.c,
                 mode=args.mode, epsilon=args.epsilon)
    return mech, merge_log


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    flow = solvers.opt_flow(inst, args.r) if args.command == "opt" else solvers.nash_flow(inst, args.r)
    print("flow: " + " ".join(_fmt(f) for f in flow))
    print("cost: " + _fmt(solvers.flow_cost(inst, flow)))
    return OK


def cmd_mechanism(args) -> int:
    mech, merge_log = _mechanism(args)
    with _output(args.output) as fh:
        fh.write(mech.to_json(indent=2, sort_keys=True) + "\n")
    if len(merge_log) != len(load_instance(args.instance)):
        print(f"merged links: {merge_log}", file=sys.stderr)
    return OK


def cmd_epoa(args) -> int:
    mech, merge_log = _mechanism(args)
    p = analysis.epoa(mech, args.r)
    flow, _ = solvers.ue_flow(mech.modified, args.r, mode=mech.mode)
    original = unmerge_flow(flow, merge_log, load_instance(args.instance))
    print("flow: " + " ".join(_fmt(f) for f in original))
    for name in ("r", "r_bar", "eta", "nash_cost", "opt_cost", "epoa"):
        print(f"{name}: {_fmt(getattr(p, name))}")
    print(f"regime: {p.regime}")
    return OK


def cmd_sweep(args) -> int:
    mech, _ = _mechanism(args)
    points = analysis.epoa_sweep(mech, args.grid)
    with _output(args.output) as fh:
        ok = analysis.write_sweep_csv(points, mech, fh)
    return OK if ok else VIOLATED


def cmd_robustness(args) -> int:
    mech, _ = _mechanism(args)
    points = analysis.epoa_sweep(mech, args.grid)
    worst = analysis.sweep_max(points)
    entry = analysis.plateau_entry(mech)
    print(f"mechanism: {mech.kind} level={_fmt(mech.level)} k={mech.k_bar}")
    print(f"max epoa: {_fmt(worst.epoa)} at r={_fmt(worst.r)} ({worst.regime}{', right limit' if worst.limit else ''})")
    if entry is not None:
        print(f"plateau entry limit: {_fmt(entry.epoa)} at r={_fmt(entry.r)}")
    violated = 0
    for p in points:
        b = analysis.applicable_bound(mech, p)
        if b is not None and p.epoa > b[1] + analysis.BOUND_TOL:
            violated += 1
            print(f"VIOLATION {b[0]}: epoa {_fmt(p.epoa)} > {_fmt(b[1])} at r={_fmt(p.r)}")
    print(f"bound violations: {violated}")
    return OK if violated == 0 else VIOLATED


def cmd_verify(args) -> int:
    mech, _ = _mechanism(args)
    reports = [check_consistent(mech)]
    if mech.kind == mechanisms.ERRORTOLERANT or args.eta_bar > 0:
        reports.append(check_error_tolerant(mech, args.eta_bar))
    for rep in reports:
        print("\n".join(rep.lines()))
    return OK if all(rep.passed for rep in reports) else VIOLATED


def cmd_lowerbound(args) -> int:
    print("delta,estimate")
    for d in args.delta:
        _, _, est = analysis.lower_bound_family(d)
        print(f"{_fmt(d)},{_fmt(est)}")
    return OK


def cmd_closedform(args) -> int:
    a, b = args.a, args.b
    print(f"# poa at r=b: {_fmt(analysis.two_link_poa(a, b, b))}")
    cols = ["r", "poa"]
    if args.r_bar is not None:
        cols.append("et_epoa")
    with _output(args.output) as fh:
        fh.write(",".join(cols) + "\n")
        for r in args.grid:
            row = [_fmt(r), _fmt(analysis.two_link_poa(a, b, r))]
            if args.r_bar is not None:
                row.append(_fmt(analysis.two_link_et_epoa(a, b, args.r_bar, args.eta_bar, r)))
            fh.write(",".join(row) + "\n")
    return OK


def cmd_oracle_check(args) -> int:
    inst = load_instance(args.instance)
    spec = oracle.GridSpec(step=args.step)
    _, grid_cost = oracle.grid_opt(inst, args.r, spec)
    exact = solvers.flow_cost(inst, solvers.opt_flow(inst, args.r))
    allowed = oracle.lipschitz_bound(inst, args.r) * args.step
    cost_ok = abs(grid_cost - exact) <= allowed
    flow, _ = solvers.ue_flow(inst, args.r)
    eq_ok = oracle.grid_equilibrium_check(inst, flow, spec)
    print(f"opt cost: solver={_fmt(exact)} grid={_fmt(grid_cost)} diff={_fmt(abs(grid_cost - exact))} allowed={_fmt(allowed)}")
    print(f"equilibrium check: {'PASS' if eq_ok else 'FAIL'}")
    return OK if cost_ok and eq_ok else VIOLATED


def _add_mechanism_args(p, needs_r=False, needs_grid=False):
    p.add_argument("--instance", required=True)
    p.add_argument("--r-bar", type=_positive, required=True)
    p.add_argument("--mechanism", choices=KINDS, default=mechanisms.MINCHARGE)
    p.add_argument("--eta-bar", type=_nonneg, default=0.0)
    p.add_argument("--c", type=float, default=None, help="level for the constant mechanism")
    p.add_argument("--mode", choices=(solvers.LIMIT, solvers.EPSILON), default=solvers.LIMIT)
    p.add_argument("--epsilon", type=float, default=solvers.DEFAULT_EPSILON)
    if needs_r:
        p.add_argument("--r", type=_positive, required=True)
    if needs_grid:
        p.add_argument("--grid", type=parse_grid, required=True, help="start:stop:points, inclusive")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmrouting", description=__doc__.splitlines()[0])
    bound_tol, check_tol, residual_tol = _DEFAULT_TOLS
    parser.add_argument("--bound-tol", type=_nonneg, default=bound_tol)
    parser.add_argument("--check-tol", type=_nonneg, default=check_tol)
    parser.add_argument("--residual-tol", type=_nonneg, default=residual_tol)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("opt", "nash"):
        p = sub.add_parser(name, help=f"{name} flow and its cost")
        p.add_argument("--instance", required=True)
        p.add_argument("--r", type=_nonneg, required=True)
        p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mechanism", help="build a mechanism and write it as JSON")
    _add_mechanism_args(p)
    p.add_argument("--output")
    p.set_defaults(func=cmd_mechanism)

    p = sub.add_parser("epoa", help="ratio at one rate")
    _add_mechanism_args(p, needs_r=True)
    p.set_defaults(func=cmd_epoa)

    p = sub.add_parser("sweep", help="CSV of the ratio over a rate grid")
    _add_mechanism_args(p, needs_grid=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("robustness", help="sweep plus supremum candidates against bounds")
    _add_mechanism_args(p, needs_grid=True)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("verify", help="consistency and error-tolerance checks")
    _add_mechanism_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("lowerbound", help="ratios on the near-2 two-link family")
    p.add_argument("--delta", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("closedform", help="two-link formula table for l1=x, l2=ax+b")
    p.add_argument("--a", type=_nonneg, required=True)
    p.add_argument("--b", type=_nonneg, required=True)
    p.add_argument("--r-bar", type=_positive)
    p.add_argument("--eta-bar", type=_positive, default=1.0)
    p.add_argument("--grid", type=parse_grid, required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_closedform)

    p = sub.add_parser("oracle-check", help="brute-force oracle against the solvers")
    p.add_argument("--instance", required=True)
    p.add_argument("--r", type=_nonneg, required=True)
    p.add_argument("--step", type=_positive, default=1e-3)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    analysis.BOUND_TOL = args.bound_tol
    mechanisms.CHECK_TOL = args.check_tol
    solvers.RESIDUAL_TOL = args.residual_tol
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: cannot read {exc.filename}", file=sys.stderr)
    except (InstanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return INVALID


if __name__ == "__main__":
    sys.exit(main())
