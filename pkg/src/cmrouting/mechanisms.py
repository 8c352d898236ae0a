"""Prediction-based coordination mechanisms and their characterization checks.

A mechanism replaces each link latency with a modified ``PiecewiseLatency``
that never undercuts the original.  Links before the last link used by the
optimum at the predicted rate jump, right after their optimal share, to a
common level and follow a flat segment until they meet the original latency.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .model import Flow, Instance, PiecewiseLatency, as_piecewise
from .solvers import (
    DEFAULT_EPSILON,
    EPSILON,
    LIMIT,
    flow_cost,
    nash_latency,
    opt_flow,
    ue_flow,
)

CONSTANT = "constant"
MINCHARGE = "mincharge"
ERRORTOLERANT = "errortolerant"
UNMODIFIED = "unmodified"
KINDS = (CONSTANT, MINCHARGE, ERRORTOLERANT, UNMODIFIED)

CHECK_TOL = 1e-9


@dataclass(frozen=True)
class Mechanism:
    instance: Instance
    r_bar: float
    kind: str
    k_bar: int  # 0-based index of the last link used by the optimum at r_bar
    level: float
    modified: tuple[PiecewiseLatency, ...]
    opt_at_prediction: Flow
    eta_bar: float = 0.0
    mode: str = LIMIT
    epsilon: float = 0.0
    rejoin: tuple[float | None, ...] = field(default=())

    @property
    def L(self) -> float:
        """Largest latency of a used link in the optimum at ``r_bar``."""
        link = self.instance[self.k_bar]
        return link(self.opt_at_prediction[self.k_bar])

    def dominates(self, points_per_link=64) -> bool:
        """Check ``modified(x) >= original(x)`` at breakpoints and a grid."""
        for lat, link in zip(self.modified, self.instance):
            xs = set(lat.xs)
            top = 2.0 * max(lat.xs[-1], self.r_bar, 1.0)
            xs.update(top * t / points_per_link for t in range(points_per_link + 1))
            for x in xs:
                for val in (lat(x), lat.right_limit(x)):
                    if val < link(x) - CHECK_TOL * max(1.0, abs(link(x))):
                        return False
        return True

    def to_dict(self) -> dict:
        return {
            "instance": [{"a": l.a, "b": l.b} for l in self.instance],
            "r_bar": self.r_bar,
            "kind": self.kind,
            "k_bar": self.k_bar,
            "level": self.level,
            "eta_bar": self.eta_bar,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "opt_at_prediction": list(self.opt_at_prediction.per_link),
            "rejoin": list(self.rejoin),
            "modified": [lat.to_dict() for lat in self.modified],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Mechanism":
        inst = Instance([(l["a"], l["b"]) for l in d["instance"]])
        return cls(
            instance=inst,
            r_bar=float(d["r_bar"]),
            kind=d["kind"],
            k_bar=int(d["k_bar"]),
            level=float(d["level"]),
            modified=tuple(PiecewiseLatency.from_dict(m) for m in d["modified"]),
            opt_at_prediction=Flow(d["opt_at_prediction"], float(d["r_bar"])),
            eta_bar=float(d.get("eta_bar", 0.0)),
            mode=d.get("mode", LIMIT),
            epsilon=float(d.get("epsilon", 0.0)),
            rejoin=tuple(d.get("rejoin", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "Mechanism":
        return cls.from_dict(json.loads(text))


def _prediction(instance: Instance, r_bar: float) -> tuple[Flow, int, float]:
    if not instance.is_normalized():
        raise ValueError("mechanisms need a normalized instance (see model.normalize)")
    if not r_bar > 0:
        raise ValueError(f"predicted rate must be positive, got {r_bar}")
    f_bar = opt_flow(instance, r_bar)
    used = [i for i, f in enumerate(f_bar) if f > 0]
    k = used[-1]
    L = instance[k](f_bar[k])
    scan = max(instance[i](f_bar[i]) for i in used)
    assert abs(scan - L) <= 1e-9 * max(1.0, L), (scan, L)
    return f_bar, k, L


def _jump_latency(link, start: float, level: float, mode: str, eps: float):
    """Original latency up to ``start``, then ``level`` until it rejoins."""
    if mode == LIMIT:
        rejoin = (level - link.b) / link.a
        if rejoin <= start:
            return PiecewiseLatency.from_affine(link), None
        bps = ((0.0, link.b, link.a), (start, level, 0.0), (rejoin, level, link.a))
    else:
        rejoin = (level + eps - link.b) / link.a
        bps = (
            (0.0, link.b, link.a),
            (start, level, eps / (rejoin - start)),
            (rejoin, level + eps, link.a),
        )
    return PiecewiseLatency(bps), rejoin


def build_constant(
    instance: Instance,
    r_bar: float,
    c: float,
    mode: str = LIMIT,
    epsilon: float = DEFAULT_EPSILON,
    force: bool = False,
    kind: str = CONSTANT,
    eta_bar: float = 0.0,
) -> Mechanism:
    """Jump every link before ``k(r_bar)`` to ``c`` past its optimal share.

    ``c`` must be at least the largest used-link latency ``L`` at the
    optimum; ``force=True`` skips that floor (only useful to build
    deliberately inconsistent mechanisms).
    """
    if mode not in (LIMIT, EPSILON):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == EPSILON and not epsilon > 0:
        raise ValueError("epsilon mode needs epsilon > 0")
    f_bar, k, L = _prediction(instance, r_bar)
    if c < L - 1e-12 * max(1.0, L) and not force:
        raise ValueError(f"level {c} is below the consistency floor L = {L}")
    modified = []
    rejoin: list[float | None] = []
    for i, link in enumerate(instance):
        if i >= k:
            modified.append(PiecewiseLatency.from_affine(link))
            rejoin.append(None)
            continue
        lat, x = _jump_latency(link, f_bar[i], c, mode, epsilon)
        modified.append(lat)
        rejoin.append(x)
    return Mechanism(
        instance=instance,
        r_bar=float(r_bar),
        kind=kind,
        k_bar=k,
        level=float(c),
        modified=tuple(modified),
        opt_at_prediction=f_bar,
        eta_bar=float(eta_bar),
        mode=mode,
        epsilon=epsilon if mode == EPSILON else 0.0,
        rejoin=tuple(rejoin),
    )


def build_min_charge(instance: Instance, r_bar: float, mode: str = LIMIT,
                     epsilon: float = DEFAULT_EPSILON) -> Mechanism:
    _, _, L = _prediction(instance, r_bar)
    return build_constant(instance, r_bar, L, mode, epsilon, kind=MINCHARGE)


def error_tolerant_level(instance: Instance, r_bar: float, eta_bar: float) -> float:
    """Nash latency of links ``k(r_bar)..m`` carrying ``f*_k + eta_bar``."""
    f_bar, k, _ = _prediction(instance, r_bar)
    suffix = Instance(instance.links[k:])
    return nash_latency(suffix, f_bar[k] + eta_bar)


def build_error_tolerant(instance: Instance, r_bar: float, eta_bar: float, mode: str = LIMIT,
                         epsilon: float = DEFAULT_EPSILON) -> Mechanism:
    if not eta_bar > 0:
        raise ValueError(f"error tolerance must be positive, got {eta_bar}")
    level = error_tolerant_level(instance, r_bar, eta_bar)
    return build_constant(instance, r_bar, level, mode, epsilon, kind=ERRORTOLERANT, eta_bar=eta_bar)


def build_unmodified(instance: Instance, r_bar: float) -> Mechanism:
    """The trivial mechanism that keeps every latency; handy as a baseline."""
    f_bar, k, L = _prediction(instance, r_bar)
    return Mechanism(
        instance=instance,
        r_bar=float(r_bar),
        kind=UNMODIFIED,
        k_bar=k,
        level=L,
        modified=tuple(as_piecewise(instance)),
        opt_at_prediction=f_bar,
        rejoin=(None,) * len(instance),
    )


def build(kind: str, instance: Instance, r_bar: float, eta_bar: float = 0.0, c: float | None = None,
          mode: str = LIMIT, epsilon: float = DEFAULT_EPSILON) -> Mechanism:
    if kind == MINCHARGE:
        return build_min_charge(instance, r_bar, mode, epsilon)
    if kind == ERRORTOLERANT:
        return build_error_tolerant(instance, r_bar, eta_bar, mode, epsilon)
    if kind == CONSTANT:
        if c is None:
            raise ValueError("constant mechanism needs a level c")
        return build_constant(instance, r_bar, c, mode, epsilon)
    if kind == UNMODIFIED:
        return build_unmodified(instance, r_bar)
    raise ValueError(f"unknown mechanism kind {kind!r}")


@dataclass
class LinkCheck:
    link: int
    equal_at_opt: bool
    liminf_ok: bool | None  # None when the condition does not apply to the link
    continuous: bool | None = None

    @property
    def passed(self) -> bool:
        return self.equal_at_opt and self.liminf_ok is not False and self.continuous is not False


@dataclass
class CheckReport:
    name: str
    threshold: float
    links: list[LinkCheck]
    operational: bool
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.operational and all(c.passed for c in self.links)

    def lines(self) -> list[str]:
        out = [f"{self.name}: {'PASS' if self.passed else 'FAIL'} (threshold {self.threshold:.12g})"]
        for c in self.links:
            parts = [f"equal_at_opt={c.equal_at_opt}"]
            if c.liminf_ok is not None:
                parts.append(f"liminf_ok={c.liminf_ok}")
            if c.continuous is not None:
                parts.append(f"continuous={c.continuous}")
            out.append(f"  link {c.link}: " + " ".join(parts))
        out.append(f"  operational: {self.operational}")
        return out


def _close(x: float, y: float) -> bool:
    return abs(x - y) <= CHECK_TOL * max(1.0, abs(x), abs(y))


def _consistent_at_prediction(mech: Mechanism) -> bool:
    flow, _ = ue_flow(mech.modified, mech.r_bar)
    hat = flow_cost(mech.modified, flow)
    opt = flow_cost(mech.instance, mech.opt_at_prediction)
    return _close(hat, opt)


def check_consistent(mech: Mechanism) -> CheckReport:
    """Evaluate both consistency conditions link by link.

    For every link used by the optimum at ``r_bar``: the modified latency
    equals the original at the optimal share, and its right limit there is at
    least ``L``.  Also confirms the equilibrium cost at ``r_bar`` is optimal.
    """
    f_bar = opt_flow(mech.instance, mech.r_bar)
    used = [i for i, f in enumerate(f_bar) if f > 0]
    L = max(mech.instance[i](f_bar[i]) for i in used)
    checks = []
    for i in used:
        lat, link, x = mech.modified[i], mech.instance[i], f_bar[i]
        checks.append(LinkCheck(
            link=i,
            equal_at_opt=_close(lat(x), link(x)),
            liminf_ok=lat.right_limit(x) >= L - CHECK_TOL * max(1.0, L),
        ))
    return CheckReport("consistency", L, checks, _consistent_at_prediction(mech))


def _jump_in(lat: PiecewiseLatency, lo: float, hi: float) -> bool:
    # a jump at the right endpoint leaves the restriction to [lo, hi] continuous
    return any(lo - CHECK_TOL <= p < hi - CHECK_TOL for p in lat.jump_points())


def check_error_tolerant(mech: Mechanism, eta_bar: float | None = None) -> CheckReport:
    """Evaluate the consistency plus error-tolerance conditions for ``eta_bar``.

    The threshold level is the largest used-link latency when the modified
    links ``k..m`` carry ``f*_k + eta_bar``; prefix links must not jump below
    it, and no link may jump on the stretch it traverses while the true rate
    stays within ``eta_bar`` of the prediction.
    """
    if eta_bar is None:
        eta_bar = mech.eta_bar
    if eta_bar < 0:
        raise ValueError("eta_bar must be nonnegative")
    f_bar = opt_flow(mech.instance, mech.r_bar)
    used = [i for i, f in enumerate(f_bar) if f > 0]
    k = used[-1]
    suffix = mech.modified[k:]
    suffix_flow, _ = ue_flow(suffix, f_bar[k] + eta_bar)
    L_hat = max(lat(f) for lat, f in zip(suffix, suffix_flow) if f > 0)
    low_flow, _ = ue_flow(mech.modified, max(mech.r_bar - eta_bar, 0.0))
    checks = []
    for i in range(len(mech.instance)):
        lat, link, x = mech.modified[i], mech.instance[i], f_bar[i]
        if i > k:
            hi = suffix_flow[i - k]
            checks.append(LinkCheck(i, True, None, not _jump_in(lat, x, hi)))
            continue
        equal = _close(lat(x), link(x))
        liminf = None
        if i < k:
            liminf = lat.right_limit(x) >= L_hat - CHECK_TOL * max(1.0, L_hat)
        continuous = not _jump_in(lat, low_flow[i], x)
        if i == k:
            continuous = continuous and not _jump_in(lat, x, suffix_flow[0])
        checks.append(LinkCheck(i, equal, liminf, continuous))
    return CheckReport(
        "error-tolerance",
        L_hat,
        checks,
        _consistent_at_prediction(mech),
        {"eta_bar": eta_bar, "suffix_flow": list(suffix_flow), "low_flow": list(low_flow)},
    )


def load_mechanism(path) -> Mechanism:
    with open(path, encoding="utf-8") as fh:
        return Mechanism.from_json(fh.read())


def plateau_bounds(mech: Mechanism) -> tuple[float, float]:
    """Rates at which the equilibrium level first reaches and then leaves ``level``.

    Between the two every prefix link sits on its flat segment (limit mode).
    The upper rate is infinite when a constant link sits at ``level``.  In
    epsilon mode the plateau is the ramp up to ``level + epsilon``.
    """
    lats = mech.modified
    start = sum(l.lower_inverse(mech.level) for l in lats)
    end = sum(l.upper_inverse(mech.level + mech.epsilon) for l in lats)
    return start, end


def is_active(mech: Mechanism) -> bool:
    return any(x is not None for x in mech.rejoin) and math.isfinite(mech.level)
