"""Parallel-link instances, flows and piecewise-affine latencies.

An instance is an ordered list of affine links ``l(x) = a*x + b``.  Most of
the package expects a *normalized* instance: intercepts strictly increasing,
equal-intercept links merged, and at most one constant link.
"""
from __future__ import annotations

import bisect
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MERGE_TOL = 1e-12
FLOW_TOL = 1e-9


class InstanceError(ValueError):
    """Raised for instances that violate the affine-link invariants."""


@dataclass(frozen=True)
class AffineLatency:
    a: float
    b: float

    def __call__(self, x: float) -> float:
        return self.a * x + self.b

    def marginal(self, x: float) -> float:
        return 2.0 * self.a * x + self.b

    @property
    def is_constant(self) -> bool:
        return self.a == 0.0


@dataclass(frozen=True)
class Instance:
    links: tuple[AffineLatency, ...]

    def __init__(self, links: Iterable[AffineLatency | Sequence[float]]):
        conv = []
        for link in links:
            if not isinstance(link, AffineLatency):
                a, b = link
                link = AffineLatency(float(a), float(b))
            conv.append(link)
        object.__setattr__(self, "links", tuple(conv))

    def __len__(self) -> int:
        return len(self.links)

    def __iter__(self):
        return iter(self.links)

    def __getitem__(self, i):
        return self.links[i]

    @property
    def slopes(self) -> list[float]:
        return [link.a for link in self.links]

    @property
    def intercepts(self) -> list[float]:
        return [link.b for link in self.links]

    def as_pairs(self) -> list[tuple[float, float]]:
        return [(link.a, link.b) for link in self.links]

    def is_normalized(self) -> bool:
        bs = self.intercepts
        if any(b2 - b1 <= MERGE_TOL for b1, b2 in zip(bs, bs[1:])):
            return False
        return sum(link.is_constant for link in self.links) <= 1

    def to_json(self) -> str:
        return json.dumps({"links": [{"a": l.a, "b": l.b} for l in self.links]})

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return parse_instance(text)


@dataclass(frozen=True)
class Flow:
    """Per-link flow amounts routing ``rate`` units of traffic."""

    per_link: tuple[float, ...]
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "per_link", tuple(float(f) for f in self.per_link))
        if any(f < -FLOW_TOL for f in self.per_link):
            raise ValueError(f"negative link flow in {self.per_link}")
        if abs(sum(self.per_link) - self.rate) > FLOW_TOL * max(1.0, abs(self.rate)):
            raise ValueError(
                f"link flows sum to {sum(self.per_link)!r}, expected rate {self.rate!r}"
            )

    def __len__(self) -> int:
        return len(self.per_link)

    def __getitem__(self, i):
        return self.per_link[i]

    def __iter__(self):
        return iter(self.per_link)


@dataclass(frozen=True)
class PiecewiseLatency:
    """Nondecreasing, lower-semicontinuous piecewise-affine latency on [0, inf).

    ``breakpoints`` holds ``(x_start, value_at_start, slope)`` triples.  Segment
    ``j`` covers ``(x_j, x_{j+1}]`` (the first one also contains 0) and the last
    is unbounded.  ``value_at_start`` is the right limit at ``x_j``; the value
    *at* ``x_j`` is the left limit taken from the previous segment, so upward
    jumps leave the function lower semicontinuous.
    """

    breakpoints: tuple[tuple[float, float, float], ...]
    xs: tuple[float, ...] = field(init=False, repr=False, compare=False)
    starts: tuple[float, ...] = field(init=False, repr=False, compare=False)
    ends: tuple[float, ...] = field(init=False, repr=False, compare=False)
    slopes: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bps = tuple((float(x), float(v), float(s)) for x, v, s in self.breakpoints)
        if not bps:
            raise ValueError("PiecewiseLatency needs at least one segment")
        if bps[0][0] != 0.0:
            raise ValueError("first breakpoint must start at x = 0")
        for x, v, s in bps:
            if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(s)):
                raise ValueError("breakpoints must be finite")
            if s < 0:
                raise ValueError(f"negative slope {s} at x = {x}")
        ends = []
        for (x0, v0, s0), (x1, v1, _) in zip(bps, bps[1:]):
            if x1 <= x0:
                raise ValueError("breakpoint x values must be strictly increasing")
            end = v0 + s0 * (x1 - x0)
            if v1 < end - 1e-12 * max(1.0, abs(end)):
                raise ValueError(f"downward jump at x = {x1}")
            ends.append(end)
        ends.append(math.inf if bps[-1][2] > 0 else bps[-1][1])
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "xs", tuple(b[0] for b in bps))
        object.__setattr__(self, "starts", tuple(b[1] for b in bps))
        object.__setattr__(self, "slopes", tuple(b[2] for b in bps))
        object.__setattr__(self, "ends", tuple(ends))

    @classmethod
    def from_affine(cls, link: AffineLatency) -> "PiecewiseLatency":
        return cls(((0.0, link.b, link.a),))

    def _seg_right_end(self, j: int) -> float:
        return self.xs[j + 1] if j + 1 < len(self.xs) else math.inf

    def __call__(self, x: float) -> float:
        # segment j owns (x_j, x_{j+1}]
        j = max(bisect.bisect_left(self.xs, x) - 1, 0)
        return self.starts[j] + self.slopes[j] * (x - self.xs[j])

    def right_limit(self, x: float) -> float:
        """``liminf`` of the latency as the argument decreases to ``x``."""
        j = bisect.bisect_right(self.xs, x) - 1
        return self.starts[j] + self.slopes[j] * (x - self.xs[j])

    def jump_points(self) -> list[float]:
        out = []
        for j in range(1, len(self.xs)):
            if self.starts[j] > self.ends[j - 1] + 1e-12 * max(1.0, abs(self.ends[j - 1])):
                out.append(self.xs[j])
        return out

    def flat_segments(self) -> list[tuple[float, float, float]]:
        """``(x_start, x_end, level)`` for every zero-slope segment."""
        return [
            (self.xs[j], self._seg_right_end(j), self.starts[j])
            for j in range(len(self.xs))
            if self.slopes[j] == 0.0
        ]

    def levels(self) -> set[float]:
        return set(self.starts) | {e for e in self.ends if math.isfinite(e)}

    def upper_inverse(self, level: float) -> float:
        """``sup{x : l(x) <= level}``; 0 when even ``l(0)`` exceeds ``level``."""
        j = bisect.bisect_right(self.starts, level) - 1
        if j < 0:
            return 0.0
        return self._invert_in(j, level)

    def lower_inverse(self, level: float) -> float:
        """``sup{x : l(x) < level}``, the left limit of :meth:`upper_inverse`."""
        j = bisect.bisect_left(self.starts, level) - 1
        if j < 0:
            return 0.0
        return self._invert_in(j, level)

    def _invert_in(self, j: int, level: float) -> float:
        end = self._seg_right_end(j)
        s = self.slopes[j]
        if s == 0.0:
            return end
        return min(self.xs[j] + (level - self.starts[j]) / s, end)

    def to_dict(self) -> dict:
        return {"breakpoints": [list(b) for b in self.breakpoints]}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLatency":
        return cls(tuple(tuple(b) for b in d["breakpoints"]))


def as_piecewise(latencies) -> list[PiecewiseLatency]:
    """Coerce an Instance or a sequence of latencies to PiecewiseLatency."""
    out = []
    for lat in latencies:
        if isinstance(lat, PiecewiseLatency):
            out.append(lat)
        elif isinstance(lat, AffineLatency):
            out.append(PiecewiseLatency.from_affine(lat))
        else:
            a, b = lat
            out.append(PiecewiseLatency.from_affine(AffineLatency(float(a), float(b))))
    return out


def validate(instance: Instance) -> list[str]:
    violations = []
    if len(instance.links) == 0:
        violations.append("empty instance")
    for i, link in enumerate(instance.links):
        if not (math.isfinite(link.a) and math.isfinite(link.b)):
            violations.append(f"link {i}: non-finite coefficient")
            continue
        if link.a < 0:
            violations.append(f"link {i}: negative slope a={link.a}")
        if link.b < 0:
            violations.append(f"link {i}: negative intercept b={link.b}")
    return violations


def _check(instance: Instance) -> None:
    violations = validate(instance)
    if violations:
        raise InstanceError("; ".join(violations))


def _merge_slopes(a1: float, a2: float) -> float:
    if a1 == 0.0 or a2 == 0.0:
        return 0.0
    return a1 * a2 / (a1 + a2)


def normalize(instance: Instance) -> tuple[Instance, list[tuple[int, ...]]]:
    """Sort by intercept, merge equal-intercept links, keep one constant link.

    Returns the normalized instance and a merge log: entry ``j`` lists the
    original indices folded into output link ``j``.  Original links absent
    from the log (costlier duplicate constant links) never carry flow.
    """
    _check(instance)
    order = sorted(range(len(instance)), key=lambda i: (instance[i].b, instance[i].a, i))

    groups: list[list[int]] = []
    for i in order:
        if groups and instance[i].b - instance[groups[-1][0]].b <= MERGE_TOL:
            groups[-1].append(i)
        else:
            groups.append([i])

    links: list[AffineLatency] = []
    log: list[tuple[int, ...]] = []
    seen_constant = False
    for group in groups:
        a = instance[group[0]].a
        for i in group[1:]:
            a = _merge_slopes(a, instance[i].a)
        b = instance[group[0]].b
        if a == 0.0:
            if seen_constant:
                continue
            seen_constant = True
            # only a constant member carries flow in a group at a constant level
            group = [i for i in group if instance[i].a == 0.0]
        links.append(AffineLatency(a, b))
        log.append(tuple(group))
    return Instance(links), log


def unmerge_flow(flow: Flow, merge_log: Sequence[Sequence[int]], original: Instance) -> Flow:
    """Express a flow on a normalized instance on the original links.

    A merged link's flow is split in inverse proportion to slopes, the unique
    split that equalizes the members' latencies.
    """
    out = [0.0] * len(original)
    for j, members in enumerate(merge_log):
        fj = flow[j]
        constants = [i for i in members if original[i].a == 0.0]
        if constants:
            out[constants[0]] = fj
            continue
        weights = [1.0 / original[i].a for i in members]
        total = sum(weights)
        for i, w in zip(members, weights):
            out[i] = fj * w / total
    return Flow(out, flow.rate)


def normalize_two_link(instance: Instance) -> Instance:
    """Rescale a two-link instance to ``l1(x) = x``, ``l2(x) = a*x + b``.

    With ``a = a2/a1`` and ``b = (b2 - b1)/a1`` the Nash and optimal flow
    vectors are unchanged.
    """
    _check(instance)
    if len(instance) != 2:
        raise InstanceError(f"expected two links, got {len(instance)}")
    first, second = sorted(instance.links, key=lambda l: (l.b, l.a))
    if first.a == 0.0:
        raise InstanceError("first link is constant; two-link rescaling undefined")
    return Instance([(1.0, 0.0), (second.a / first.a, (second.b - first.b) / first.a)])


_A_KEY = re.compile(r'"a"\s*:')


def _line_of_link(text: str, index: int) -> int | None:
    for n, m in enumerate(_A_KEY.finditer(text)):
        if n == index:
            return text.count("\n", 0, m.start()) + 1
    return None


def _reject_constant(name: str):
    raise InstanceError(f"non-finite number {name!r} is not allowed")


def parse_instance(text: str) -> Instance:
    """Parse ``{"links": [{"a": ..., "b": ...}, ...]}`` and validate it."""
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("links"), list):
        raise InstanceError('expected an object with a "links" array')
    links = []
    for i, entry in enumerate(doc["links"]):
        where = _line_of_link(text, i)
        ctx = f" (line {where})" if where else ""
        if not isinstance(entry, dict) or "a" not in entry or "b" not in entry:
            raise InstanceError(f"links[{i}]{ctx}: expected an object with keys 'a' and 'b'")
        a, b = entry["a"], entry["b"]
        for key, val in (("a", a), ("b", b)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise InstanceError(f"links[{i}].{key}{ctx}: not a number: {val!r}")
        links.append(AffineLatency(float(a), float(b)))
    inst = Instance(links)
    violations = validate(inst)
    if violations:
        msgs = []
        for v in violations:
            m = re.match(r"link (\d+):", v)
            where = _line_of_link(text, int(m.group(1))) if m else None
            msgs.append(v + (f" (line {where})" if where else ""))
        raise InstanceError("; ".join(msgs))
    return inst


def load_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())
