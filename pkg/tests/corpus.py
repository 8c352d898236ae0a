"""Seeded random instances shared by the test modules."""
from __future__ import annotations

import numpy as np

from cmrouting.model import Instance, normalize


def random_instance(rng: np.random.Generator, max_links: int = 6) -> Instance:
    m = int(rng.integers(1, max_links + 1))
    a = rng.uniform(0.0, 10.0, m)
    a = np.where(a == 0.0, 10.0, a)  # uniform is half-open at the top; keep a in (0, 10]
    b = rng.uniform(0.0, 10.0, m)
    inst, _ = normalize(Instance(list(zip(a.tolist(), b.tolist()))))
    return inst


def random_rate(rng: np.random.Generator, high: float = 20.0) -> float:
    return float(high - rng.uniform(0.0, high))  # in (0, high]


def corpus(n: int = 1000, seed: int = 20240601, max_links: int = 6):
    """``n`` pairs of (normalized instance, predicted rate)."""
    rng = np.random.default_rng(seed)
    return [(random_instance(rng, max_links), random_rate(rng)) for _ in range(n)]
