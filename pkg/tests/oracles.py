"""Independent reference implementations used to check the library."""

from __future__ import annotations

import math
import random
from fractions import Fraction

from uxinspect.core import HeuristicId, RawIssue

# Pairs whose exact cosine lies this close to a threshold are numerically
# ambiguous in floating point; instance generators redraw such cases.
AMBIGUITY = 1e-9


def exact_cosine(a, b) -> float:
    """Cosine from exact rational dot products; only the final sqrt is inexact."""
    fa = [Fraction(x) for x in a]
    fb = [Fraction(x) for x in b]
    dot = sum(x * y for x, y in zip(fa, fb))
    na = sum(x * x for x in fa)
    nb = sum(y * y for y in fb)
    mag = math.sqrt(float(dot * dot / (na * nb)))
    return mag if dot >= 0 else -mag


def oracle_partition(vectors, threshold) -> list[list[int]]:
    """Connected components by repeated reachability search over an adjacency matrix."""
    n = len(vectors)
    adj = [[i != j and exact_cosine(vectors[i], vectors[j]) >= threshold for j in range(n)] for i in range(n)]
    seen: set[int] = set()
    parts = []
    for start in range(n):
        if start in seen:
            continue
        comp, stack = {start}, [start]
        while stack:
            k = stack.pop()
            for j in range(n):
                if adj[k][j] and j not in comp:
                    comp.add(j)
                    stack.append(j)
        seen |= comp
        parts.append(sorted(comp))
    return parts


def random_vectors(rng: random.Random, thresholds) -> list[list[float]]:
    """Up to 12 nonzero vectors of dimension 2-16 with no pair ambiguously close to a threshold.

    Vectors are drawn around a few shared centres so that groups actually form.
    """
    while True:
        dim = rng.randint(2, 16)
        n = rng.randint(0, 12)
        centres = [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(rng.randint(1, 4))]
        spread = rng.choice([0.1, 0.4, 1.0])
        vecs = []
        for _ in range(n):
            c = rng.choice(centres)
            vecs.append([x + rng.gauss(0, spread) for x in c])
        if any(all(x == 0 for x in v) for v in vecs):
            continue
        sims = [exact_cosine(vecs[i], vecs[j]) for i in range(n) for j in range(i + 1, n)]
        if all(abs(s - t) > AMBIGUITY for s in sims for t in thresholds):
            return vecs


def raw_issues(n: int, rng: random.Random, scenario_id: str = "rand/scenario") -> list[RawIssue]:
    return [
        RawIssue(scenario_id, HeuristicId(rng.randint(1, 10)), f"issue {i}", f"fix {i}") for i in range(n)
    ]


def malformed_order(rng: random.Random) -> tuple[list, int]:
    """A ranking answer with duplicates, out-of-range, truncated or over-long content."""
    n = rng.randint(1, 12)
    base = list(range(n))
    rng.shuffle(base)
    kind = rng.choice(["duplicates", "out_of_range", "truncated", "over_long", "mixed"])
    order: list = list(base)
    if kind in ("duplicates", "mixed"):
        for _ in range(rng.randint(1, 3)):
            order[rng.randrange(len(order))] = rng.choice(base)
    if kind in ("out_of_range", "mixed"):
        for _ in range(rng.randint(1, 3)):
            order.insert(rng.randint(0, len(order)), rng.choice([-1, n, n + rng.randint(1, 50), -rng.randint(2, 9)]))
    if kind in ("truncated", "mixed"):
        order = order[: rng.randint(0, max(0, len(order) - 1))]
    if kind in ("over_long", "mixed"):
        order += [rng.randint(-3, n + 3) for _ in range(rng.randint(1, 6))]
    return order, n


def is_permutation(order, n: int) -> bool:
    return sorted(order) == list(range(n)) and all(type(i) is int for i in order)
