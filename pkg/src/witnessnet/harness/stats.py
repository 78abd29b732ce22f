"""Summary statistics and correlation coefficients for answer tables."""

from __future__ import annotations

import math
from typing import Sequence


class StatsError(ValueError):
    pass


def mean(values: Sequence[float]) -> float:
    if not values:
        raise StatsError("mean of an empty sequence")
    return math.fsum(values) / len(values)


def median(values: Sequence[float]) -> float:
    if not values:
        raise StatsError("median of an empty sequence")
    s = sorted(values)
    mid = len(s) // 2
    if len(s) % 2:
        return float(s[mid])
    return (s[mid - 1] + s[mid]) / 2


def _check_pair(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise StatsError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise StatsError("correlation needs at least two points")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    _check_pair(x, y)
    mx, my = mean(x), mean(y)
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise StatsError("correlation undefined for zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def has_ties(values: Sequence[float]) -> bool:
    return len(set(values)) != len(values)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    _check_pair(x, y)
    try:
        return pearson(average_ranks(x), average_ranks(y))
    except StatsError as exc:
        raise StatsError("rank correlation undefined for constant ranks") from exc


def ordinal_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties broken by position."""
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    ranks = [0.0] * len(values)
    for rank, i in enumerate(order, start=1):
        ranks[i] = float(rank)
    return ranks


def spearman_ordinal(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation that ignores ties (first occurrence ranks lower)."""
    _check_pair(x, y)
    return pearson(ordinal_ranks(x), ordinal_ranks(y))
