"""Integer partition counting and the conditioned-probability series.

Exact counts are kept as Python ints throughout (p(n) outgrows 64 bits near
n = 400).  The series sum_{l>=0} p(l) x^(-l), which multiplies the hole factor
in the asymptotic overcrowding probability, is evaluated in log space with a
certified truncation: an explicit n0(k) is computed such that p(n) <= k^n for
all n >= n0 (from the elementary bound p(n) < exp(pi sqrt(2n/3))), after which
the tail is dominated by a geometric series in k/x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .gamma import ConvergenceError

__all__ = [
    "PartitionTable",
    "partition_count",
    "bounded_partition_count",
    "partition_series",
]

# pi^2 * 2/3: p(n) < exp(pi sqrt(2n/3)) <= k^n as soon as n >= _HR_CONST / ln(k)^2
_HR_CONST = math.pi * math.pi * 2.0 / 3.0

_MAX_SERIES_TERMS = 100_000

# growing memo table for the pentagonal recurrence; p(0) = 1
_p_cache: list[int] = [1]


def _extend_cache(n: int) -> None:
    while len(_p_cache) <= n:
        m = len(_p_cache)
        total = 0
        j = 1
        while True:
            g1 = j * (3 * j - 1) // 2
            if g1 > m:
                break
            sign = 1 if j % 2 == 1 else -1
            total += sign * _p_cache[m - g1]
            g2 = j * (3 * j + 1) // 2
            if g2 <= m:
                total += sign * _p_cache[m - g2]
            j += 1
        _p_cache.append(total)


def partition_count(n: int) -> int:
    """Exact number of integer partitions of n, by the pentagonal recurrence."""
    if n != int(n) or n < 0:
        raise ValueError(f"partition_count needs an integer n >= 0, got {n!r}")
    n = int(n)
    _extend_cache(n)
    return _p_cache[n]


@dataclass(frozen=True)
class PartitionTable:
    """Immutable table of exact partition counts p(0..max_n)."""

    max_n: int
    values: tuple[int, ...]

    @classmethod
    def build(cls, max_n: int) -> "PartitionTable":
        if max_n != int(max_n) or max_n < 0:
            raise ValueError(f"PartitionTable needs an integer max_n >= 0, got {max_n!r}")
        max_n = int(max_n)
        _extend_cache(max_n)
        return cls(max_n=max_n, values=tuple(_p_cache[: max_n + 1]))

    def __getitem__(self, n: int) -> int:
        return self.values[n]

    def __len__(self) -> int:
        return self.max_n + 1


def bounded_partition_count(l: int, max_part: int) -> int:
    """Exact number of partitions of l into parts no larger than max_part.

    Equals partition_count(l) whenever l <= max_part.
    """
    if l != int(l) or l < 0:
        raise ValueError(f"bounded_partition_count needs an integer l >= 0, got {l!r}")
    if max_part != int(max_part) or max_part < 1:
        raise ValueError(f"bounded_partition_count needs an integer max_part >= 1, got {max_part!r}")
    l, max_part = int(l), int(max_part)
    counts = [0] * (l + 1)
    counts[0] = 1
    for part in range(1, min(max_part, l) + 1):
        for s in range(part, l + 1):
            counts[s] += counts[s - part]
    return counts[l]


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def partition_series(x: float, rel_tol: float = 1e-12) -> float:
    """log of sum_{l>=0} p(l) x^(-l), truncated with a certified tail bound.

    With k = sqrt(x), every l >= n0 = ceil(_HR_CONST / ln(k)^2) has
    p(l) <= k^l, so the tail beyond L >= n0 - 1 is at most
    (k/x)^(L+1) / (1 - k/x).  Terms are accumulated in log space; the bound
    p(l) <= k^l is additionally re-checked numerically for every summed
    l >= n0 as a guard on the certificate.
    """
    if math.isnan(x) or x <= 1.0:
        raise ValueError(f"partition_series needs x > 1, got {x!r}")
    if not rel_tol > 0.0:
        raise ValueError(f"partition_series needs rel_tol > 0, got {rel_tol!r}")
    if math.isinf(x):
        return 0.0
    log_x = math.log(x)
    log_k = 0.5 * log_x
    n0 = int(math.ceil(_HR_CONST / (log_k * log_k)))
    if n0 > _MAX_SERIES_TERMS:
        raise ConvergenceError(
            f"partition series at x={x} needs more than {_MAX_SERIES_TERMS} certified terms"
        )
    log_ratio = log_k - log_x  # log(k/x) < 0
    log_geom = -math.log1p(-math.exp(log_ratio))  # -log(1 - k/x)
    total = 0.0  # log of the l = 0 term
    l = 0
    while True:
        l += 1
        if l > _MAX_SERIES_TERMS:
            raise ConvergenceError(
                f"partition series at x={x} did not certify within {_MAX_SERIES_TERMS} terms"
            )
        log_p_l = math.log(partition_count(l))
        if l >= n0 and log_p_l > l * log_k + 1e-9:
            raise ConvergenceError(
                f"partition bound p(l) <= k^l failed at l={l}, k={math.exp(log_k)}"
            )
        total = _logaddexp(total, log_p_l - l * log_x)
        if l >= n0 - 1:
            log_tail = (l + 1) * log_ratio + log_geom
            if log_tail <= math.log(rel_tol) + total:
                return total
