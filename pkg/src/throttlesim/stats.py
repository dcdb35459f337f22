"""Small statistics helpers shared by the simulator, controllers and reports."""

import math


class NoData(Exception):
    """Raised when a statistic is requested over an empty sample."""


class Undefined(Exception):
    """Raised when a statistic is mathematically undefined (e.g. zero variance)."""


def percentile(latencies, p):
    """Nearest-rank percentile: the value at rank ``ceil(p * n)`` of the sorted sample."""
    if not 0 < p <= 1:
        raise ValueError(f"percentile fraction must be in (0, 1], got {p}")
    n = len(latencies)
    if n == 0:
        raise NoData("percentile of an empty sample")
    ordered = sorted(latencies)
    rank = math.ceil(p * n)
    return ordered[max(rank, 1) - 1]


def median(values):
    """Median; even-length samples average the two middle values."""
    n = len(values)
    if n == 0:
        raise NoData("median of an empty sample")
    ordered = sorted(values)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def low_median(values):
    """Lower median: the middle value, or the smaller of the two middle values."""
    n = len(values)
    if n == 0:
        raise NoData("median of an empty sample")
    return sorted(values)[(n - 1) // 2]


def sample_stdev(values):
    """Two-pass sample standard deviation (n - 1 denominator), exactly rounded sums."""
    n = len(values)
    if n < 2:
        raise NoData("sample stdev needs at least two values")
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((x - mean) ** 2 for x in values) / (n - 1))


def pearson(x, y):
    if len(x) != len(y):
        raise ValueError("pearson needs equal-length series")
    n = len(x)
    if n < 2:
        raise ValueError("pearson needs at least two points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        raise Undefined("pearson undefined for a zero-variance series")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
