"""RPS traces and request arrivals.

Traces are per-second RPS samples (zero-order hold within a second). Arrivals
per CFS period are Poisson with mean ``rps * period_s``; request types are drawn
i.i.d. from a fixed composition.
"""

import math
from dataclasses import dataclass

import numpy as np

from .sim import RequestRecord

TRACE_KINDS = ("diurnal", "constant", "noisy", "bursty")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TracePoint:
    t_s: float
    rps: float


class Trace:
    """Per-second RPS trace; ``rps_at`` holds each value until the next point."""

    def __init__(self, points):
        self.points = list(points)
        self._t = np.array([p.t_s for p in self.points], dtype=float)
        self._rps = np.array([p.rps for p in self.points], dtype=float)
        if len(self._t) > 1 and np.any(np.diff(self._t) <= 0):
            raise TraceError("trace timestamps must be strictly increasing")
        if np.any(self._rps < 0):
            raise TraceError("trace RPS must be >= 0")

    @classmethod
    def from_arrays(cls, t_s, rps):
        return cls(TracePoint(float(t), float(r)) for t, r in zip(t_s, rps))

    def __len__(self):
        return len(self.points)

    @property
    def duration_s(self):
        if not self.points:
            return 0.0
        if len(self.points) == 1:
            return self._t[0] + 1.0
        return float(self._t[-1] + (self._t[-1] - self._t[-2]))

    @property
    def rps(self):
        return self._rps.copy()

    @property
    def t_s(self):
        return self._t.copy()

    def rps_at(self, t_s):
        if not self.points:
            return 0.0
        i = int(np.searchsorted(self._t, t_s, side="right")) - 1
        if i < 0:
            return float(self._rps[0])
        return float(self._rps[i])

    def stats(self):
        return float(self._rps.min()), float(self._rps.mean()), float(self._rps.max())

    def scaled(self, factor):
        return Trace.from_arrays(self._t, self._rps * factor)


def _check_range(rps_min, rps_avg, rps_max):
    vals = (rps_min, rps_avg, rps_max)
    if not all(math.isfinite(v) for v in vals):
        raise TraceError("RPS bounds must be finite")
    if rps_min < 0 or not rps_min <= rps_avg <= rps_max:
        raise TraceError(f"need 0 <= min <= avg <= max, got {rps_min}/{rps_avg}/{rps_max}")


def _diurnal(n, lo, avg, hi):
    if hi - lo <= 0:
        return np.full(n, float(lo))
    want = (avg - lo) / (hi - lo)
    phase = (np.arange(n) + 0.5) / n
    base = np.sin(np.pi * phase) ** 2

    def shape(k):
        return base ** k

    # the peak height is fixed; the exponent k sets how wide the hump is
    k_lo, k_hi = 1e-3, 200.0
    if shape(k_lo).mean() <= want:
        k = k_lo
    elif shape(k_hi).mean() >= want:
        k = k_hi
    else:
        for _ in range(100):
            k = math.sqrt(k_lo * k_hi)
            if shape(k).mean() > want:
                k_lo = k
            else:
                k_hi = k
    f = shape(k) / shape(k).max()
    return lo + (hi - lo) * f


def _constant(n, lo, avg, hi, rng):
    sd = 0.1 * min(avg - lo, hi - avg) if hi > lo else 0.0
    return np.clip(avg + rng.normal(0.0, sd, n) if sd > 0 else np.full(n, float(avg)), lo, hi)


def _noisy(n, lo, avg, hi, rng):
    if hi <= lo:
        return np.full(n, float(lo))
    theta = 1.0 / 60.0
    sigma = 0.25 * (hi - lo) * math.sqrt(2 * theta)
    x = np.empty(n)
    v = avg
    noise = rng.normal(0.0, 1.0, n)
    for i in range(n):
        v = v + theta * (avg - v) + sigma * noise[i]
        v = min(max(v, lo), hi)
        x[i] = v
    return x


def _bursty(n, lo, avg, hi, rng):
    if hi <= lo or avg >= hi:
        return np.full(n, float(avg))
    frac = min(0.1, 0.5 * (avg - lo) / (hi - lo))
    x = np.zeros(n, dtype=bool)
    if frac > 0:
        width = max(1, min(30, n // 20 or 1))
        n_bursts = max(1, int(round(frac * n / width)))
        starts = rng.choice(max(1, n - width + 1), size=min(n_bursts, max(1, n - width + 1)), replace=False)
        for s in starts:
            x[s:s + width] = True
    f = x.mean()
    base = (avg - f * hi) / (1 - f) if f < 1 else avg
    sd = 0.05 * min(base - lo, hi - base) if base > lo else 0.0
    vals = base + (rng.normal(0.0, sd, n) if sd > 0 else 0.0)
    vals = np.clip(vals, lo, hi)
    vals[x] = hi
    return vals


def gen_trace(kind, duration_s, rps_min, rps_avg, rps_max, seed=0):
    """Synthesize a per-second trace matching the requested min/avg/max range."""
    if kind not in TRACE_KINDS:
        raise TraceError(f"unknown trace kind {kind!r}; expected one of {TRACE_KINDS}")
    _check_range(rps_min, rps_avg, rps_max)
    n = int(duration_s)
    if n < 0:
        raise TraceError("duration must be >= 0")
    if n == 0:
        return Trace([])
    rng = np.random.default_rng(seed)
    if kind == "diurnal":
        vals = _diurnal(n, rps_min, rps_avg, rps_max)
    elif kind == "constant":
        vals = _constant(n, rps_min, rps_avg, rps_max, rng)
    elif kind == "noisy":
        vals = _noisy(n, rps_min, rps_avg, rps_max, rng)
    else:
        vals = _bursty(n, rps_min, rps_avg, rps_max, rng)
    return Trace.from_arrays(np.arange(n, dtype=float), vals)


def load_trace(path):
    """Parse ``t_seconds,rps`` lines (no header)."""
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                raise TraceError(f"{path}:{lineno}: empty line")
            parts = line.split(",")
            if len(parts) != 2:
                raise TraceError(f"{path}:{lineno}: expected 't_seconds,rps'")
            try:
                t, r = float(parts[0]), float(parts[1])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: non-numeric field") from None
            if not (math.isfinite(t) and math.isfinite(r)) or r < 0:
                raise TraceError(f"{path}:{lineno}: invalid value")
            if points and t <= points[-1].t_s:
                raise TraceError(f"{path}:{lineno}: timestamps must be strictly increasing")
            points.append(TracePoint(t, r))
    if not points:
        raise TraceError(f"{path}: empty trace file")
    return Trace(points)


def save_trace(trace, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in trace.points:
            fh.write(f"{p.t_s:g},{p.rps:.6g}\n")


def fluctuate(trace, half_range, window_s=60, seed=0):
    """Resample every second uniformly in ``[max(1, base - half), base + half]``.

    ``base`` is the mean RPS of the one-``window_s`` window the second falls in.
    """
    if half_range < 0:
        raise TraceError("half_range must be >= 0")
    if half_range == 0 or len(trace) == 0:
        return Trace(trace.points)
    rng = np.random.default_rng(seed)
    t = trace.t_s
    rps = trace.rps
    out = np.empty_like(rps)
    win = np.floor((t - t[0]) / window_s).astype(int)
    for w in np.unique(win):
        mask = win == w
        base = rps[mask].mean()
        lo = max(1.0, base - half_range)
        hi = base + half_range
        out[mask] = rng.uniform(lo, hi, int(mask.sum()))
    return Trace.from_arrays(t, out)


def validate_composition(composition):
    if not composition:
        raise TraceError("composition is empty")
    if any(f < 0 for f in composition.values()):
        raise TraceError("composition fractions must be >= 0")
    total = sum(composition.values())
    if abs(total - 1.0) > 1e-9:
        raise TraceError(f"composition fractions sum to {total}, expected 1")


class ArrivalGenerator:
    """Seeded Poisson arrival source for one run."""

    def __init__(self, composition, seed=0, period_ms=100.0):
        validate_composition(composition)
        self.types = list(composition)
        self.probs = np.array([composition[t] for t in self.types], dtype=float)
        self.cum = np.cumsum(self.probs)
        self.cum[-1] = 1.0
        self.rng = np.random.default_rng(seed)
        self.period_s = period_ms / 1000.0
        self.period_ms = period_ms
        self.next_id = 0

    def arrivals(self, rps, period_index):
        if rps <= 0:
            return []
        rng = self.rng
        n = int(rng.poisson(rps * self.period_s))
        if n == 0:
            return []
        t0 = period_index * self.period_ms
        types = self.types
        if len(types) == 1:
            picked = [types[0]] * n
        else:
            idx = np.searchsorted(self.cum, rng.random(n), side="right")
            picked = [types[i] for i in idx]
        out = []
        nid = self.next_id
        for rtype in picked:
            out.append(RequestRecord(nid, rtype, t0))
            nid += 1
        self.next_id = nid
        return out


def arrivals_for_period(trace, composition, period_index, rng, period_ms=100.0, first_id=0):
    """Stateless variant: Poisson arrivals for one period of ``trace`` using ``rng``."""
    validate_composition(composition)
    t_s = period_index * period_ms / 1000.0
    rps = trace.rps_at(t_s)
    if rps <= 0:
        return []
    n = int(rng.poisson(rps * period_ms / 1000.0))
    types = list(composition)
    probs = np.array([composition[t] for t in types], dtype=float)
    idx = rng.choice(len(types), size=n, p=probs / probs.sum())
    t0 = period_index * period_ms
    return [RequestRecord(first_id + k, types[i], t0) for k, i in enumerate(idx)]
