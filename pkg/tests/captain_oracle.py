"""Straight-line scalar re-implementation of the Captain's two control rules,
used as an oracle for the library versions."""

import math
import random

ALPHA, BETA_MAX, BETA_MIN, N, M = 3.0, 0.9, 0.5, 10, 50


def _clamp(q, lo, hi):
    if q < lo:
        return lo
    if q > hi:
        return hi
    return q


def _stdev(xs):
    n = len(xs)
    mu = math.fsum(xs) / n
    return math.sqrt(math.fsum([(x - mu) * (x - mu) for x in xs]) / (n - 1))


def window(s, count):
    """One decision window. ``s`` is a dict of scalar state; returns the new dict."""
    s = dict(s)
    ratio = count / N
    s["margin"] = s["margin"] + ratio - s["target"]
    if s["margin"] < 0:
        s["margin"] = 0.0
    if ratio > ALPHA * s["target"]:
        s["quota"] = _clamp(s["quota"] * (1 + ratio - ALPHA * s["target"]), s["qmin"], s["qmax"])
        s["last"] = None
        s["left"] = 0
        s["acc"] = 0
        return s
    if len(s["hist"]) < M:
        return s
    cores = [u / s["period"] for u in s["hist"]]
    prop = max(cores) + s["margin"] * _stdev(cores)
    if prop <= BETA_MAX * s["quota"]:
        old = s["quota"]
        s["quota"] = _clamp(max(BETA_MIN * old, prop), s["qmin"], s["qmax"])
        s["last"] = old
        s["left"] = N
        s["acc"] = 0
    return s


def rollback(s, count):
    s = dict(s)
    if s["left"] <= 0:
        return s
    s["acc"] = s["acc"] + count
    ratio = s["acc"] / N
    if ratio > ALPHA * s["target"]:
        s["quota"] = _clamp(s["last"] + (s["last"] - s["quota"]), s["qmin"], s["qmax"])
        s["margin"] = s["margin"] + ratio - s["target"]
        s["left"] = 0
        s["last"] = None
        s["acc"] = 0
        return s
    s["left"] = s["left"] - 1
    return s


LADDER = (0.00, 0.02, 0.04, 0.06, 0.10, 0.15, 0.20, 0.25, 0.30)


def random_state(rng):
    qmin = rng.choice([0.05, 0.1, 0.5])
    qmax = rng.choice([4.0, 8.0, 16.0])
    quota = rng.uniform(qmin, qmax)
    n_hist = rng.choice([M, M, M, rng.randint(0, M - 1)])
    level = rng.uniform(0.0, quota * 100.0)
    hist = [max(0.0, level + rng.gauss(0, level * rng.choice([0.0, 0.05, 0.3]) + 1e-9)) for _ in range(n_hist)]
    in_watch = rng.random() < 0.5
    last = rng.uniform(quota, qmax) if in_watch else None
    return {
        "quota": quota, "qmin": qmin, "qmax": qmax, "period": 100.0,
        "margin": rng.choice([0.0, rng.uniform(0, 3)]),
        "target": rng.choice(LADDER),
        "hist": hist,
        "last": last,
        "left": rng.randint(1, N) if in_watch else 0,
        "acc": rng.randint(0, 3) if in_watch else 0,
    }


def random_cases(n=1000, seed=0):
    rng = random.Random(seed)
    for _ in range(n):
        yield random_state(rng), rng.randint(0, N), rng.randint(0, 1)
