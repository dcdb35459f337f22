"""Per-service throttle-target controller.

A Captain watches one service's CFS counters and moves its CPU quota so the
measured throttle ratio tracks a target handed down by the application-level
controller:

* every ``N`` periods it either scales up multiplicatively (throttle ratio above
  ``alpha * target``) or proposes an instantaneous scale-down from the recent
  usage history;
* for ``N`` periods after a scale-down it checks every period whether the
  scale-down was reckless and, if so, rolls it back with extra headroom.
"""

import math
from collections import deque
from dataclasses import dataclass

from .stats import sample_stdev


@dataclass(frozen=True)
class CaptainParams:
    N: int = 10
    M: int = 50
    alpha: float = 3.0
    beta_max: float = 0.9
    beta_min: float = 0.5

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not 0 < self.beta_min < self.beta_max < 1:
            raise ValueError("need 0 < beta_min < beta_max < 1")

    @property
    def max_target(self):
        return 1.0 / self.alpha


@dataclass(frozen=True)
class QuotaDecision:
    action: str  # "up", "down", "rollback" or "hold"
    quota: float
    previous: float


@dataclass(frozen=True)
class TargetUpdate:
    """Tower -> Captain message."""
    service: str
    target: float


@dataclass(frozen=True)
class AllocationReport:
    """Captain -> Tower message: the service's current allocation."""
    service: str
    target: float
    allocation_cores: float


class CaptainState:
    def __init__(self, params, quota, quota_min, quota_max, period_ms=100.0, target=0.0, margin=1.0):
        self.params = params
        self.quota_min = quota_min
        self.quota_max = quota_max
        self.period_ms = period_ms
        self.quota = min(max(quota, quota_min), quota_max)
        self.margin = margin
        self.usage_history = deque(maxlen=params.M)
        self.throttle_target = target
        self.window_throttle_count = 0
        self.periods_in_window = 0
        self.last_quota = None
        self.rollback_periods_left = 0
        self.throttle_count_since_scaledown = 0

    def clamp(self, q):
        return min(max(q, self.quota_min), self.quota_max)


def set_target(state, target):
    if not (math.isfinite(target) and 0 <= target < state.params.max_target):
        raise ValueError(f"throttle target {target} outside [0, {state.params.max_target:.4f})")
    state.throttle_target = target


def on_window(state, throttle_count, params=None):
    """Scale up or down once per decision window of N periods."""
    p = params or state.params
    old = state.quota
    target = state.throttle_target
    ratio = throttle_count / p.N
    state.margin = max(0.0, state.margin + ratio - target)
    if ratio > p.alpha * target:
        state.quota = state.clamp(old * (1 + ratio - p.alpha * target))
        state.last_quota = None
        state.rollback_periods_left = 0
        state.throttle_count_since_scaledown = 0
        return QuotaDecision("up", state.quota, old)
    history = state.usage_history
    if len(history) < p.M:
        return QuotaDecision("hold", old, old)
    cores = [u / state.period_ms for u in history]
    proposed = max(cores) + state.margin * sample_stdev(cores)
    if proposed <= p.beta_max * old:
        state.quota = state.clamp(max(p.beta_min * old, proposed))
        state.last_quota = old
        state.rollback_periods_left = p.N
        state.throttle_count_since_scaledown = 0
        return QuotaDecision("down", state.quota, old)
    return QuotaDecision("hold", old, old)


def on_period_rollback_check(state, throttle_count, params=None):
    """Per-period check during the N periods that follow a scale-down."""
    p = params or state.params
    old = state.quota
    if state.rollback_periods_left <= 0:
        return QuotaDecision("hold", old, old)
    state.throttle_count_since_scaledown += throttle_count
    ratio = state.throttle_count_since_scaledown / p.N
    if ratio > p.alpha * state.throttle_target:
        last = state.last_quota
        state.quota = state.clamp(last + (last - old))
        state.margin = state.margin + ratio - state.throttle_target
        state.rollback_periods_left = 0
        state.last_quota = None
        state.throttle_count_since_scaledown = 0
        return QuotaDecision("rollback", state.quota, old)
    state.rollback_periods_left -= 1
    return QuotaDecision("hold", old, old)


class Captain:
    """Drives one CaptainState from per-period CFS counter deltas."""

    def __init__(self, service, params, quota_min, quota_max, period_ms=100.0,
                 initial_quota=None, initial_margin=1.0, target=0.0):
        self.service = service
        self.params = params
        q0 = quota_max if initial_quota is None else initial_quota
        self.state = CaptainState(params, q0, quota_min, quota_max, period_ms, target, initial_margin)
        self.decisions = 0

    @property
    def quota(self):
        return self.state.quota

    def set_target(self, target):
        set_target(self.state, target)

    def report(self):
        return AllocationReport(self.service, self.state.throttle_target, self.state.quota)

    def observe_period(self, usage_ms, throttled):
        """Feed one period's usage and throttle delta; return the quota to apply next."""
        st = self.state
        count = int(throttled)
        st.usage_history.append(usage_ms)
        st.window_throttle_count += count
        st.periods_in_window += 1
        if st.rollback_periods_left > 0:
            on_period_rollback_check(st, count)
        if st.periods_in_window >= self.params.N:
            on_window(st, st.window_throttle_count)
            st.window_throttle_count = 0
            st.periods_in_window = 0
            self.decisions += 1
        return st.quota
