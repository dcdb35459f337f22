"""Reference autoscalers: utilization-threshold (Kubernetes style) and static."""

from collections import deque
from dataclasses import dataclass

THRESHOLD_SWEEP = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class K8sParams:
    measure_interval_s: float = 15.0
    lookback_s: float = 300.0
    utilization_threshold: float = 0.5

    def __post_init__(self):
        if self.measure_interval_s <= 0:
            raise ValueError("measure interval must be positive")
        if self.measure_interval_s > self.lookback_s:
            raise ValueError("measure interval must not exceed the lookback")
        if not 0 < self.utilization_threshold <= 1:
            raise ValueError("utilization threshold must be in (0, 1]")

    @property
    def ring_length(self):
        return max(1, int(round(self.lookback_s / self.measure_interval_s)))


K8S_CPU = K8sParams(15.0, 300.0)
K8S_CPU_FAST = K8sParams(1.0, 20.0)


class K8sState:
    def __init__(self, params, quota_min, quota_max):
        self.params = params
        self.quota_min = quota_min
        self.quota_max = quota_max
        self.candidates = deque(maxlen=params.ring_length)


def k8s_step(state, usage_cores_avg, params=None):
    """Push ``usage / threshold`` and return the largest candidate in the lookback."""
    p = params or state.params
    state.candidates.append(usage_cores_avg / p.utilization_threshold)
    quota = max(state.candidates)
    return min(max(quota, state.quota_min), state.quota_max)


class K8sAutoscaler:
    """Per-service driver: accumulates usage per period and acts every ``m`` seconds."""

    def __init__(self, service, params, quota_min, quota_max, period_ms=100.0, initial_quota=None):
        self.service = service
        self.params = params
        self.state = K8sState(params, quota_min, quota_max)
        self.period_ms = period_ms
        self.periods_per_measure = max(1, int(round(params.measure_interval_s * 1000.0 / period_ms)))
        self.quota = quota_max if initial_quota is None else min(max(initial_quota, quota_min), quota_max)
        self._acc = 0.0
        self._n = 0

    def observe_period(self, usage_ms, throttled=False):
        self._acc += usage_ms
        self._n += 1
        if self._n >= self.periods_per_measure:
            usage_cores = self._acc / (self._n * self.period_ms)
            self.quota = k8s_step(self.state, usage_cores)
            self._acc = 0.0
            self._n = 0
        return self.quota


class StaticAllocation:
    def __init__(self, service, cores, quota_min, quota_max):
        self.service = service
        self.quota = min(max(cores, quota_min), quota_max)

    def observe_period(self, usage_ms, throttled=False):
        return self.quota


def static_alloc(cluster, service, cores):
    """Pin ``service`` to a fixed quota for the rest of the run."""
    return cluster.set_quota(service, cores)
