"""Discrete-time CFS bandwidth simulator for a cluster of microservices.

Time advances in fixed CFS periods. In every period each service is granted
``quota * period_ms`` CPU-milliseconds and serves its pending visits FIFO as a
fluid server running at ``quota_max`` cores. A service that burns through its
budget while work is still queued is throttled for the remainder of the period,
which is exactly the condition counted by ``nr_throttled``.

Requests follow a per-type call graph: a list of stages executed in sequence,
each stage a set of service visits executed in parallel.
"""

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

_EPS = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    period_ms: float = 100.0
    periods_per_window: int = 10
    seed: int = 0
    hop_delay_ms: float = 1.0

    def __post_init__(self):
        if not self.period_ms > 0:
            raise ConfigError("period_ms must be positive")
        if self.periods_per_window < 1:
            raise ConfigError("periods_per_window must be >= 1")
        if self.hop_delay_ms < 0:
            raise ConfigError("hop_delay_ms must be >= 0")


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    demand_ms_per_request: dict = field(default_factory=dict)
    quota_min_cores: float = 0.05
    quota_max_cores: float = 8.0

    def __post_init__(self):
        for rtype, d in self.demand_ms_per_request.items():
            if not (d >= 0 and math.isfinite(d)):
                raise ConfigError(f"service {self.id}: demand for {rtype!r} must be finite and >= 0")
        if not 0 < self.quota_min_cores <= self.quota_max_cores:
            raise ConfigError(f"service {self.id}: need 0 < quota_min <= quota_max")


class CallGraph:
    """Per request type, an ordered list of stages; each stage is a list of service ids."""

    def __init__(self, stages_by_type):
        self.stages = {}
        for rtype, stages in stages_by_type.items():
            if not stages:
                raise ConfigError(f"request type {rtype!r} has no stages")
            norm = []
            for stage in stages:
                if isinstance(stage, str):
                    stage = [stage]
                stage = list(stage)
                if not stage:
                    raise ConfigError(f"request type {rtype!r} has an empty stage")
                norm.append(stage)
            self.stages[rtype] = norm

    @property
    def request_types(self):
        return list(self.stages)

    def services(self):
        seen = []
        for stages in self.stages.values():
            for stage in stages:
                for sid in stage:
                    if sid not in seen:
                        seen.append(sid)
        return seen


class RequestRecord:
    __slots__ = ("id", "type", "arrival_time_ms", "completion_time_ms", "stage", "outstanding", "stage_end")

    def __init__(self, id, type, arrival_time_ms):
        self.id = id
        self.type = type
        self.arrival_time_ms = arrival_time_ms
        self.completion_time_ms = None
        self.stage = 0
        self.outstanding = 0
        self.stage_end = arrival_time_ms

    @property
    def latency_ms(self):
        if self.completion_time_ms is None:
            return None
        return self.completion_time_ms - self.arrival_time_ms

    def __repr__(self):
        return f"RequestRecord(id={self.id}, type={self.type!r}, arrival={self.arrival_time_ms})"


class ServiceState:
    """CFS accounting for one service (the cgroup analog)."""

    __slots__ = ("spec", "quota_cores", "usage_total_ms", "nr_throttled", "pending",
                 "rate", "budget", "free_at", "used")

    def __init__(self, spec):
        self.spec = spec
        self.quota_cores = spec.quota_max_cores
        self.usage_total_ms = 0.0
        self.nr_throttled = 0
        # entries are [remaining_cpu_ms, request]
        self.pending = deque()
        self.rate = spec.quota_max_cores
        self.budget = 0.0
        self.free_at = 0.0
        self.used = 0.0

    @property
    def pending_work_ms(self):
        return sum(e[0] for e in self.pending)


@dataclass
class PeriodReport:
    index: int
    start_ms: float
    usage_ms: list
    throttled: list
    quota_cores: list
    completed: list


class Cluster:
    """The simulated application: services, call graph and the period clock."""

    def __init__(self, config, services, call_graph):
        self.config = config
        self.graph = call_graph
        self.services = [ServiceState(s) for s in services]
        self.index = {}
        for i, s in enumerate(services):
            if s.id in self.index:
                raise ConfigError(f"duplicate service id {s.id!r}")
            self.index[s.id] = i
        self._plan = {}
        for rtype, stages in call_graph.stages.items():
            plan = []
            for stage in stages:
                visits = []
                for sid in stage:
                    if sid not in self.index:
                        raise ConfigError(f"request type {rtype!r} references unknown service {sid!r}")
                    spec = services[self.index[sid]]
                    visits.append((self.index[sid], float(spec.demand_ms_per_request.get(rtype, 0.0))))
                plan.append(tuple(visits))
            self._plan[rtype] = tuple(plan)
        self.period = 0
        self._events = []
        self._seq = 0
        self._completed = []

    @property
    def now_ms(self):
        return self.period * self.config.period_ms

    @property
    def service_ids(self):
        return [s.spec.id for s in self.services]

    def _state(self, service):
        try:
            return self.services[self.index[service]]
        except KeyError:
            raise KeyError(f"unknown service {service!r}") from None

    def read_stats(self, service):
        s = self._state(service)
        return s.nr_throttled, s.usage_total_ms

    def set_quota(self, service, cores):
        """Set the CPU quota (cores); applies from the next period boundary."""
        if not math.isfinite(cores) or cores < 0:
            raise ValueError(f"invalid quota {cores!r} for {service!r}")
        s = self._state(service)
        spec = s.spec
        s.quota_cores = min(max(cores, spec.quota_min_cores), spec.quota_max_cores)
        return s.quota_cores

    def get_quota(self, service):
        return self._state(service).quota_cores

    def in_flight(self):
        return len(self._events) + sum(len(s.pending) for s in self.services)

    def _start_stage(self, req, t):
        visits = self._plan[req.type][req.stage]
        req.outstanding = len(visits)
        req.stage_end = t
        events = self._events
        for sidx, demand in visits:
            self._seq += 1
            heapq.heappush(events, (t, self._seq, sidx, req, demand))

    def _visit_done(self, req, t):
        if t > req.stage_end:
            req.stage_end = t
        req.outstanding -= 1
        if req.outstanding:
            return
        req.stage += 1
        if req.stage == len(self._plan[req.type]):
            req.completion_time_ms = req.stage_end
            self._completed.append(req)
        else:
            self._start_stage(req, req.stage_end + self.config.hop_delay_ms)

    def _drain(self, s, t_end):
        q = s.pending
        while q:
            if s.budget <= _EPS:
                return
            avail = t_end - s.free_at
            if avail <= _EPS:
                return
            entry = q[0]
            rem = entry[0]
            work = min(rem, s.budget, avail * s.rate)
            s.budget -= work
            s.used += work
            s.free_at += work / s.rate
            if rem - work <= _EPS:
                q.popleft()
                self._visit_done(entry[1], s.free_at)
            else:
                entry[0] = rem - work

    def step_period(self, arrivals=()):
        """Advance one CFS period, admitting ``arrivals`` at the period start."""
        cfg = self.config
        t0 = self.period * cfg.period_ms
        t1 = t0 + cfg.period_ms
        plan = self._plan
        for req in arrivals:
            if req.type not in plan:
                raise ConfigError(f"unknown request type {req.type!r}")
        services = self.services
        for s in services:
            s.budget = s.quota_cores * cfg.period_ms
            s.used = 0.0
            s.free_at = t0
        self._completed = []
        for s in services:
            if s.pending:
                self._drain(s, t1)
        for req in arrivals:
            req.arrival_time_ms = t0
            self._start_stage(req, t0)
        events = self._events
        pop = heapq.heappop
        while events and events[0][0] < t1:
            t, _, sidx, req, demand = pop(events)
            if demand <= 0:
                self._visit_done(req, t)
                continue
            s = services[sidx]
            if s.pending:
                s.pending.append([demand, req])
                continue
            if t > s.free_at:
                s.free_at = t
            s.pending.append([demand, req])
            self._drain(s, t1)
        usage = []
        throttled = []
        quotas = []
        for s in services:
            hit = s.budget <= _EPS and bool(s.pending)
            if hit:
                s.nr_throttled += 1
            s.usage_total_ms += s.used
            usage.append(s.used)
            throttled.append(hit)
            quotas.append(s.quota_cores)
        report = PeriodReport(self.period, t0, usage, throttled, quotas, self._completed)
        self.period += 1
        return report
