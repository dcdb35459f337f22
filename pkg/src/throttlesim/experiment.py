"""Scenario runners: end-to-end runs, the proxy-metric correlation sweep, the
utilization-threshold sweep and the fluctuation-tolerance benchmark."""

import copy
import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import K8sAutoscaler, K8sParams, StaticAllocation
from .captain import Captain
from .sim import Cluster, ConfigError
from .stats import NoData, Undefined, pearson, percentile
from .tower import HIGH, LADDER, LOW, Tower, WindowMetrics, cluster_services, compute_cost, context_bin
from .workload import ArrivalGenerator, Trace, TracePoint, fluctuate

log = logging.getLogger(__name__)

DECISION_COLUMNS = ["minute", "rps", "bin", "action_i", "action_j", "target_high", "target_low",
                    "cost", "slo_met", "total_alloc_cores"]
# |r| below this for both proxies means the quota sweep did not move latency
LOW_SIGNAL_R = 0.3
HOURLY_COLUMNS = ["hour", "avg_alloc_cores", "avg_used_cores", "p99_ms", "slo_violated"]


@dataclass
class HourRow:
    hour: int
    avg_alloc_cores: float
    avg_used_cores: float
    p99_ms: float
    slo_violated: bool
    requests: int = 0


@dataclass
class RunResult:
    controller: str
    hours: list
    decisions: list
    clusters: dict = None
    hour_latencies: list = None
    minute_p99: list = field(default_factory=list)

    @property
    def avg_alloc_cores(self):
        return float(np.mean([h.avg_alloc_cores for h in self.hours])) if self.hours else float("nan")

    @property
    def avg_used_cores(self):
        return float(np.mean([h.avg_used_cores for h in self.hours])) if self.hours else float("nan")

    @property
    def slo_met_every_hour(self):
        return all(not h.slo_violated for h in self.hours)

    def summary(self):
        return {
            "controller": self.controller,
            "hours": len(self.hours),
            "avg_alloc_cores": _r(self.avg_alloc_cores),
            "avg_used_cores": _r(self.avg_used_cores),
            "max_hourly_p99_ms": _r(max((h.p99_ms for h in self.hours), default=float("nan"))),
            "slo_violations": sum(h.slo_violated for h in self.hours),
            "slo_met_every_hour": self.slo_met_every_hour,
        }


def _r(x, nd=6):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return round(float(x), nd)


def constant_trace(rps, duration_s):
    return Trace(TracePoint(float(t), float(rps)) for t in range(int(duration_s)))


def _controller_label(cfg):
    c = cfg.controller
    if c.kind in ("k8s", "k8s-fast"):
        return f"{c.kind}@{c.k8s.utilization_threshold:g}"
    return c.kind


class Simulation:
    """One run: cluster + arrival source + per-service controllers (+ tower)."""

    def __init__(self, cfg, keep_hour_latencies=False):
        self.cfg = cfg
        self.cluster = Cluster(cfg.sim, cfg.app.services, cfg.app.graph)
        self.period_ms = cfg.sim.period_ms
        self.periods_per_minute = int(round(60_000 / self.period_ms))
        self.periods_per_second = 1000.0 / self.period_ms
        self.gen = ArrivalGenerator(cfg.app.composition, seed=cfg.seed, period_ms=self.period_ms)
        self.kind = cfg.controller.kind
        self.specs = cfg.app.services
        self.names = [s.id for s in self.specs]
        self.tower = None
        self.clusters = None
        self.keep_hour_latencies = keep_hour_latencies
        self.ctrls = [self._make_controller(s) for s in self.specs]
        for s, c in zip(self.specs, self.ctrls):
            self.cluster.set_quota(s.id, c.quota)
        if self.kind == "autothrottle":
            self.tower = Tower(cfg.tower_params())
            hi, _ = self.tower.targets()
            for c in self.ctrls:
                c.set_target(hi)
        elif self.kind == "fixed-targets":
            t = cfg.controller.targets
            for c in self.ctrls:
                c.set_target(t.get(HIGH, t.get(LOW, 0.0)))
        self.minute = 0
        self.decisions = []
        self.minute_p99 = []

    def _make_controller(self, spec):
        c = self.cfg.controller
        if self.kind in ("autothrottle", "fixed-targets"):
            return Captain(spec.id, c.captain, spec.quota_min_cores, spec.quota_max_cores,
                           self.period_ms, initial_margin=c.initial_margin)
        if self.kind in ("k8s", "k8s-fast"):
            return K8sAutoscaler(spec.id, c.k8s, spec.quota_min_cores, spec.quota_max_cores, self.period_ms)
        cores = c.static_cores.get(spec.id, c.static_default)
        if cores is None:
            cores = spec.quota_max_cores
        return StaticAllocation(spec.id, cores, spec.quota_min_cores, spec.quota_max_cores)

    # -- clock ---------------------------------------------------------------------

    def advance(self, n_periods, rps_fn, on_minute=None, hour_sink=None):
        """Run ``n_periods`` periods; ``rps_fn(t_s)`` gives the offered load at phase time t_s."""
        cluster = self.cluster
        names = self.names
        ctrls = self.ctrls
        gen = self.gen
        ppm = self.periods_per_minute
        pps = self.periods_per_second
        n_svc = len(names)
        m_alloc = 0.0
        m_lat = []
        m_arr = 0
        m_periods = 0
        m_usage = [0.0] * n_svc
        last_sec = -1
        rps = 0.0
        for k in range(n_periods):
            sec = int(k / pps)
            if sec != last_sec:
                rps = rps_fn(sec)
                last_sec = sec
            arrivals = gen.arrivals(rps, cluster.period)
            m_arr += len(arrivals)
            rep = cluster.step_period(arrivals)
            usage = rep.usage_ms
            throttled = rep.throttled
            alloc = 0.0
            used = 0.0
            for i in range(n_svc):
                cluster.set_quota(names[i], ctrls[i].observe_period(usage[i], throttled[i]))
                alloc += rep.quota_cores[i]
                used += usage[i]
                m_usage[i] += usage[i]
            m_alloc += alloc
            lats = [r.completion_time_ms - r.arrival_time_ms for r in rep.completed]
            m_lat.extend(lats)
            m_periods += 1
            if hour_sink is not None:
                hour_sink.add(alloc, used, lats)
            if m_periods == ppm or k == n_periods - 1:
                metrics = WindowMetrics(
                    start_ms=(cluster.period - m_periods) * self.period_ms,
                    end_ms=cluster.period * self.period_ms,
                    latencies=m_lat,
                    avg_rps=m_arr / (m_periods / pps),
                    total_alloc_cores=m_alloc / m_periods,
                    usage_cores={self.names[i]: m_usage[i] / (m_periods * self.period_ms) for i in range(n_svc)},
                )
                if on_minute is not None:
                    on_minute(metrics)
                m_alloc = 0.0
                m_lat = []
                m_arr = 0
                m_periods = 0
                m_usage = [0.0] * n_svc

    # -- phases ----------------------------------------------------------------------

    def warmup(self, initial_rps):
        """Ramp the load by 10% of the initial RPS every step, then hold; returns avg usage per service."""
        d = self.cfg.durations
        usage_sum = {n: 0.0 for n in self.names}

        def acc(m):
            for n, u in m.usage_cores.items():
                usage_sum[n] += u * (m.end_ms - m.start_ms)

        step_p = int(round(d.warmup_step_s * self.periods_per_second))
        if step_p > 0:
            for level in range(1, 11):
                r = initial_rps * level / 10.0
                self.advance(step_p, lambda _s, r=r: r, on_minute=acc)
        hold_p = int(round(d.warmup_hold_s * self.periods_per_second))
        if hold_p > 0:
            self.advance(hold_p, lambda _s: initial_rps, on_minute=acc)
        total_ms = (10 * step_p + hold_p) * self.period_ms
        return {n: (v / total_ms if total_ms else 0.0) for n, v in usage_sum.items()}

    def assign_clusters(self, avg_usage):
        self.clusters = cluster_services(avg_usage, k=2, seed=self.cfg.seed)
        if self.kind == "fixed-targets":
            t = self.cfg.controller.targets
            self.apply_targets(t.get(HIGH, 0.0), t.get(LOW, t.get(HIGH, 0.0)))
        elif self.tower is not None:
            self.apply_targets(*self.tower.targets())

    def apply_targets(self, high, low):
        for c in self.ctrls:
            group = self.clusters.get(c.service, HIGH) if self.clusters else HIGH
            c.set_target(high if group == HIGH else low)

    def _on_minute(self, metrics):
        cfg = self.cfg
        tp = self.tower.params if self.tower else cfg.tower_params()
        try:
            tail = percentile(metrics.latencies, cfg.slo_percentile)
        except NoData:
            tail = None
        self.minute_p99.append(tail)
        b = context_bin(metrics.avg_rps, tp.bin_size)
        met = tail is None or tail <= cfg.slo_ms
        cost = compute_cost(met, metrics.total_alloc_cores, tail or 0.0, tp)
        row = {"minute": self.minute, "rps": metrics.avg_rps, "bin": b, "action_i": "", "action_j": "",
               "target_high": "", "target_low": "", "cost": cost, "slo_met": met,
               "total_alloc_cores": metrics.total_alloc_cores}
        if self.tower is not None:
            ran = self.tower.action
            hi, lo = self.tower.targets(ran)
            row.update(action_i=ran.i, action_j=ran.j, target_high=hi, target_low=lo)
            self.apply_targets(*self.tower.step(metrics))
        elif self.kind == "fixed-targets":
            t = cfg.controller.targets
            row.update(target_high=t.get(HIGH, 0.0), target_low=t.get(LOW, t.get(HIGH, 0.0)))
        self.decisions.append(row)
        self.minute += 1

    def replay(self, trace, minutes, hour_sink=None):
        dur = max(1, int(math.ceil(trace.duration_s)))
        self.advance(int(minutes * self.periods_per_minute), lambda s: trace.rps_at(s % dur),
                     on_minute=self._on_minute, hour_sink=hour_sink)


class HourSink:
    def __init__(self, periods_per_hour, period_ms, slo_ms, pct, keep_latencies=False):
        self.pph = periods_per_hour
        self.period_ms = period_ms
        self.slo_ms = slo_ms
        self.pct = pct
        self.keep = keep_latencies
        self.rows = []
        self.latencies_by_hour = []
        self._reset()

    def _reset(self):
        self.alloc = 0.0
        self.used = 0.0
        self.lat = []
        self.n = 0

    def add(self, alloc, used, lats):
        self.alloc += alloc
        self.used += used
        self.lat.extend(lats)
        self.n += 1
        if self.n == self.pph:
            self.flush()

    def flush(self):
        if self.n == 0:
            return
        try:
            p99 = percentile(self.lat, self.pct)
        except NoData:
            p99 = 0.0
        self.rows.append(HourRow(len(self.rows), self.alloc / self.n, self.used / (self.n * self.period_ms),
                                 p99, p99 > self.slo_ms, len(self.lat)))
        if self.keep:
            self.latencies_by_hour.append(self.lat)
        self._reset()


def run(cfg, trace=None, keep_hour_latencies=False):
    """End-to-end run: warm-up, tower training phases (if any), then the measured hours."""
    trace = trace if trace is not None else cfg.trace.build()
    sim = Simulation(cfg, keep_hour_latencies)
    initial = trace.rps_at(0) if len(trace) else 0.0
    avg_usage = sim.warmup(initial)
    sim.assign_clusters(avg_usage)
    if sim.tower is not None:
        t = cfg.controller.tower
        train = cfg.train_trace.build() if cfg.train_trace is not None else trace
        if t.exploration_steps:
            sim.replay(train, t.exploration_steps)
        if t.learning_steps:
            sim.tower.set_epsilon(t.learning_epsilon)
            sim.replay(train, t.learning_steps)
        sim.tower.set_epsilon(t.measure_epsilon)
    pph = int(round(3_600_000 / sim.period_ms))
    sink = HourSink(pph, sim.period_ms, cfg.slo_ms, cfg.slo_percentile, keep_hour_latencies)
    sim.replay(trace, cfg.durations.measure_hours * 60, hour_sink=sink)
    sink.flush()
    return RunResult(_controller_label(cfg), sink.rows, sim.decisions, sim.clusters,
                     sink.latencies_by_hour if keep_hour_latencies else None, sim.minute_p99)


# -- output ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def hourly_rows(result):
    return [{"hour": h.hour, "avg_alloc_cores": h.avg_alloc_cores, "avg_used_cores": h.avg_used_cores,
             "p99_ms": h.p99_ms, "slo_violated": h.slo_violated} for h in result.hours]


def write_run(result, out_dir, prefix=""):
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, cols, rows in (("decision_log.csv", DECISION_COLUMNS, result.decisions),
                             ("hourly_report.csv", HOURLY_COLUMNS, hourly_rows(result))):
        path = os.path.join(out_dir, prefix + name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(cols, rows))
        paths[name] = path
    return paths


# -- correlation microbenchmark ---------------------------------------------------------

@dataclass
class CorrelationRow:
    service: str
    r_throttle: float
    r_utilization: float
    flag: str
    quotas: list
    p99_ms: list
    throttles: list
    utilization: list


def mean_demand_cores(cfg, rps):
    """Expected CPU demand per service (cores) at a constant ``rps``."""
    out = {}
    comp = cfg.app.composition
    for s in cfg.app.services:
        ms = 0.0
        for rtype, stages in cfg.app.graph.stages.items():
            visits = sum(stage.count(s.id) for stage in stages)
            ms += comp.get(rtype, 0.0) * visits * s.demand_ms_per_request.get(rtype, 0.0)
        out[s.id] = rps * ms / 1000.0
    return out


def _static_cfg(cfg, cores):
    c = copy.deepcopy(cfg)
    c.controller.kind = "static"
    c.controller.static_cores = dict(cores)
    c.controller.static_default = None
    return c


def measure_static(cfg, cores, rps, duration_s, warm_s=10.0):
    """Fixed quotas at constant load; returns (p99_ms, throttle counts, usage ms) per service."""
    c = _static_cfg(cfg, cores)
    sim = Simulation(c)
    pps = sim.periods_per_second
    sim.advance(int(warm_s * pps), lambda _s: rps)
    before = {n: sim.cluster.read_stats(n) for n in sim.names}
    lat = []
    sim.advance(int(duration_s * pps), lambda _s: rps, on_minute=lambda m: lat.extend(m.latencies))
    after = {n: sim.cluster.read_stats(n) for n in sim.names}
    try:
        p99 = percentile(lat, cfg.slo_percentile)
    except NoData:
        p99 = 0.0
    thr = {n: after[n][0] - before[n][0] for n in sim.names}
    use = {n: after[n][1] - before[n][1] for n in sim.names}
    return p99, thr, use


def correlation_bench(cfg):
    cc = cfg.correlate
    if cc.points < 2:
        raise ConfigError("correlate.points: need >= 2 quota points")
    demand = mean_demand_cores(cfg, cc.rps)
    specs = {s.id: s for s in cfg.app.services}
    names = cc.services or list(specs)
    rows = []
    for name in names:
        spec = specs[name]
        lo = cc.quota_lo if cc.quota_lo is not None else max(spec.quota_min_cores, 1.1 * demand[name])
        hi = cc.quota_hi if cc.quota_hi is not None else max(lo * 2.0, 3.0 * demand[name])
        quotas = [float(q) for q in np.linspace(lo, hi, cc.points)]
        others = {s: (cc.others_cores if cc.others_cores is not None else specs[s].quota_max_cores)
                  for s in specs if s != name}
        p99s, thr, util = [], [], []
        for q in quotas:
            cores = dict(others)
            cores[name] = q
            p99, t, u = measure_static(cfg, cores, cc.rps, cc.duration_s)
            eff_q = min(max(q, spec.quota_min_cores), spec.quota_max_cores)
            p99s.append(p99)
            thr.append(float(t[name]))
            util.append(u[name] / (eff_q * cc.duration_s * 1000.0))
            log.info("correlate %s quota=%.3f p99=%.1f throttles=%d", name, q, p99, t[name])
        flags = []
        try:
            r_t = pearson(p99s, thr)
        except Undefined:
            r_t = float("nan")
            flags.append("undefined-throttle")
        try:
            r_u = pearson(p99s, util)
        except Undefined:
            r_u = float("nan")
            flags.append("undefined-utilization")
        defined = [abs(r) for r in (r_t, r_u) if not math.isnan(r)]
        if not defined or max(defined) < LOW_SIGNAL_R:
            flags.append("low-signal")
        rows.append(CorrelationRow(name, r_t, r_u, ";".join(flags), quotas, p99s, thr, util))
    return rows


# -- threshold sweep --------------------------------------------------------------------------

@dataclass
class SweepResult:
    baseline: str
    rows: list
    best: float = None
    best_alloc: float = None

    @property
    def feasible(self):
        return self.best is not None


def pick_best_threshold(rows):
    """Min average allocation among SLO-feasible runs; ties go to the larger threshold."""
    feasible = [r for r in rows if r["slo_met_every_hour"]]
    if not feasible:
        return None
    best = min(feasible, key=lambda r: (r["avg_alloc_cores"], -r["threshold"]))
    return best


def threshold_sweep(cfg, trace=None):
    base = cfg.sweep.baseline
    trace = trace if trace is not None else cfg.trace.build()
    rows = []
    for th in cfg.sweep.thresholds:
        c = copy.deepcopy(cfg)
        c.controller.kind = base
        k = cfg.controller.k8s
        if base == "k8s-fast" and cfg.controller.kind != "k8s-fast":
            k = K8sParams(1.0, 20.0, th)
        elif base == "k8s" and cfg.controller.kind == "k8s-fast":
            k = K8sParams(15.0, 300.0, th)
        c.controller.k8s = K8sParams(k.measure_interval_s, k.lookback_s, th)
        res = run(c, trace)
        s = res.summary()
        rows.append({"threshold": th, "avg_alloc_cores": res.avg_alloc_cores,
                     "max_hourly_p99_ms": s["max_hourly_p99_ms"],
                     "slo_met_every_hour": res.slo_met_every_hour, "result": res})
        log.info("sweep %s theta=%.1f alloc=%.3f feasible=%s", base, th, res.avg_alloc_cores,
                 res.slo_met_every_hour)
    best = pick_best_threshold(rows)
    return SweepResult(base, rows, best["threshold"] if best else None, best["avg_alloc_cores"] if best else None)


# -- fluctuation tolerance -----------------------------------------------------------------------

@dataclass
class FluctuationRow:
    half_range: float
    rps_lo: float
    rps_hi: float
    p99_min: float
    p99_q1: float
    p99_median: float
    p99_q3: float
    p99_max: float
    avg_alloc_cores: float
    window_p99: list


def _box(values):
    a = np.asarray(values, dtype=float)
    q = np.percentile(a, [0, 25, 50, 75, 100])
    return [float(v) for v in q]


def _fixed_cfg(cfg, targets):
    c = copy.deepcopy(cfg)
    c.controller.kind = "fixed-targets"
    c.controller.targets = dict(targets)
    return c


def run_fixed_targets(cfg, targets, trace, minutes):
    c = _fixed_cfg(cfg, targets)
    sim = Simulation(c)
    sim.assign_clusters(sim.warmup(trace.rps_at(0)))
    sim.replay(trace, minutes)
    allocs = [d["total_alloc_cores"] for d in sim.decisions]
    return sim.minute_p99, float(np.mean(allocs)) if allocs else float("nan")


def tune_fixed_targets(cfg, base_rps, minutes=10, ladder=LADDER):
    """Highest common ladder target whose P99 at constant ``base_rps`` stays within the SLO."""
    trace = constant_trace(base_rps, minutes * 60)
    for level in reversed(ladder):
        p99s, _ = run_fixed_targets(cfg, {HIGH: level, LOW: level}, trace, minutes)
        vals = [p for p in p99s if p is not None]
        if vals and max(vals) <= cfg.slo_ms:
            return {HIGH: level, LOW: level}
    return {HIGH: ladder[0], LOW: ladder[0]}


def fluctuation_bench(cfg, targets=None):
    fc = cfg.fluctuate
    base = fc.base_rps if fc.base_rps is not None else cfg.trace.rps_avg
    halves = fc.half_ranges if fc.half_ranges is not None else [0.0, 0.1 * base, 0.25 * base, 0.5 * base]
    targets = targets or cfg.controller.targets or tune_fixed_targets(cfg, base)
    duration = int(fc.windows * fc.window_s)
    steady = constant_trace(base, duration)
    rows = []
    for half in halves:
        tr = fluctuate(steady, half, fc.window_s, seed=cfg.seed)
        p99s, alloc = run_fixed_targets(cfg, targets, tr, duration / 60.0)
        per_window = _window_p99(p99s, fc.window_s)
        mn, q1, med, q3, mx = _box(per_window)
        rows.append(FluctuationRow(float(half), max(1.0, base - half), base + half, mn, q1, med, q3, mx,
                                   alloc, per_window))
    return targets, rows


def _window_p99(minute_p99, window_s):
    vals = [p if p is not None else 0.0 for p in minute_p99]
    if abs(window_s - 60.0) < 1e-9:
        return vals
    per = max(1, int(round(window_s / 60.0)))
    return [max(vals[i:i + per]) for i in range(0, len(vals), per)]
