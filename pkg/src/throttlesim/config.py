"""Experiment configuration: a nested YAML document validated before any simulation runs.

Schema (all sections optional unless noted)::

    seed: 1
    output_dir: out
    sim:        {period_ms: 100, periods_per_window: 10, hop_delay_ms: 1}
    app:                                   # required
      services:
        - {id: nginx, quota_min: 0.05, quota_max: 8, demand: {read: 2.0}}
      call_graph: {read: [[nginx], [cache, db]]}
      composition: {read: 1.0}
    trace:      {kind: diurnal, duration_s: 3600, rps_min: 20, rps_avg: 40, rps_max: 65, seed: 0}
                # or {path: trace.csv}, or {preset: social-network/diurnal, scale: 0.1}
    train_trace: {kind: noisy, ...}        # same schema; replayed while the tower trains
                                           # (defaults to the measured trace)
    slo:        {percentile: 0.99, threshold_ms: 200}
    controller:
      kind: autothrottle            # autothrottle | k8s | k8s-fast | static
      captain:  {N: 10, M: 50, alpha: 3, beta_max: 0.9, beta_min: 0.5, initial_margin: 1.0}
      tower:    {epsilon: 0.1, exploration_steps: 360, hold_steps: 2, learning_steps: 0,
                 learning_epsilon: 0.1, measure_epsilon: 0.1, training_samples: 10000,
                 bin_size: 20, model: nn, hidden_units: 3, learning_rate: 0.5,
                 alloc_norm_max_cores: null, latency_norm_max_ms: null}
      k8s:      {measure_interval_s: 15, lookback_s: 300, threshold: 0.5}
      static:   {default: 1.0, cores: {nginx: 2.0}}
      targets:  {High: 0.06, Low: 0.1}      # fixed targets instead of a tower
    durations:  {warmup_step_s: 5, warmup_hold_s: 10, measure_hours: 1}
    correlate:  {services: [db], rps: 30, quota_lo: 0.5, quota_hi: 2.0, points: 40,
                 duration_s: 120, others_cores: null}
    sweep:      {baseline: k8s, thresholds: [0.1, ..., 0.9]}
    fluctuate:  {base_rps: 40, half_ranges: [0, 4, 10, 20], windows: 60, window_s: 60}
"""

import copy
import math
from dataclasses import dataclass, field

import yaml

from .baselines import THRESHOLD_SWEEP, K8sParams
from .captain import CaptainParams
from .sim import CallGraph, ConfigError, ServiceSpec, SimConfig
from .tower import TowerParams
from .workload import TRACE_KINDS, gen_trace, load_trace, validate_composition

# Min / average / max RPS of the four one-hour traces, per benchmark application.
TRACE_PRESETS = {
    "train-ticket": {"diurnal": (145, 262, 411), "constant": (152, 200, 252),
                     "noisy": (75, 157, 252), "bursty": (62, 163, 442)},
    "hotel-reservation": {"diurnal": (1721, 2627, 4003), "constant": (1855, 2002, 2183),
                          "noisy": (793, 1575, 2470), "bursty": (768, 1633, 4037)},
    "social-network": {"diurnal": (227, 394, 656), "constant": (390, 500, 588),
                       "noisy": (105, 236, 390), "bursty": (104, 245, 648),
                       "long-term": (1, 230, 592)},
    "social-network-large": {"diurnal": (479, 787, 1214), "constant": (882, 1001, 1131),
                             "noisy": (232, 472, 771), "bursty": (205, 489, 1266)},
}

# Request mixes of the benchmark applications.
COMPOSITIONS = {
    "train-ticket": {"Mainpage": 0.2941, "Travel": 0.5882, "Assurance": 0.0294,
                     "Food": 0.0294, "Contact": 0.0294, "Preserve": 0.0295},
    "hotel-reservation": {"Search": 0.60, "Recommend": 0.39, "Reserve": 0.005, "Login": 0.005},
    "social-network": {"Read-home-timeline": 0.65, "Read-user-timeline": 0.15, "Compose-post": 0.20},
}

CONTROLLERS = ("autothrottle", "k8s", "k8s-fast", "static", "fixed-targets")


@dataclass
class AppConfig:
    services: list
    graph: CallGraph
    composition: dict


@dataclass
class TraceConfig:
    kind: str = "diurnal"
    duration_s: int = 3600
    rps_min: float = 20.0
    rps_avg: float = 40.0
    rps_max: float = 65.0
    seed: int = 0
    path: str = None

    def build(self):
        if self.path:
            return load_trace(self.path)
        return gen_trace(self.kind, self.duration_s, self.rps_min, self.rps_avg, self.rps_max, self.seed)


@dataclass
class TowerSettings:
    epsilon: float = 0.1
    exploration_steps: int = 360
    hold_steps: int = 2
    learning_steps: int = 0
    learning_epsilon: float = None
    measure_epsilon: float = None
    training_samples: int = 10_000
    bin_size: float = 20.0
    model: str = "nn"
    hidden_units: int = 3
    learning_rate: float = 0.5
    alloc_norm_max_cores: float = None
    latency_norm_max_ms: float = None

    def __post_init__(self):
        if self.learning_epsilon is None:
            self.learning_epsilon = self.epsilon
        if self.measure_epsilon is None:
            self.measure_epsilon = self.epsilon


@dataclass
class ControllerConfig:
    kind: str = "autothrottle"
    captain: CaptainParams = field(default_factory=CaptainParams)
    initial_margin: float = 1.0
    tower: TowerSettings = field(default_factory=TowerSettings)
    k8s: K8sParams = field(default_factory=K8sParams)
    static_default: float = None
    static_cores: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)


@dataclass
class Durations:
    warmup_step_s: float = 5.0
    warmup_hold_s: float = 10.0
    measure_hours: float = 1.0


@dataclass
class CorrelateConfig:
    services: list = None
    rps: float = 30.0
    quota_lo: float = None
    quota_hi: float = None
    points: int = 40
    duration_s: float = 120.0
    others_cores: float = None


@dataclass
class SweepConfig:
    baseline: str = "k8s"
    thresholds: tuple = THRESHOLD_SWEEP


@dataclass
class FluctuateConfig:
    base_rps: float = None
    half_ranges: list = None
    windows: int = 60
    window_s: float = 60.0


@dataclass
class ExperimentConfig:
    app: AppConfig
    sim: SimConfig = field(default_factory=SimConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    slo_percentile: float = 0.99
    slo_ms: float = 200.0
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    durations: Durations = field(default_factory=Durations)
    correlate: CorrelateConfig = field(default_factory=CorrelateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    fluctuate: FluctuateConfig = field(default_factory=FluctuateConfig)
    seed: int = 0
    output_dir: str = "out"
    train_trace: TraceConfig = None

    @property
    def capacity_cores(self):
        return sum(s.quota_max_cores for s in self.app.services)

    def tower_params(self, seed=None):
        t = self.controller.tower
        return TowerParams(
            slo_ms=self.slo_ms,
            slo_percentile=self.slo_percentile,
            epsilon=t.epsilon,
            exploration_stage_steps=t.exploration_steps,
            exploration_hold_steps=t.hold_steps,
            training_samples_per_update=t.training_samples,
            bin_size=t.bin_size,
            alloc_norm_max_cores=t.alloc_norm_max_cores or self.capacity_cores,
            latency_norm_max_ms=t.latency_norm_max_ms,
            model=t.model,
            hidden_units=t.hidden_units,
            learning_rate=t.learning_rate,
            seed=self.seed if seed is None else seed,
        )

    def replace(self, **changes):
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new


# -- parsing -----------------------------------------------------------------------

_MISSING = object()


class _Section:
    """Typed reads from one mapping, reporting dotted field paths on error."""

    def __init__(self, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path or '<root>'}: expected a mapping")
        self.data = data
        self.path = path

    def where(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, default=_MISSING):
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(f"{self.where(key)}: required field missing")
            return default
        return self.data[key]

    def num(self, key, default=_MISSING, lo=None, hi=None, integer=False):
        v = self.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self.where(key)}: expected a number, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"{self.where(key)}: must be finite")
        if integer:
            if int(v) != v:
                raise ConfigError(f"{self.where(key)}: expected an integer")
            v = int(v)
        if lo is not None and v < lo:
            raise ConfigError(f"{self.where(key)}: must be >= {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{self.where(key)}: must be <= {hi}")
        return v

    def sub(self, key):
        return _Section(self.data.get(key), self.where(key))

    def check_keys(self, allowed):
        extra = set(self.data) - set(allowed)
        if extra:
            raise ConfigError(f"{self.path or '<root>'}: unknown field(s) {sorted(extra)}")


def _wrap(fn, path):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_app(sec):
    sec.check_keys(["services", "call_graph", "composition"])
    raw_services = sec.get("services")
    if not isinstance(raw_services, list) or not raw_services:
        raise ConfigError(f"{sec.where('services')}: expected a non-empty list")
    services = []
    for k, raw in enumerate(raw_services):
        s = _Section(raw, f"{sec.where('services')}[{k}]")
        s.check_keys(["id", "quota_min", "quota_max", "demand"])
        sid = s.get("id")
        if not isinstance(sid, str) or not sid:
            raise ConfigError(f"{s.where('id')}: expected a non-empty string")
        demand = s.get("demand", {}) or {}
        if not isinstance(demand, dict):
            raise ConfigError(f"{s.where('demand')}: expected a mapping")
        d = _Section(demand, s.where("demand"))
        demands = {rt: d.num(rt, lo=0) for rt in demand}
        services.append(_wrap(lambda: ServiceSpec(sid, demands, s.num("quota_min", 0.05), s.num("quota_max", 8.0)),
                              s.path))
    ids = [s.id for s in services]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{sec.where('services')}: duplicate service ids")
    raw_graph = sec.get("call_graph")
    if not isinstance(raw_graph, dict) or not raw_graph:
        raise ConfigError(f"{sec.where('call_graph')}: expected a non-empty mapping")
    graph = _wrap(lambda: CallGraph(raw_graph), sec.where("call_graph"))
    for rtype, stages in graph.stages.items():
        for n, stage in enumerate(stages):
            for sid in stage:
                if sid not in ids:
                    raise ConfigError(f"{sec.where('call_graph')}.{rtype}[{n}]: unknown service {sid!r}")
    for s in services:
        for rt in s.demand_ms_per_request:
            if rt not in graph.stages:
                raise ConfigError(f"{sec.where('services')}: service {s.id!r} has demand for unknown type {rt!r}")
    comp = sec.get("composition", None)
    if comp is None:
        comp = {rt: 1.0 / len(graph.stages) for rt in graph.stages}
    if not isinstance(comp, dict):
        raise ConfigError(f"{sec.where('composition')}: expected a mapping")
    for rt in comp:
        if rt not in graph.stages:
            raise ConfigError(f"{sec.where('composition')}.{rt}: not a call-graph request type")
    _wrap(lambda: validate_composition(comp), sec.where("composition"))
    return AppConfig(services, graph, dict(comp))


def parse_trace(sec):
    sec.check_keys(["kind", "duration_s", "rps_min", "rps_avg", "rps_max", "seed", "path", "preset", "scale"])
    path = sec.get("path", None)
    if path is not None:
        return TraceConfig(path=str(path))
    kind = sec.get("kind", "diurnal")
    preset = sec.get("preset", None)
    scale = sec.num("scale", 1.0, lo=0)
    if preset is not None:
        try:
            app, pkind = str(preset).split("/")
            lo, avg, hi = TRACE_PRESETS[app][pkind]
        except (ValueError, KeyError):
            raise ConfigError(f"{sec.where('preset')}: unknown preset {preset!r}") from None
        kind = sec.get("kind", pkind if pkind in TRACE_KINDS else "noisy")
    else:
        lo = sec.num("rps_min", 20.0, lo=0)
        avg = sec.num("rps_avg", 40.0, lo=0)
        hi = sec.num("rps_max", 65.0, lo=0)
    if kind not in TRACE_KINDS:
        raise ConfigError(f"{sec.where('kind')}: expected one of {TRACE_KINDS}")
    lo, avg, hi = lo * scale, avg * scale, hi * scale
    if not lo <= avg <= hi:
        raise ConfigError(f"{sec.path}: need rps_min <= rps_avg <= rps_max")
    return TraceConfig(kind, sec.num("duration_s", 3600, lo=0, integer=True), lo, avg, hi,
                       sec.num("seed", 0, integer=True))


def parse_controller(sec):
    sec.check_keys(["kind", "captain", "tower", "k8s", "static", "targets"])
    kind = sec.get("kind", "autothrottle")
    if kind not in CONTROLLERS:
        raise ConfigError(f"{sec.where('kind')}: expected one of {CONTROLLERS}")
    c = sec.sub("captain")
    c.check_keys(["N", "M", "alpha", "beta_max", "beta_min", "initial_margin"])
    captain = _wrap(lambda: CaptainParams(c.num("N", 10, integer=True), c.num("M", 50, integer=True),
                                          c.num("alpha", 3.0), c.num("beta_max", 0.9), c.num("beta_min", 0.5)),
                    c.path)
    margin = c.num("initial_margin", 1.0, lo=0)
    t = sec.sub("tower")
    t.check_keys(["epsilon", "exploration_steps", "hold_steps", "learning_steps", "learning_epsilon",
                  "measure_epsilon", "training_samples", "bin_size", "model", "hidden_units",
                  "learning_rate", "alloc_norm_max_cores", "latency_norm_max_ms"])
    model = t.get("model", "nn")
    if model not in ("nn", "linear"):
        raise ConfigError(f"{t.where('model')}: expected 'nn' or 'linear'")
    tower = TowerSettings(
        epsilon=t.num("epsilon", 0.1, lo=0, hi=1),
        exploration_steps=t.num("exploration_steps", 360, lo=0, integer=True),
        hold_steps=t.num("hold_steps", 2, lo=1, integer=True),
        learning_steps=t.num("learning_steps", 0, lo=0, integer=True),
        learning_epsilon=t.num("learning_epsilon", None, lo=0, hi=1),
        measure_epsilon=t.num("measure_epsilon", None, lo=0, hi=1),
        training_samples=t.num("training_samples", 10_000, lo=0, integer=True),
        bin_size=t.num("bin_size", 20.0, lo=1e-9),
        model=model,
        hidden_units=t.num("hidden_units", 3, lo=1, integer=True),
        learning_rate=t.num("learning_rate", 0.5, lo=1e-12),
        alloc_norm_max_cores=t.num("alloc_norm_max_cores", None, lo=1e-9),
        latency_norm_max_ms=t.num("latency_norm_max_ms", None, lo=0),
    )
    k = sec.sub("k8s")
    k.check_keys(["measure_interval_s", "lookback_s", "threshold"])
    if kind == "k8s-fast":
        dm, ds = 1.0, 20.0
    else:
        dm, ds = 15.0, 300.0
    k8s = _wrap(lambda: K8sParams(k.num("measure_interval_s", dm), k.num("lookback_s", ds),
                                  k.num("threshold", 0.5)), k.path)
    st = sec.sub("static")
    st.check_keys(["default", "cores"])
    cores = st.get("cores", {}) or {}
    cs = _Section(cores, st.where("cores"))
    static_cores = {name: cs.num(name, lo=0) for name in cores}
    targets = sec.get("targets", {}) or {}
    ts = _Section(targets, sec.where("targets"))
    ts.check_keys(["High", "Low"])
    fixed = {}
    for g in targets:
        v = ts.num(g, lo=0)
        if v >= 1.0 / captain.alpha:
            raise ConfigError(f"{ts.where(g)}: target must be < 1/alpha")
        fixed[g] = v
    if kind == "fixed-targets" and not fixed:
        raise ConfigError(f"{sec.where('targets')}: required for fixed-targets controller")
    return ControllerConfig(kind, captain, margin, tower, k8s, st.num("default", None, lo=0), static_cores, fixed)


def parse_config(data):
    root = _Section(data, "")
    root.check_keys(["seed", "output_dir", "sim", "app", "trace", "train_trace", "slo", "controller", "durations",
                     "correlate", "sweep", "fluctuate"])
    s = root.sub("sim")
    s.check_keys(["period_ms", "periods_per_window", "hop_delay_ms"])
    seed = root.num("seed", 0, integer=True)
    sim = _wrap(lambda: SimConfig(s.num("period_ms", 100.0), s.num("periods_per_window", 10, integer=True),
                                  seed, s.num("hop_delay_ms", 1.0, lo=0)), s.path)
    app = parse_app(root.sub("app"))
    trace = parse_trace(root.sub("trace"))
    train_trace = parse_trace(root.sub("train_trace")) if root.get("train_trace", None) is not None else None
    slo = root.sub("slo")
    slo.check_keys(["percentile", "threshold_ms"])
    pct = slo.num("percentile", 0.99)
    if not 0 < pct < 1:
        raise ConfigError(f"{slo.where('percentile')}: must be in (0, 1)")
    slo_ms = slo.num("threshold_ms", 200.0, lo=1e-9)
    controller = parse_controller(root.sub("controller"))
    if controller.captain.N != sim.periods_per_window:
        raise ConfigError("controller.captain.N: must equal sim.periods_per_window")
    ids = [sv.id for sv in app.services]
    for name in controller.static_cores:
        if name not in ids:
            raise ConfigError(f"controller.static.cores.{name}: unknown service")
    d = root.sub("durations")
    d.check_keys(["warmup_step_s", "warmup_hold_s", "measure_hours"])
    durations = Durations(d.num("warmup_step_s", 5.0, lo=0), d.num("warmup_hold_s", 10.0, lo=0),
                          d.num("measure_hours", 1.0, lo=0))
    c = root.sub("correlate")
    c.check_keys(["services", "rps", "quota_lo", "quota_hi", "points", "duration_s", "others_cores"])
    csvc = c.get("services", None)
    if csvc is not None:
        if not isinstance(csvc, list):
            raise ConfigError(f"{c.where('services')}: expected a list")
        for name in csvc:
            if name not in ids:
                raise ConfigError(f"{c.where('services')}: unknown service {name!r}")
    correlate = CorrelateConfig(csvc, c.num("rps", 30.0, lo=0), c.num("quota_lo", None, lo=0),
                                c.num("quota_hi", None, lo=0), c.num("points", 40, integer=True),
                                c.num("duration_s", 120.0, lo=1e-9), c.num("others_cores", None, lo=0))
    sw = root.sub("sweep")
    sw.check_keys(["baseline", "thresholds"])
    base = sw.get("baseline", "k8s")
    if base not in ("k8s", "k8s-fast"):
        raise ConfigError(f"{sw.where('baseline')}: expected 'k8s' or 'k8s-fast'")
    ths = sw.get("thresholds", list(THRESHOLD_SWEEP))
    if not isinstance(ths, list) or not ths or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) or not 0 < x <= 1 for x in ths):
        raise ConfigError(f"{sw.where('thresholds')}: expected a list of values in (0, 1]")
    f = root.sub("fluctuate")
    f.check_keys(["base_rps", "half_ranges", "windows", "window_s"])
    hr = f.get("half_ranges", None)
    if hr is not None and (not isinstance(hr, list) or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0 for x in hr)):
        raise ConfigError(f"{f.where('half_ranges')}: expected a list of numbers >= 0")
    fluct = FluctuateConfig(f.num("base_rps", None, lo=0), hr, f.num("windows", 60, lo=1, integer=True),
                            f.num("window_s", 60.0, lo=1e-9))
    return ExperimentConfig(app, sim, trace, pct, slo_ms, controller, durations, correlate,
                            SweepConfig(base, tuple(ths)), fluct, seed, str(root.get("output_dir", "out")),
                            train_trace)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML syntax error: {exc}") from None
    return parse_config(data)

