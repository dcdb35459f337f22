"""Application-level controller: a contextual bandit over pairs of throttle targets.

Once per step (one simulated minute) the tower turns the finished minute into a
cost, files it under ``(rps bin, action)``, refits a cost regressor on samples
drawn from the per-group medians and picks the next action: the predicted
cheapest pair, or one of its ladder neighbours with total probability epsilon.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .stats import NoData, low_median, percentile

LADDER = (0.00, 0.02, 0.04, 0.06, 0.10, 0.15, 0.20, 0.25, 0.30)
N_LEVELS = len(LADDER)
HIGH, LOW = "High", "Low"


class ActionPair(NamedTuple):
    """1-based ladder indices: ``i`` for the High-usage cluster, ``j`` for Low."""
    i: int
    j: int

    @property
    def index(self):
        return (self.i - 1) * N_LEVELS + (self.j - 1)

    @classmethod
    def from_index(cls, k):
        return cls(k // N_LEVELS + 1, k % N_LEVELS + 1)

    def targets(self, ladder=LADDER):
        return ladder[self.i - 1], ladder[self.j - 1]


ALL_ACTIONS = tuple(ActionPair.from_index(k) for k in range(N_LEVELS * N_LEVELS))


@dataclass(frozen=True)
class TowerParams:
    slo_ms: float = 200.0
    slo_percentile: float = 0.99
    step_s: float = 60.0
    epsilon: float = 0.10
    exploration_stage_steps: int = 360
    exploration_hold_steps: int = 2
    training_samples_per_update: int = 10_000
    bin_size: float = 20.0
    alloc_norm_max_cores: float = 160.0
    latency_norm_max_ms: float = None
    model: str = "nn"
    hidden_units: int = 3
    learning_rate: float = 0.5
    initial_action: ActionPair = ActionPair(1, 1)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        if self.latency_norm_max_ms is None:
            object.__setattr__(self, "latency_norm_max_ms", 5.0 * self.slo_ms)
        if not self.slo_ms < self.latency_norm_max_ms:
            raise ValueError("slo_ms must be below latency_norm_max_ms")
        if not 0 < self.slo_percentile <= 1:
            raise ValueError("slo_percentile must be in (0, 1]")
        if self.bin_size <= 0:
            raise ValueError("bin_size must be positive")
        if self.alloc_norm_max_cores <= 0:
            raise ValueError("alloc_norm_max_cores must be positive")
        if self.exploration_hold_steps < 1:
            raise ValueError("exploration_hold_steps must be >= 1")
        if self.model not in ("nn", "linear"):
            raise ValueError("model must be 'nn' or 'linear'")


def context_bin(avg_rps, bin_size=20.0):
    return max(0, int(math.floor(avg_rps / bin_size)))


# -- clustering ---------------------------------------------------------------

def _best_split_centroids(xs):
    """Centroids of the minimum-SSE split of sorted ``xs`` into a low and a high run."""
    n = len(xs)
    pre = np.concatenate([[0.0], np.cumsum(xs)])
    pre2 = np.concatenate([[0.0], np.cumsum(np.square(xs))])
    best = None
    for c in range(1, n):
        lo_s, hi_s = pre[c], pre[n] - pre[c]
        sse = (pre2[c] - lo_s * lo_s / c) + (pre2[n] - pre2[c] - hi_s * hi_s / (n - c))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, lo_s / c, hi_s / (n - c))
    return best[1], best[2]


def kmeans_1d(values, k, max_iter=100):
    """Lloyd's algorithm on scalars.

    For k=2 it starts from the best contiguous split of the sorted values (in one
    dimension that split is the global optimum, so Lloyd's only confirms it);
    otherwise it is seeded at evenly spaced order statistics.

    Returns a label per value; label 0 is the cluster with the largest centroid.
    Every label in ``range(min(k, n))`` is non-empty.
    """
    n = len(values)
    if n == 0:
        return []
    k = min(k, n)
    order = sorted(range(n), key=lambda t: values[t])
    xs = [values[t] for t in order]
    if k == 1:
        return [0] * n
    if k == 2:
        cents = list(_best_split_centroids(xs))
    else:
        cents = [xs[round(q * (n - 1) / (k - 1))] for q in range(k)]
    assign = None
    for _ in range(max_iter):
        new = []
        for x in xs:
            best = min(range(k), key=lambda c: (abs(x - cents[c]), c))
            new.append(best)
        if new == assign:
            break
        assign = new
        for c in range(k):
            members = [x for x, a in zip(xs, assign) if a == c]
            if members:
                cents[c] = sum(members) / len(members)
    # degenerate data (ties) can leave groups empty; split by sorted rank instead
    if len(set(assign)) < k:
        assign = [min(r * k // n, k - 1) for r in range(n)]
        cents = []
        for c in range(k):
            members = [x for x, a in zip(xs, assign) if a == c]
            cents.append(sum(members) / len(members))
    rank = sorted(range(k), key=lambda c: (-cents[c], -c))
    relabel = {c: r for r, c in enumerate(rank)}
    labels = [0] * n
    for pos, t in enumerate(order):
        labels[t] = relabel[assign[pos]]
    return labels


def cluster_services(avg_cpu_usage, k=2, seed=0):
    """Group services by average CPU usage; with k=2 the groups are High/Low.

    Initialisation is deterministic, so ``seed`` does not change the result.
    """
    names = list(avg_cpu_usage)
    vals = [float(avg_cpu_usage[s]) for s in names]
    if any(not math.isfinite(v) or v < 0 for v in vals):
        raise ValueError("usages must be finite and >= 0")
    if len(names) < k:
        if k == 2 and len(names) == 1:
            return {names[0]: HIGH}
        return {s: f"G{r}" for r, s in enumerate(names)}
    labels = kmeans_1d(vals, k)
    if k == 2:
        return {s: (HIGH if lab == 0 else LOW) for s, lab in zip(names, labels)}
    return {s: f"G{lab}" for s, lab in zip(names, labels)}


# -- cost ------------------------------------------------------------------------

def compute_cost(slo_met, total_alloc_cores, tail_latency_ms, params):
    if total_alloc_cores < 0:
        raise ValueError("allocation must be >= 0")
    if slo_met:
        return min(max(total_alloc_cores / params.alloc_norm_max_cores, 0.0), 1.0)
    span = params.latency_norm_max_ms - params.slo_ms
    return 2.0 + min(max((tail_latency_ms - params.slo_ms) / span, 0.0), 1.0)


# -- samples -------------------------------------------------------------------------

class SampleStore:
    """(context bin, action) -> observed raw costs; the group label is their median.

    Even-sized groups take the lower of the two middle values: a two-sample group
    holding one outlier keeps the clean cost instead of their average.
    """

    def __init__(self):
        self.groups = {}

    def __len__(self):
        return len(self.groups)

    def record(self, bin, action, raw_cost):
        key = (int(bin), ActionPair(*action))
        self.groups.setdefault(key, []).append(float(raw_cost))
        return low_median(self.groups[key])

    def label(self, bin, action):
        return low_median(self.groups[(int(bin), ActionPair(*action))])

    def max_bin(self):
        return max((b for b, _ in self.groups), default=0)


def record_step(store, bin, action, raw_cost):
    return store.record(bin, action, raw_cost)


def build_training_set(store, n=10_000, rng=None):
    """Draw ``n`` (bin, action, group median) rows uniformly over groups, with replacement."""
    if n <= 0 or not store.groups:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    keys = list(store.groups)
    labels = [low_median(store.groups[k]) for k in keys]
    picks = rng.integers(0, len(keys), size=n)
    return [(keys[p][0], keys[p][1], labels[p]) for p in picks]


def build_raw_training_set(store, n=10_000, rng=None):
    """Ablation: rows drawn uniformly over individual observations with their raw costs."""
    if n <= 0 or not store.groups:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    flat = [(k[0], k[1], c) for k, costs in store.groups.items() for c in costs]
    picks = rng.integers(0, len(flat), size=n)
    return [flat[p] for p in picks]


# -- model ---------------------------------------------------------------------------

class CostModel:
    """Per-action cost regressor over the context.

    Each of the 81 actions owns a linear output head over a shared context
    encoding: a one-hot indicator of the RPS bin plus either a tanh layer of
    ``hidden_units`` units over the scaled bin (``kind="nn"``) or the scaled
    bin itself (``kind="linear"``). The indicator lets a head fit every
    observed bin exactly; the continuous part carries a head to bins it has
    not seen. Head biases start at ``prior_cost``, above every attainable
    cost, so an action that was never observed is never predicted cheapest.

    Fitting is ``epochs`` passes of per-coordinate adaptive SGD, restarted
    from the same seeded initialisation on every refit.
    """

    def __init__(self, kind="nn", hidden_units=3, learning_rate=0.5, prior_cost=3.25,
                 batch_size=32, epochs=1, seed=0):
        if kind not in ("nn", "linear"):
            raise ValueError("kind must be 'nn' or 'linear'")
        self.kind = kind
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.prior_cost = prior_cost
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.scale = 1.0
        self.bins = {}
        self._reset()

    def _reset(self, n_bins=0):
        rng = np.random.default_rng(self.seed)
        h = self.hidden_units if self.kind == "nn" else 1
        self.w1 = rng.normal(0.0, 2.0, h)
        self.b1 = rng.uniform(-1.0, 1.0, h)
        self.v = np.zeros((len(ALL_ACTIONS), h + n_bins))
        self.c = np.full(len(ALL_ACTIONS), self.prior_cost)

    def _hidden(self, x):
        if self.kind == "nn":
            return np.tanh(np.outer(x, self.w1) + self.b1)
        return x[:, None]

    def _features(self, x, slots):
        h = self._hidden(x)
        onehot = np.zeros((len(x), len(self.bins)))
        hit = slots >= 0
        onehot[np.flatnonzero(hit), slots[hit]] = 1.0
        return h, np.hstack([h, onehot])

    def fit(self, rows):
        self.bins = {}
        if not rows:
            self._reset()
            return self
        bins = np.array([r[0] for r in rows], dtype=float)
        for b in sorted(set(int(b) for b in bins)):
            self.bins[b] = len(self.bins)
        self._reset(len(self.bins))
        slots = np.array([self.bins[int(b)] for b in bins], dtype=int)
        acts = np.array([ActionPair(*r[1]).index for r in rows], dtype=int)
        y = np.array([r[2] for r in rows], dtype=float)
        self.scale = max(1.0, float(bins.max()))
        x = bins / self.scale
        nh = self.w1.shape[0]
        lr = self.learning_rate
        eps = 1e-8
        g_w1 = np.zeros_like(self.w1)
        g_b1 = np.zeros_like(self.b1)
        g_v = np.zeros_like(self.v)
        g_c = np.zeros_like(self.c)
        bs = self.batch_size
        for _ in range(self.epochs):
            for start in range(0, len(y), bs):
                xb = x[start:start + bs]
                ab = acts[start:start + bs]
                h, phi = self._features(xb, slots[start:start + bs])
                err = np.einsum("bk,bk->b", self.v[ab], phi) + self.c[ab] - y[start:start + bs]
                dv = np.zeros_like(self.v)
                np.add.at(dv, ab, err[:, None] * phi)
                dc = np.bincount(ab, weights=err, minlength=len(self.c))
                if self.kind == "nn":
                    dh = err[:, None] * self.v[ab, :nh] * (1.0 - h * h)
                    dw1 = (dh * xb[:, None]).sum(axis=0)
                    db1 = dh.sum(axis=0)
                    g_w1 += dw1 * dw1
                    g_b1 += db1 * db1
                    self.w1 -= lr * dw1 / (np.sqrt(g_w1) + eps)
                    self.b1 -= lr * db1 / (np.sqrt(g_b1) + eps)
                g_v += dv * dv
                g_c += dc * dc
                self.v -= lr * dv / (np.sqrt(g_v) + eps)
                self.c -= lr * dc / (np.sqrt(g_c) + eps)
        return self

    def predict(self, bin):
        """Predicted cost of every action at ``bin`` as a 9x9 array indexed [i-1, j-1]."""
        slot = np.array([self.bins.get(int(bin), -1)])
        _, phi = self._features(np.array([bin / self.scale], dtype=float), slot)
        return (self.v @ phi[0] + self.c).reshape(N_LEVELS, N_LEVELS)


def best_action(costs):
    """Argmin over the 9x9 cost grid; ties go to the larger i + j, then larger i."""
    flat = np.asarray(costs).ravel()
    lo = flat.min()
    best = None
    for k in np.flatnonzero(flat == lo):
        a = ActionPair.from_index(int(k))
        key = (a.i + a.j, a.i)
        if best is None or key > best[0]:
            best = (key, a)
    return best[1]


def train_and_predict(model, training_set, bin):
    model.fit(training_set)
    return best_action(model.predict(bin))


# -- exploration ----------------------------------------------------------------------

def neighbors(action):
    i, j = action
    cand = [(i, j - 1), (i, j + 1), (i - 1, j), (i + 1, j)]
    return [ActionPair(a, b) for a, b in cand if 1 <= a <= N_LEVELS and 1 <= b <= N_LEVELS]


def select_action(best, epsilon, rng):
    """Return ``best`` w.p. 1 - eps, else one of its 4 ladder neighbours w.p. eps/4 each.

    Neighbours that fall off the ladder give their share back to ``best``.
    """
    best = ActionPair(*best)
    if epsilon <= 0:
        return best
    u = rng.random()
    if u >= epsilon:
        return best
    i, j = best
    slot = min(int(u / (epsilon / 4.0)), 3)
    a, b = [(i, j - 1), (i, j + 1), (i - 1, j), (i + 1, j)][slot]
    if 1 <= a <= N_LEVELS and 1 <= b <= N_LEVELS:
        return ActionPair(a, b)
    return best


def random_action(rng):
    return ALL_ACTIONS[int(rng.integers(0, len(ALL_ACTIONS)))]


def exploration_stage_step(step_index, rng, held=None, hold_steps=2):
    """Random exploration with holds of ``hold_steps``; only the last step of a hold trains."""
    pos = step_index % hold_steps
    if pos == 0 or held is None:
        held = random_action(rng)
    return held, pos == hold_steps - 1


# -- the controller -------------------------------------------------------------------------

@dataclass
class WindowMetrics:
    start_ms: float
    end_ms: float
    latencies: list
    avg_rps: float
    total_alloc_cores: float
    usage_cores: dict = None
    throttle_counts: dict = None
    quota_cores: dict = None


@dataclass
class TowerDecision:
    step: int
    rps: float
    bin: int
    action: ActionPair
    targets: tuple
    raw_cost: float
    group_median: float
    slo_met: bool
    tail_latency_ms: float
    total_alloc_cores: float
    exploring: bool
    recorded: bool
    next_action: ActionPair


class Tower:
    def __init__(self, params, ladder=LADDER, rng=None, denoise=True):
        self.params = params
        self.ladder = ladder
        self.rng = rng if rng is not None else np.random.default_rng(params.seed)
        self.store = SampleStore()
        self.model = CostModel(params.model, params.hidden_units, params.learning_rate, seed=params.seed)
        self.epsilon = params.epsilon
        self.denoise = denoise
        self.step_index = 0
        self.log = []
        self.last_best = None
        if params.exploration_stage_steps > 0:
            self.action, self._train_flag = exploration_stage_step(
                0, self.rng, None, params.exploration_hold_steps)
            self.exploring = True
        else:
            self.action, self._train_flag = ActionPair(*params.initial_action), True
            self.exploring = False

    def targets(self, action=None):
        return ActionPair(*(action or self.action)).targets(self.ladder)

    def set_epsilon(self, epsilon):
        if not 0 <= epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        self.epsilon = epsilon

    def evaluate(self, metrics):
        """Bin, SLO verdict, tail latency and cost for one finished step."""
        p = self.params
        b = context_bin(metrics.avg_rps, p.bin_size)
        try:
            tail = percentile(metrics.latencies, p.slo_percentile)
        except NoData:
            tail = 0.0
        met = tail <= p.slo_ms
        return b, met, tail, compute_cost(met, metrics.total_alloc_cores, tail, p)

    def feedback(self, bin, cost):
        """File ``cost`` for the action that just ran (if this step trains) and advance the step clock.

        Returns the group label, or nan when the step was not recorded.
        """
        recorded = bool(self._train_flag)
        label = self.store.record(bin, self.action, cost) if recorded else float("nan")
        self.step_index += 1
        return label

    def choose(self, bin):
        """Pick the action for the coming step given its context ``bin``."""
        p = self.params
        if self.step_index < p.exploration_stage_steps:
            self.action, self._train_flag = exploration_stage_step(
                self.step_index, self.rng, self.action, p.exploration_hold_steps)
            self.exploring = True
            return self.action
        self.exploring = False
        self._train_flag = True
        if not self.store.groups:
            return self.action
        if self.denoise:
            rows = build_training_set(self.store, p.training_samples_per_update, self.rng)
        else:
            rows = build_raw_training_set(self.store, p.training_samples_per_update, self.rng)
        best = train_and_predict(self.model, rows, bin)
        self.last_best = best
        self.action = select_action(best, self.epsilon, self.rng)
        return self.action

    def step(self, metrics):
        """Consume the finished step's metrics and return the targets for the next step.

        The finished minute's bin also serves as the context for the next one.
        """
        ran = self.action
        if metrics is None or not metrics.latencies:
            self.step_index += 1
            return self.targets()
        b, met, tail, cost = self.evaluate(metrics)
        recorded = bool(self._train_flag)
        exploring = self.exploring
        label = self.feedback(b, cost)
        self.choose(b)
        self.log.append(TowerDecision(self.step_index - 1, metrics.avg_rps, b, ran, self.targets(ran),
                                      cost, label, met, tail, metrics.total_alloc_cores,
                                      exploring, recorded, self.action))
        return self.targets()
