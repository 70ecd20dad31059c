"""
Monte Carlo checks of the closed forms and slot-level queue simulation.

Random numbers come from :class:`RngStream`, a (seed, stream id) pair
mapped onto an independent numpy generator, so every replica and grid
point of a sweep can be reproduced on its own.
"""

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericFailureError
from .policies import (RateTable, _approx_active, _phi_table, _symmetric_rates,
                       _top_l)
from .rate_model import (RateMode, Technique, derived_params, pair_gain,
                         require_symmetric, success_prob, svd_rate,
                         svd_success_prob)

__all__ = [
    "RngStream",
    "ArrivalKind",
    "ArrivalSpec",
    "ServiceModel",
    "PolicyKind",
    "PolicySpec",
    "QueueTrajectory",
    "SweepPoint",
    "DIVERGENCE_FRACTION",
    "sample_stream_sinr",
    "empirical_success",
    "sample_svd_gain",
    "run_queue_sim",
    "arrival_sweep",
    "sweep_csv",
    "second_half_slope",
]

DIVERGENCE_FRACTION = 0.01
ARRIVAL_CAP_FACTOR = 50.0
_CHUNK = 8192


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by a seed and a stream id.

    ``stream_id`` may be an int or a tuple of ints, e.g. ``(grid, replica)``.
    """

    seed: int
    stream_id: object = 0

    def generator(self):
        key = self.stream_id
        key = tuple(key) if isinstance(key, (tuple, list)) else (int(key),)
        seq = np.random.SeedSequence(int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))


def _gen(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ConfigError("rng must be an RngStream or a numpy Generator")


def _active(cfg, active, k):
    act = tuple(sorted(set(int(i) for i in getattr(active, "active", active))))
    if k not in act:
        raise ConfigError("pair %r is not active" % (k,))
    if any(i < 0 or i >= cfg.n_pairs for i in act):
        raise ConfigError("pair index out of range")
    return act


def _sinr_draws(cfg, act, k, mode, gen, rows):
    d = cfg.streams
    gain = gen.exponential(1.0, size=(rows, d))
    signal = pair_gain(cfg, k) * gain
    if mode is RateMode.PERFECT or len(act) == 1:
        with np.errstate(divide="ignore"):
            return signal / cfg.noise_var
    dp = derived_params(cfg)
    resid = np.zeros((rows, d))
    for i in act:
        if i == k:
            continue
        err = gen.gamma(dp.quant_order, 1.0 / dp.quant_gain, size=(rows, d))
        if dp.shape_b > 0:
            proj = gen.beta(dp.shape_a, dp.shape_b, size=(rows, d))
        else:
            proj = np.ones((rows, d))
        resid += pair_gain(cfg, k, i) * d * err * proj
    with np.errstate(divide="ignore"):
        return signal / (cfg.noise_var + resid)


def sample_stream_sinr(cfg, active, k, mode, rng, size=None):
    """
    Draw per-stream SINRs of pair ``k``.

    Desired gain is Exp(1). With quantized channel state every other active
    pair adds ``pair_gain * streams * X * Y`` of leakage, X ~ Gamma(Q, rate
    2^(bits/Q)) and Y ~ Beta(shape_a, shape_b).

    Returns an array of shape ``(streams,)``, or ``(size, streams)`` when
    ``size`` is given.
    """
    mode = RateMode(mode)
    act = _active(cfg, active, k)
    out = _sinr_draws(cfg, act, k, mode, _gen(rng), 1 if size is None else size)
    return out[0] if size is None else out


def empirical_success(cfg, active, k, mode, n, rng):
    """Fraction of sampled streams whose SINR clears the threshold, and its
    binomial standard error over ``n * streams`` streams."""
    if n < 1000:
        raise ConfigError("need at least 1000 samples")
    mode = RateMode(mode)
    act = _active(cfg, active, k)
    gen = _gen(rng)
    hits = 0
    done = 0
    while done < n:
        rows = min(100_000, n - done)
        sinr = _sinr_draws(cfg, act, k, mode, gen, rows)
        hits += int(np.count_nonzero(sinr >= cfg.threshold))
        done += rows
    total = n * cfg.streams
    p = hits / total
    return p, math.sqrt(p * (1.0 - p) / total)


def _eig_draws(cfg, gen, rows):
    nr, nt = cfg.n_rx, cfg.n_tx
    for _ in range(3):
        h = (gen.standard_normal((rows, nr, nt))
             + 1j * gen.standard_normal((rows, nr, nt))) / math.sqrt(2.0)
        try:
            lam = np.linalg.eigvalsh(h @ np.conj(np.swapaxes(h, 1, 2)))
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(lam).all():
            # HH^H is nr x nr; when nr > nt only nt eigenvalues are nonzero
            top = lam[:, nr - min(nr, nt):]
            pick = gen.integers(0, top.shape[1], size=rows)
            return np.clip(top[np.arange(rows), pick], 0.0, None)
    raise NumericFailureError("eigen-decomposition failed three times")


def sample_svd_gain(cfg, rng, size=None, k=0):
    """
    SNR of one eigen-mode of pair ``k``: a random Nr x Nt complex Gaussian
    channel, one of the nonzero eigenvalues of ``H H^H`` picked uniformly,
    scaled by ``path_loss * power / (n_tx * noise_var)``.
    """
    gen = _gen(rng)
    rows = 1 if size is None else int(size)
    out = np.empty(rows)
    scale_num = cfg.path_loss[k][k] * cfg.power
    scale_den = cfg.n_tx * cfg.noise_var
    done = 0
    while done < rows:
        m = min(50_000, rows - done)
        lam = _eig_draws(cfg, gen, m)
        with np.errstate(divide="ignore"):
            out[done:done + m] = scale_num * lam / scale_den
        done += m
    return float(out[0]) if size is None else out


class ArrivalKind(enum.Enum):
    POISSON = "poisson"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class ArrivalSpec:
    """Per-pair mean arrivals in bits per slot, truncated at ``cap``."""

    kind: ArrivalKind
    means: tuple
    cap: float = None

    def __post_init__(self):
        means = tuple(float(a) for a in self.means)
        if any(not (a >= 0 and math.isfinite(a)) for a in means):
            raise ConfigError("arrival means must be finite and nonnegative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "kind", ArrivalKind(self.kind))
        cap = self.cap
        if cap is None:
            cap = ARRIVAL_CAP_FACTOR * max(means, default=0.0)
        if cap < max(means, default=0.0):
            raise ConfigError("arrival cap below a mean arrival rate")
        object.__setattr__(self, "cap", float(cap))

    @classmethod
    def uniform(cls, n_pairs, mean, kind=ArrivalKind.POISSON):
        return cls(kind, (mean,) * n_pairs)

    def draw(self, gen, rows):
        means = np.asarray(self.means)
        if self.kind is ArrivalKind.DETERMINISTIC:
            return np.broadcast_to(means, (rows, means.size)).astype(float)
        return np.minimum(gen.poisson(means, size=(rows, means.size)),
                          self.cap).astype(float)


class ServiceModel(enum.Enum):
    ANALYTIC_BERNOULLI = "analytic_bernoulli"
    DISTRIBUTIONAL = "distributional"


class PolicyKind(enum.Enum):
    MAXWEIGHT = "maxweight"
    MAXWEIGHT_SYMMETRIC = "maxweight_symmetric"
    APPROX = "approx"
    SVD = "svd"
    SWITCHING = "switching"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    mode: RateMode = RateMode.IMPERFECT

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "mode", RateMode(self.mode))
        if self.mode not in (RateMode.IMPERFECT, RateMode.PERFECT):
            raise ConfigError("policy mode must be IMPERFECT or PERFECT")

    @property
    def name(self):
        if self.kind is PolicyKind.SVD:
            return self.kind.value
        return "%s_%s" % (self.kind.value, self.mode.value)


def _decider(cfg, policy):
    """Build ``q -> (active tuple, technique)`` for the slot loop."""
    kind = policy.kind
    n = cfg.n_pairs
    if kind is PolicyKind.SVD:
        def decide(q):
            top = max(q)
            if top <= 0.0:
                return (), Technique.TDMA_SVD
            return (q.index(top),), Technique.TDMA_SVD
        return decide
    if kind is PolicyKind.MAXWEIGHT:
        table = RateTable.build(cfg, policy.mode).rates
        sets = [tuple(k for k in range(n) if m >> k & 1)
                for m in range(1 << n)]

        def decide(q):
            objs = table @ np.asarray(q)
            top = objs.max()
            mask = int(np.flatnonzero(objs >= top - 1e-12 * abs(top))[0])
            return sets[mask], Technique.IA
        return decide
    if kind is PolicyKind.APPROX:
        phi_tab = _phi_table(cfg)
        return lambda q: (_approx_active(phi_tab, q), Technique.IA)
    rates = _symmetric_rates(cfg, policy.mode)
    if kind is PolicyKind.MAXWEIGHT_SYMMETRIC:
        return lambda q: (_top_l(rates, q), Technique.IA)
    r_svd = svd_rate(cfg)

    def decide(q):
        act = _top_l(rates, q)
        ia_obj = rates[len(act) - 1] * sum(q[k] for k in act) if act else 0.0
        top = max(q)
        if r_svd * top > ia_obj:
            return (q.index(top),), Technique.TDMA_SVD
        return act, Technique.IA
    return decide


class _SuccessLookup:
    """Per-stream success probabilities of the pairs in a decision."""

    def __init__(self, cfg, mode):
        self.cfg = cfg
        self.mode = mode
        self.cache = {}
        self.svd = [None] * cfg.n_pairs

    def ia(self, act):
        hit = self.cache.get(act)
        if hit is None:
            hit = [success_prob(self.cfg, act, k, self.mode) for k in act]
            self.cache[act] = hit
        return hit

    def tdma(self, k):
        if self.svd[k] is None:
            self.svd[k] = svd_success_prob(self.cfg, k)
        return self.svd[k]


@dataclass
class QueueTrajectory:
    """Outcome of one queue simulation.

    ``total_queue[t]`` is the summed queue length at the start of slot
    ``t``; ``slope`` is the least-squares slope of that series over the
    second half of the horizon.
    """

    horizon: int
    total_queue: np.ndarray
    avg_queue: np.ndarray
    slope: float
    divergent: bool
    ia_share: float
    served: np.ndarray = field(repr=False)

    @property
    def total_avg_queue(self):
        return float(self.avg_queue.sum())


def second_half_slope(series):
    y = np.asarray(series, dtype=float)
    half = y[y.size // 2:]
    if half.size < 2:
        return 0.0
    t = np.arange(half.size, dtype=float)
    t -= t.mean()
    return float(t @ (half - half.mean()) / (t @ t))


def _check_policy(cfg, policy):
    if policy.kind in (PolicyKind.MAXWEIGHT_SYMMETRIC, PolicyKind.SWITCHING):
        require_symmetric(cfg)


def run_queue_sim(cfg, policy, arrivals, horizon, service_model, rng):
    """
    Simulate ``horizon`` slots of the queue recursion
    ``q <- max(q - served, 0) + arrivals`` under ``policy``.

    Each active pair is served ``(1 - L * probe_cost) * stream_rate`` bits
    per decoded stream. Under ANALYTIC_BERNOULLI a stream decodes with its
    closed-form success probability; under DISTRIBUTIONAL a sampled SINR is
    compared with the threshold.
    """
    policy = policy if isinstance(policy, PolicySpec) else PolicySpec(policy)
    service_model = ServiceModel(service_model)
    horizon = int(horizon)
    if horizon < 1:
        raise ConfigError("horizon must be at least one slot")
    n = cfg.n_pairs
    if len(arrivals.means) != n:
        raise ConfigError("arrival means must have one entry per pair")
    _check_policy(cfg, policy)
    gen = _gen(rng)
    decide = _decider(cfg, policy)
    probs = _SuccessLookup(cfg, policy.mode)
    d = cfg.streams
    theta = cfg.probe_cost
    rate = cfg.stream_rate
    tau = cfg.threshold
    analytic = service_model is ServiceModel.ANALYTIC_BERNOULLI

    q = [0.0] * n
    history = []
    served = np.zeros(n)
    ia_slots = 0
    t = 0
    while t < horizon:
        rows = min(_CHUNK, horizon - t)
        arr = arrivals.draw(gen, rows).tolist()
        if analytic:
            draws = gen.random((rows, n * d)).tolist()
        for r in range(rows):
            history.append(q[:])
            act, tech = decide(q)
            if tech is Technique.IA:
                ia_slots += 1
            if act:
                share = (1.0 - len(act) * theta) * rate
                if tech is Technique.IA:
                    p_act = probs.ia(act) if analytic else None
                else:
                    p_act = [probs.tdma(act[0])] if analytic else None
                for j, k in enumerate(act):
                    if analytic:
                        u = draws[r]
                        p = p_act[j]
                        ok = 0
                        for m in range(k * d, k * d + d):
                            if u[m] < p:
                                ok += 1
                    elif tech is Technique.IA:
                        sinr = _sinr_draws(cfg, act, k, policy.mode, gen, 1)
                        ok = int(np.count_nonzero(sinr >= tau))
                    else:
                        snr = sample_svd_gain(cfg, gen, size=d, k=k)
                        ok = int(np.count_nonzero(snr >= tau))
                    if ok:
                        amount = share * ok
                        served[k] += min(amount, q[k])
                        q[k] = q[k] - amount if q[k] > amount else 0.0
            row = arr[r]
            for k in range(n):
                q[k] += row[k]
            t += 1
    hist = np.asarray(history)
    totals = hist.sum(axis=1)
    slope = second_half_slope(totals)
    limit = DIVERGENCE_FRACTION * sum(arrivals.means)
    return QueueTrajectory(
        horizon=horizon,
        total_queue=totals,
        avg_queue=hist.mean(axis=0),
        slope=slope,
        divergent=bool(slope > limit),
        ia_share=ia_slots / horizon,
        served=served,
    )


@dataclass(frozen=True)
class SweepPoint:
    a: float
    total_avg_queue: float
    stderr: float
    policy: str
    technique_share_ia: float
    divergent: bool
    slope: float


def _sweep_task(args):
    cfg, policy, a, horizon, service_model, seed, stream = args
    traj = run_queue_sim(cfg, policy, ArrivalSpec.uniform(cfg.n_pairs, a),
                         horizon, service_model, RngStream(seed, stream))
    return traj.total_avg_queue, traj.ia_share, traj.slope


def arrival_sweep(cfg, policy, a_grid, horizon, replicas, seed,
                  service_model=ServiceModel.ANALYTIC_BERNOULLI, workers=1,
                  stream_prefix=()):
    """
    Total average queue length against a grid of uniform arrival means.

    Replica ``r`` of grid point ``g`` uses stream ``stream_prefix + (g, r)``.
    A grid point is divergent when the mean second-half slope over its
    replicas exceeds ``DIVERGENCE_FRACTION`` of the total arrival rate.
    """
    policy = policy if isinstance(policy, PolicySpec) else PolicySpec(policy)
    grid = [float(a) for a in a_grid]
    if not grid:
        raise ConfigError("arrival grid is empty")
    if replicas < 1:
        raise ConfigError("need at least one replica")
    prefix = tuple(stream_prefix)
    tasks = [(cfg, policy, a, horizon, ServiceModel(service_model), seed,
              prefix + (g, r))
             for g, a in enumerate(grid) for r in range(replicas)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    out = []
    for g, a in enumerate(grid):
        chunk = results[g * replicas:(g + 1) * replicas]
        totals = np.array([c[0] for c in chunk])
        err = (float(totals.std(ddof=1) / math.sqrt(replicas))
               if replicas > 1 else 0.0)
        slope = float(np.mean([c[2] for c in chunk]))
        out.append(SweepPoint(
            a=a,
            total_avg_queue=float(totals.mean()),
            stderr=err,
            policy=policy.name,
            technique_share_ia=float(np.mean([c[1] for c in chunk])),
            divergent=bool(slope > DIVERGENCE_FRACTION * a * cfg.n_pairs),
            slope=slope,
        ))
    return out


def sweep_csv(points):
    lines = ["a,total_avg_queue,stderr,policy,technique_share_ia"]
    for p in points:
        lines.append("%r,%r,%r,%s,%r" % (p.a, p.total_avg_queue, p.stderr,
                                          p.policy, p.technique_share_ia))
    return "\n".join(lines) + "\n"
