"""
Per-slot scheduling rules.

Every rule maps a queue-length vector to a :class:`ScheduleOutcome`. Exact
ties in the weighted objective go to the decision with the smallest mask
(bit ``k`` set for pair ``k``); for single-pair decisions that is the
smallest pair index.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GuardError
from .rate_model import (DecisionVector, RateMode, Technique, derived_params,
                         interference_factor, phi, require_symmetric,
                         success_prob, svd_rate, symmetric_rate)

__all__ = [
    "QueueState",
    "ScheduleOutcome",
    "RateTable",
    "maxweight_brute",
    "top_l_schedule",
    "maxweight_symmetric",
    "approx_schedule",
    "svd_schedule",
    "switching_schedule",
    "TABLE_GUARD",
]

TABLE_GUARD = 20
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class QueueState:
    q: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        if any(not v >= 0 for v in q):
            raise ConfigError("queue lengths must be nonnegative")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class ScheduleOutcome:
    decision: DecisionVector
    technique: Technique
    objective: float


def _queues(q):
    if isinstance(q, QueueState):
        return list(q.q)
    vals = [float(v) for v in q]
    if any(not v >= 0 for v in vals):
        raise ConfigError("queue lengths must be nonnegative")
    return vals


def _weighted(rates, active, q):
    # Fixed summation order so equal decisions give bit-equal objectives.
    total = 0.0
    for k in active:
        total += rates[k] * q[k]
    return total


class RateTable:
    """
    Average rate of every pair under every decision.

    ``rates[mask, k]`` is the rate of pair ``k`` when the pairs in ``mask``
    are active (zero when ``k`` is inactive). For IMPERFECT and PERFECT
    tables ``success[mask, k]`` holds the per-stream success probability.
    """

    def __init__(self, n_pairs, mode, rates, success=None):
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (1 << n_pairs, n_pairs):
            raise ConfigError("rate table must have shape (2^n, n)")
        self.n_pairs = n_pairs
        self.mode = mode
        self.rates = rates
        self.success = success

    @classmethod
    def build(cls, cfg, mode):
        n = cfg.n_pairs
        if n > TABLE_GUARD:
            raise GuardError("rate table over 2^%d decisions exceeds the "
                             "guard of %d pairs" % (n, TABLE_GUARD))
        mode = RateMode(mode)
        masks = np.arange(1 << n)
        member = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
        sizes = member.sum(axis=1)
        rates = np.zeros((1 << n, n))
        success = None
        if mode is RateMode.SVD:
            for k in range(n):
                rates[1 << k, k] = svd_rate(cfg, k)
        elif mode is RateMode.PHI:
            tab = np.array([[phi(cfg, k, l) for l in range(1, n + 1)]
                            for k in range(n)])
            for mask in range(1, 1 << n):
                act = member[mask]
                rates[mask, act] = tab[act, sizes[mask] - 1]
        elif cfg.is_homogeneous and cfg.ia_feasible:
            by_size = [0.0] + [symmetric_rate(cfg, l, mode)
                               for l in range(1, n + 1)]
            one = [1.0] + [success_prob(cfg, range(l), 0, mode)
                           for l in range(1, n + 1)]
            success = np.zeros_like(rates)
            for mask in range(1, 1 << n):
                act = member[mask]
                rates[mask, act] = by_size[sizes[mask]]
                success[mask, act] = one[sizes[mask]]
        else:
            success = cls._general_success(cfg, mode, member)
            share = 1.0 - sizes * cfg.probe_cost
            rates = (share[:, None] * cfg.streams * cfg.stream_rate
                     * success)
        return cls(n, mode, rates, success)

    @staticmethod
    def _general_success(cfg, mode, member):
        n = cfg.n_pairs
        base = np.array([success_prob(cfg, [k], k, RateMode.PERFECT)
                         for k in range(n)])
        if mode is RateMode.PERFECT:
            return np.where(member, base[None, :], 0.0)
        derived_params(cfg)
        pl = cfg.path_loss
        factor = np.ones((n, n))
        for k in range(n):
            for i in range(n):
                if i != k:
                    factor[k, i] = interference_factor(pl[k][i] / pl[k][k], cfg)
        out = np.zeros(member.shape)
        chunk = 4096
        for start in range(0, member.shape[0], chunk):
            m = member[start:start + chunk]
            # picked[c, k, i] = factor[k, i] if i active else 1
            picked = np.where(m[:, None, :], factor[None, :, :], 1.0)
            mgf = picked.prod(axis=2)
            out[start:start + chunk] = np.where(m, base[None, :] * mgf, 0.0)
        return out

    def decision_rates(self, mask):
        return self.rates[mask]


def _best_mask(objs):
    top = objs.max()
    near = np.flatnonzero(objs >= top - _TIE_RTOL * abs(top))
    return int(near[0])


def maxweight_brute(rates, q):
    """Exhaustive Max-Weight decision over all ``2^n`` decisions."""
    q = _queues(q)
    n = rates.n_pairs
    if n > TABLE_GUARD:
        raise GuardError("exhaustive search beyond %d pairs" % TABLE_GUARD)
    if len(q) != n:
        raise ConfigError("queue vector length does not match the table")
    mask = _best_mask(rates.rates @ np.asarray(q))
    decision = DecisionVector.from_mask(n, mask)
    row = rates.rates[mask]
    tech = Technique.TDMA_SVD if rates.mode is RateMode.SVD else Technique.IA
    return ScheduleOutcome(decision, tech, _weighted(row, decision.active, q))


def _top_l(rate_by_size, q):
    n = len(q)
    # reverse sort is stable: equal queues keep ascending index order
    order = sorted(range(n), key=q.__getitem__, reverse=True)
    best_size = 0
    best_val = 0.0
    acc = 0.0
    for l in range(1, n + 1):
        acc += q[order[l - 1]]
        val = rate_by_size[l - 1] * acc
        if val > best_val:
            best_val = val
            best_size = l
    return tuple(sorted(order[:best_size]))


def top_l_schedule(rate_by_size, q):
    """
    Max-Weight decision when every active pair gets the same rate.

    ``rate_by_size[l-1]`` is the per-pair rate with ``l`` pairs active.
    Queues are sorted in descending order and the prefix length with the
    largest ``rate * prefix sum`` is kept (first strict improvement wins).
    """
    q = _queues(q)
    if len(rate_by_size) != len(q):
        raise ConfigError("need one rate per possible active count")
    active = _top_l(rate_by_size, q)
    size = len(active)
    obj = 0.0
    if size:
        obj = _weighted([rate_by_size[size - 1]] * len(q), active, q)
    return ScheduleOutcome(DecisionVector(len(q), active), Technique.IA, obj)


@functools.lru_cache(maxsize=256)
def _symmetric_rates(cfg, mode):
    require_symmetric(cfg)
    return tuple(symmetric_rate(cfg, l, mode)
                 for l in range(1, cfg.n_pairs + 1))


def maxweight_symmetric(cfg, q, mode=RateMode.IMPERFECT):
    """Sorted-prefix Max-Weight rule for symmetric systems."""
    q = _queues(q)
    if len(q) != cfg.n_pairs:
        raise ConfigError("queue vector length does not match n_pairs")
    return top_l_schedule(_symmetric_rates(cfg, mode), q)


@functools.lru_cache(maxsize=256)
def _phi_table(cfg):
    n = cfg.n_pairs
    return tuple(tuple(phi(cfg, k, l) for k in range(n))
                 for l in range(1, n + 1))


def _approx_active(table, q):
    n = len(q)
    best_ws = 0.0
    best = ()
    for l in range(1, n + 1):
        rates = table[l - 1]
        pro = [rates[k] * q[k] for k in range(n)]
        order = sorted(range(n), key=pro.__getitem__, reverse=True)
        ws = 0.0
        for k in order[:l]:
            ws += pro[k]
        if ws > best_ws:
            best_ws = ws
            best = tuple(sorted(order[:l]))
    return best


def approx_schedule(cfg, q):
    """
    Max-Weight against the mean-interference rates ``phi(cfg, k, l)``.

    For each active count ``l`` the ``l`` largest ``phi * q`` products are
    summed; the best count is kept. The reported objective is in the same
    ``phi`` units.
    """
    q = _queues(q)
    if len(q) != cfg.n_pairs:
        raise ConfigError("queue vector length does not match n_pairs")
    table = _phi_table(cfg)
    active = _approx_active(table, q)
    obj = _weighted(table[len(active) - 1], active, q) if active else 0.0
    return ScheduleOutcome(DecisionVector(len(q), active), Technique.IA, obj)


def svd_schedule(q, r_svd=1.0):
    """Serve the longest queue alone; ``r_svd`` scales the objective."""
    q = _queues(q)
    top = max(q) if q else 0.0
    if top <= 0.0:
        return ScheduleOutcome(DecisionVector(len(q), ()), Technique.TDMA_SVD,
                               0.0)
    k = q.index(top)
    return ScheduleOutcome(DecisionVector(len(q), (k,)), Technique.TDMA_SVD,
                           r_svd * top)


def switching_schedule(cfg, q, mode=RateMode.IMPERFECT):
    """Pick whichever of alignment Max-Weight and longest-queue SVD has the
    larger weighted rate; alignment wins exact ties."""
    ia = maxweight_symmetric(cfg, q, mode)
    svd = svd_schedule(q, svd_rate(cfg))
    return svd if svd.objective > ia.objective else ia
