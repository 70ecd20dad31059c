"""
Average-rate and success-probability formulas for interference alignment
with quantized cross-link channel state, and for single-pair SVD transmission.

A transmission of ``streams`` data streams succeeds stream by stream when
its SINR clears ``threshold``. With ``L`` pairs active, ``L * probe_cost`` of
the slot is spent acquiring channel state, so a successful stream carries
``(1 - L * probe_cost) * stream_rate`` bits.

Pair indices are 0-based throughout. A decision is either a
:class:`DecisionVector` or any iterable of active pair indices.
"""

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError, NumericFailureError
from .numerics import laguerre_coeffs, log_gauss_2f1, upper_inc_gamma

__all__ = [
    "RateMode",
    "ApproxOrder",
    "Technique",
    "SystemConfig",
    "DerivedParams",
    "DecisionVector",
    "derived_params",
    "pair_gain",
    "g_factor",
    "interference_factor",
    "mgf_residual",
    "success_prob",
    "avg_rate_user",
    "require_symmetric",
    "symmetric_F",
    "symmetric_rate",
    "total_rate_curve",
    "svd_success_prob",
    "svd_rate",
    "gbar",
    "phi",
    "approx_rate",
]


class RateMode(enum.Enum):
    IMPERFECT = "imperfect"
    PERFECT = "perfect"
    SVD = "svd"
    PHI = "phi"


class ApproxOrder(enum.Enum):
    FIRST = "first"
    SECOND = "second"


class Technique(enum.Enum):
    IA = "IA"
    TDMA_SVD = "TDMA_SVD"


@dataclass(frozen=True)
class SystemConfig:
    """
    Physical and protocol parameters of the interference network.

    Parameters
    ----------
    n_pairs : int
        Number of transmitter/receiver pairs.
    n_tx, n_rx : int
        Antennas per transmitter and per receiver.
    streams : int
        Data streams per pair.
    power : float
        Transmit power per transmitter, split equally over its streams.
    noise_var : float
        Receiver noise variance.
    probe_cost : float
        Slot fraction spent acquiring one pair's channel state.
    bits : int
        Quantization bits per cross-link channel vector.
    threshold : float
        SINR needed for a stream to be decoded.
    stream_rate : float
        Bits carried by one successful stream in a full slot.
    path_loss : tuple of tuple of float
        ``path_loss[k][i]`` is the attenuation from transmitter ``i`` to
        receiver ``k``.
    """

    n_pairs: int
    n_tx: int
    n_rx: int
    streams: int
    power: float
    noise_var: float
    probe_cost: float
    bits: int
    threshold: float
    stream_rate: float
    path_loss: tuple

    def __post_init__(self):
        pl = tuple(tuple(float(v) for v in row) for row in self.path_loss)
        object.__setattr__(self, "path_loss", pl)
        for name in ("n_pairs", "n_tx", "n_rx", "streams", "bits"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError("%s must be an integer, got %r" % (name, value))
            object.__setattr__(self, name, int(value))
        for name in ("power", "noise_var", "probe_cost", "threshold",
                     "stream_rate"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ConfigError("%s must be finite" % name)
            object.__setattr__(self, name, value)
        n = self.n_pairs
        if n < 1:
            raise ConfigError("n_pairs must be at least 1")
        if self.n_tx < 1 or self.n_rx < 1 or self.streams < 1:
            raise ConfigError("antenna and stream counts must be at least 1")
        if self.streams > min(self.n_tx, self.n_rx):
            raise ConfigError(
                "streams per pair (%d) exceed min(n_tx, n_rx) = %d"
                % (self.streams, min(self.n_tx, self.n_rx)))
        if self.bits < 0:
            raise ConfigError("bits must be nonnegative")
        if self.power <= 0 or self.stream_rate <= 0:
            raise ConfigError("power and stream_rate must be positive")
        if self.noise_var < 0 or self.threshold < 0:
            raise ConfigError("noise_var and threshold must be nonnegative")
        if self.probe_cost < 0:
            raise ConfigError("probe_cost must be nonnegative")
        if n * self.probe_cost >= 1:
            raise ConfigError(
                "n_pairs * probe_cost must be below 1 (got %g)"
                % (n * self.probe_cost))
        if len(pl) != n or any(len(row) != n for row in pl):
            raise ConfigError("path_loss must be an n_pairs x n_pairs matrix")
        if any(not (v > 0 and math.isfinite(v)) for row in pl for v in row):
            raise ConfigError("path_loss entries must be positive and finite")

    @classmethod
    def homogeneous(cls, n_pairs, cross=1.0, direct=1.0, **kwargs):
        """Build a config whose direct links share one attenuation and whose
        cross links share another."""
        pl = tuple(tuple(direct if k == i else cross for i in range(n_pairs))
                   for k in range(n_pairs))
        return cls(n_pairs=n_pairs, path_loss=pl, **kwargs)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def is_homogeneous(self):
        pl = self.path_loss
        n = self.n_pairs
        direct = {pl[k][k] for k in range(n)}
        cross = {pl[k][i] for k in range(n) for i in range(n) if i != k}
        return len(direct) == 1 and len(cross) <= 1

    @property
    def ia_feasible(self):
        return self.n_tx + self.n_rx >= (self.n_pairs + 1) * self.streams


@dataclass(frozen=True)
class DerivedParams:
    """Quantities fixed by the antenna, stream and bit budget.

    ``quant_order`` is one less than the channel dimension ``n_tx * n_rx``;
    ``shape_a`` and ``shape_b`` are the Beta shapes of the projected
    quantization error; ``quant_gain`` is ``2 ** (bits / quant_order)``.
    """

    quant_order: int
    shape_a: float
    shape_b: float
    quant_gain: float


def derived_params(cfg):
    q = cfg.n_tx * cfg.n_rx - 1
    if q < 1:
        raise ConfigError("quantized links need n_tx * n_rx >= 2")
    shape_a = ((q + 1) * cfg.streams - 1) / q
    return DerivedParams(q, shape_a, (q - 1) * shape_a, 2.0 ** (cfg.bits / q))


@dataclass(frozen=True)
class DecisionVector:
    """Set of pairs switched on in a slot.

    ``mask`` has bit ``k`` set when pair ``k`` is active.
    """

    n_pairs: int
    active: tuple

    def __post_init__(self):
        act = tuple(sorted(set(int(k) for k in self.active)))
        if any(k < 0 or k >= self.n_pairs for k in act):
            raise ConfigError("pair index out of range")
        object.__setattr__(self, "active", act)

    @classmethod
    def from_bits(cls, bits):
        return cls(len(bits), tuple(k for k, b in enumerate(bits) if b))

    @classmethod
    def from_mask(cls, n_pairs, mask):
        return cls(n_pairs, tuple(k for k in range(n_pairs) if mask >> k & 1))

    @property
    def bits(self):
        on = set(self.active)
        return tuple(1 if k in on else 0 for k in range(self.n_pairs))

    @property
    def mask(self):
        return sum(1 << k for k in self.active)

    @property
    def cardinality(self):
        return len(self.active)

    def __contains__(self, k):
        return k in self.active


def _active_set(cfg, active, k=None):
    if isinstance(active, DecisionVector):
        if active.n_pairs != cfg.n_pairs:
            raise ConfigError("decision length does not match n_pairs")
        act = active.active
    else:
        act = tuple(sorted(set(int(i) for i in active)))
        if any(i < 0 or i >= cfg.n_pairs for i in act):
            raise ConfigError("pair index out of range")
    if k is not None and k not in act:
        raise ConfigError("pair %r is not active" % (k,))
    return act


def pair_gain(cfg, k, i=None):
    """Received power share ``power * path_loss[k][i] / streams``."""
    if i is None:
        i = k
    return cfg.power * cfg.path_loss[k][i] / cfg.streams


def g_factor(cfg, k, i):
    if k == i:
        raise ConfigError("g_factor needs two distinct pairs")
    dp = derived_params(cfg)
    pl = cfg.path_loss
    denom = pl[k][i] * cfg.threshold * cfg.streams
    if denom == 0.0:
        return 0.0
    return 1.0 / (pl[k][k] * dp.quant_gain / denom + 1.0)


def interference_factor(cross_ratio, cfg):
    """
    Factor contributed to the residual-interference MGF by one interferer.

    ``cross_ratio`` is the interferer's attenuation divided by the direct
    link's. Equals ``(x+1)^-Q 2F1(b, Q; a+b; 1/(1/x+1))`` with
    ``x = cross_ratio * threshold * streams / quant_gain``.
    """
    dp = derived_params(cfg)
    x = cross_ratio * cfg.threshold * cfg.streams / dp.quant_gain
    if x == 0.0:
        return 1.0
    z = 1.0 / (1.0 / x + 1.0)
    # Both factors leave the double range for large Q; their product is a
    # probability, so combine them as logs.
    log_hyp = log_gauss_2f1(dp.shape_b, dp.quant_order,
                            dp.shape_a + dp.shape_b, z)
    return math.exp(log_hyp - dp.quant_order * math.log1p(x))


def mgf_residual(cfg, active, k):
    act = _active_set(cfg, active, k)
    pl = cfg.path_loss
    mgf = 1.0
    for i in act:
        if i != k:
            mgf *= interference_factor(pl[k][i] / pl[k][k], cfg)
    return mgf


def _noise_factor(cfg, k):
    return math.exp(-cfg.noise_var * cfg.threshold / pair_gain(cfg, k))


def _slot_share(cfg, n_active):
    share = 1.0 - n_active * cfg.probe_cost
    if share <= 0.0:
        raise ConfigError("active pairs leave no time for data")
    return share


def _rate_from_success(cfg, n_active, success):
    return _slot_share(cfg, n_active) * cfg.streams * cfg.stream_rate * success


def _check_mode(mode):
    if mode not in (RateMode.IMPERFECT, RateMode.PERFECT):
        raise ConfigError("mode must be IMPERFECT or PERFECT, got %r" % (mode,))


def success_prob(cfg, active, k, mode=RateMode.IMPERFECT):
    """Probability that one stream of pair ``k`` clears the threshold."""
    _check_mode(mode)
    act = _active_set(cfg, active, k)
    if mode is RateMode.PERFECT:
        return _noise_factor(cfg, k)
    return _noise_factor(cfg, k) * mgf_residual(cfg, act, k)


def avg_rate_user(cfg, active, k, mode=RateMode.IMPERFECT):
    act = _active_set(cfg, active, k)
    return _rate_from_success(cfg, len(act), success_prob(cfg, act, k, mode))


def require_symmetric(cfg):
    """Raise unless all direct links match, all cross links match and the
    alignment dimension condition holds."""
    if not cfg.is_homogeneous:
        raise ConfigError("symmetric analysis needs a homogeneous path_loss")
    if not cfg.ia_feasible:
        raise ConfigError(
            "alignment infeasible: n_tx + n_rx = %d < (n_pairs + 1) * streams = %d"
            % (cfg.n_tx + cfg.n_rx, (cfg.n_pairs + 1) * cfg.streams))


def _cross_ratio(cfg):
    if cfg.n_pairs == 1:
        return 1.0
    return cfg.path_loss[0][1] / cfg.path_loss[0][0]


@functools.lru_cache(maxsize=4096)
def symmetric_F(cfg):
    """Per-interferer MGF factor of a symmetric system."""
    require_symmetric(cfg)
    return interference_factor(_cross_ratio(cfg), cfg)


def symmetric_rate(cfg, n_active, mode=RateMode.IMPERFECT, total=False):
    """Per-pair (or total) rate with ``n_active`` pairs switched on."""
    _check_mode(mode)
    if int(n_active) != n_active or not 1 <= n_active <= cfg.n_pairs:
        raise ConfigError("n_active must be an integer in 1..n_pairs")
    n_active = int(n_active)
    success = _noise_factor(cfg, 0)
    if mode is RateMode.IMPERFECT:
        # Same multiplication order as mgf_residual so both agree exactly.
        f = symmetric_F(cfg)
        mgf = 1.0
        for _ in range(n_active - 1):
            mgf *= f
        success = success * mgf
    else:
        require_symmetric(cfg)
    rate = _rate_from_success(cfg, n_active, success)
    return n_active * rate if total else rate


def total_rate_curve(cfg, load, mode=RateMode.IMPERFECT):
    """Total rate with the active count relaxed to a real ``load``."""
    _check_mode(mode)
    require_symmetric(cfg)
    share = 1.0 - load * cfg.probe_cost
    base = share * cfg.streams * cfg.stream_rate * _noise_factor(cfg, 0)
    if mode is RateMode.IMPERFECT:
        base *= symmetric_F(cfg) ** (load - 1.0)
    return load * base


def _svd_threshold(cfg, k):
    direct = cfg.path_loss[k][k]
    return cfg.n_tx * cfg.noise_var * cfg.threshold / (direct * cfg.power)


def _eigen_tail(m_max, m_min, y):
    """P(lambda >= y) for an unordered eigenvalue of a complex Wishart
    matrix with ``m_max`` degrees of freedom and dimension ``m_min``."""
    if y == 0.0:
        return 1.0
    shift = m_max - m_min
    total = 0.0
    magnitude = 0.0
    for n in range(m_min):
        omega = laguerre_coeffs(n, shift).coeffs
        weight = math.exp(math.lgamma(n + 1) - math.lgamma(n + shift + 1)) / m_min
        for j in range(2 * n + 1):
            kappa = 0.0
            for i in range(max(0, j - n), min(j, n) + 1):
                kappa += omega[i] * omega[j - i]
            term = weight * kappa * upper_inc_gamma(j + shift + 1, y)
            total += term
            magnitude += abs(term)
    # The alternating sum cancels as the antenna count grows; when the
    # rounding bound is no longer negligible, redo it in exact arithmetic.
    if not (math.isfinite(magnitude) and magnitude * 1e-15 <= 1e-11):
        total = _eigen_tail_exact(m_max, m_min, y)
    if not (math.isfinite(total) and -1e-9 <= total <= 1.0 + 1e-9):
        raise NumericFailureError(
            "eigen-mode tail out of range (value %r) for %d x %d antennas"
            % (total, m_max, m_min), partial=total, iterations=None)
    return min(max(total, 0.0), 1.0)


def _eigen_tail_exact(m_max, m_min, y):
    # Every Gamma(s, y) term shares exp(-y); the rest is a rational
    # polynomial in y that Fraction evaluates without rounding.
    shift = m_max - m_min
    yr = Fraction(y)
    top = 2 * (m_min - 1) + shift
    partial = []
    acc = Fraction(0)
    power = Fraction(1)
    for k in range(top + 1):
        if k:
            power = power * yr / k
        acc += power
        partial.append(acc)
    poly = Fraction(0)
    for n in range(m_min):
        omega = laguerre_coeffs(n, shift).exact
        inner = Fraction(0)
        for j in range(2 * n + 1):
            kappa = sum(omega[i] * omega[j - i]
                        for i in range(max(0, j - n), min(j, n) + 1))
            inner += kappa * math.factorial(j + shift) * partial[j + shift]
        poly += inner * Fraction(math.factorial(n), math.factorial(n + shift))
    poly /= m_min
    if poly <= 0:
        return 0.0
    log_poly = math.log(poly.numerator) - math.log(poly.denominator)
    return math.exp(log_poly - y)


def _svd_pair(cfg, k):
    if k is not None:
        if not 0 <= k < cfg.n_pairs:
            raise ConfigError("pair index out of range")
        return k
    direct = {cfg.path_loss[j][j] for j in range(cfg.n_pairs)}
    if len(direct) != 1:
        raise ConfigError("direct links differ; pass the pair index")
    return 0


def svd_success_prob(cfg, k=None):
    """Probability that one eigen-mode stream clears the threshold."""
    k = _svd_pair(cfg, k)
    m_max = max(cfg.n_tx, cfg.n_rx)
    m_min = min(cfg.n_tx, cfg.n_rx)
    return _eigen_tail(m_max, m_min, _svd_threshold(cfg, k))


def svd_rate(cfg, k=None):
    """Average rate of a pair transmitting alone over its SVD eigen-modes.

    With heterogeneous direct links the rate is per pair, so ``k`` is
    required.
    """
    return _rate_from_success(cfg, 1, svd_success_prob(cfg, k))


def gbar(cfg, k):
    """Mean of ``g_factor(cfg, k, i)`` over every other pair ``i``."""
    if cfg.n_pairs < 2:
        raise ConfigError("gbar needs at least two pairs")
    vals = [g_factor(cfg, k, i) for i in range(cfg.n_pairs) if i != k]
    if min(vals) == max(vals):
        return vals[0]
    return math.fsum(vals) / len(vals)


def _power(base, exponent):
    out = 1.0
    for _ in range(exponent):
        out *= base
    return out


def phi(cfg, k, n_active):
    """Rate of pair ``k`` when every interferer is replaced by the mean one."""
    if int(n_active) != n_active or not 1 <= n_active <= cfg.n_pairs:
        raise ConfigError("n_active must be an integer in 1..n_pairs")
    n_active = int(n_active)
    base = _rate_from_success(cfg, n_active, _noise_factor(cfg, k))
    if n_active == 1:
        return base
    return base * _power(1.0 - gbar(cfg, k), n_active - 1)


def approx_rate(cfg, active, k, order=ApproxOrder.FIRST):
    """Product-form approximation of the imperfect rate of pair ``k``.

    FIRST keeps one ``(1 - g)`` factor per interferer. SECOND expands that
    product to first order around the mean ``g`` of pair ``k``.
    """
    act = _active_set(cfg, active, k)
    base = _rate_from_success(cfg, len(act), _noise_factor(cfg, k))
    others = [i for i in act if i != k]
    if not others:
        return base
    if order is ApproxOrder.FIRST:
        prod = 1.0
        for i in others:
            prod *= 1.0 - g_factor(cfg, k, i)
        return base * prod
    if order is not ApproxOrder.SECOND:
        raise ConfigError("unknown approximation order %r" % (order,))
    mean = gbar(cfg, k)
    spread = math.fsum(g_factor(cfg, k, i) - mean for i in others)
    lead = _power(1.0 - mean, len(others))
    return base * (lead - _power(1.0 - mean, len(others) - 1) * spread)
