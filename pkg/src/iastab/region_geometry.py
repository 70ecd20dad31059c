"""
Stability-region geometry: vertex sets, optimal loads, hull membership,
technique selection and guaranteed-fraction bounds.
"""

import csv
import enum
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, GuardError, InfeasibleArrivalError,
                     NumericFailureError, SearchBoundError)
from .rate_model import (RateMode, Technique, derived_params, g_factor, gbar,
                         require_symmetric, svd_rate, symmetric_F,
                         symmetric_rate, total_rate_curve)

__all__ = [
    "Region",
    "Rationale",
    "OptimalLoad",
    "NnlsResult",
    "VertexLabel",
    "RegionVertexSet",
    "BetaP",
    "ENUM_GUARD",
    "optimal_load",
    "region_vertices",
    "gap_fraction_perfect",
    "ia_vs_svd",
    "nnls",
    "membership",
    "select_technique",
    "bits_fraction",
    "pairs_fraction",
    "beta_a",
    "beta_p",
    "bits_for_fraction",
]

ENUM_GUARD = 20
BIT_SEARCH_LIMIT = 10_000


class Region(enum.Enum):
    IA_IMPERFECT = "ia_imperfect"
    IA_PERFECT = "ia_perfect"
    SVD = "svd"
    SWITCHING = "switching"


class Rationale(enum.Enum):
    SVD_COVERS_IA = "svd_covers_ia"
    IA_ONLY = "ia_only"
    SVD_ONLY = "svd_only"
    BOTH_PREFER_SVD = "both_prefer_svd"


@dataclass(frozen=True)
class OptimalLoad:
    l0_real: float
    l_int: int
    mode: RateMode
    clamped: bool
    l_unclamped: int


@dataclass(frozen=True)
class NnlsResult:
    delta: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class VertexLabel:
    technique: str
    cardinality: int
    active: tuple


@dataclass(frozen=True)
class RegionVertexSet:
    points: np.ndarray
    labels: tuple

    def to_csv(self):
        n = self.points.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["technique", "cardinality", "active"]
                        + ["x%d" % k for k in range(n)])
        for point, label in zip(self.points, self.labels):
            writer.writerow([label.technique, label.cardinality,
                             " ".join(str(k) for k in label.active)]
                            + [repr(float(v)) for v in point])
        return buf.getvalue()

    def to_json(self):
        rows = [{"technique": lab.technique, "cardinality": lab.cardinality,
                 "active": list(lab.active), "point": [float(v) for v in p]}
                for p, lab in zip(self.points, self.labels)]
        return json.dumps({"vertices": rows}, indent=2)


def _guard(n):
    if n > ENUM_GUARD:
        raise GuardError("enumeration over 2^%d decisions exceeds the guard "
                         "of n_pairs <= %d" % (n, ENUM_GUARD))


def _total(cfg, n_active, mode):
    if n_active <= 0:
        return 0.0
    return total_rate_curve(cfg, float(n_active), mode)


def _round_load(cfg, l0, mode):
    lo = math.floor(l0)
    hi = math.ceil(l0)
    if lo == hi:
        best = lo
    else:
        # ceil wins ties
        best = hi if _total(cfg, hi, mode) >= _total(cfg, lo, mode) else lo
    best = max(best, 1)
    clamped = min(best, cfg.n_pairs)
    return OptimalLoad(l0, clamped, mode, clamped != best, best)


def optimal_load(cfg, mode=RateMode.IMPERFECT):
    """
    Real maximizer of the total symmetric rate and its best integer
    neighbour, clamped to ``n_pairs``.
    """
    require_symmetric(cfg)
    theta = cfg.probe_cost
    if not theta > 0:
        raise ConfigError("optimal load needs a positive probe_cost")
    if mode is RateMode.PERFECT:
        return _round_load(cfg, 1.0 / (2.0 * theta), mode)
    if mode is not RateMode.IMPERFECT:
        raise ConfigError("mode must be IMPERFECT or PERFECT")
    log_f = math.log(symmetric_F(cfg))
    if log_f == 0.0:
        return _round_load(cfg, 1.0 / (2.0 * theta), mode)
    # Stationary points solve L^2 + b L + c = 0; take the smaller root
    # through the product of roots to avoid cancellation.
    b = 2.0 / log_f - 1.0 / theta
    c = -1.0 / (theta * log_f)
    big = (-b + math.sqrt(b * b - 4.0 * c)) / 2.0
    return _round_load(cfg, c / big, mode)


def _subsets(n, size):
    return itertools.combinations(range(n), size)


def _ia_points(cfg, mode, tag):
    n = cfg.n_pairs
    top = optimal_load(cfg, mode).l_int
    pts = []
    labels = []
    for size in range(1, top + 1):
        rate = symmetric_rate(cfg, size, mode)
        for act in _subsets(n, size):
            p = np.zeros(n)
            p[list(act)] = rate
            pts.append(p)
            labels.append(VertexLabel(tag, size, act))
    return pts, labels


def _svd_points(cfg):
    n = cfg.n_pairs
    pts = []
    labels = []
    for k in range(n):
        p = np.zeros(n)
        p[k] = svd_rate(cfg, k)
        pts.append(p)
        labels.append(VertexLabel(Region.SVD.value, 1, (k,)))
    return pts, labels


def region_vertices(cfg, region, mode=RateMode.IMPERFECT):
    """
    Generating points of a stability region; the hull also contains 0.

    ``mode`` picks the alignment flavour used by ``Region.SWITCHING``.
    """
    _guard(cfg.n_pairs)
    region = Region(region)
    if region is Region.IA_IMPERFECT:
        pts, labels = _ia_points(cfg, RateMode.IMPERFECT, region.value)
    elif region is Region.IA_PERFECT:
        pts, labels = _ia_points(cfg, RateMode.PERFECT, region.value)
    elif region is Region.SVD:
        pts, labels = _svd_points(cfg)
    else:
        tag = (Region.IA_IMPERFECT if mode is RateMode.IMPERFECT
               else Region.IA_PERFECT).value
        pts, labels = _ia_points(cfg, mode, tag)
        sp, sl = _svd_points(cfg)
        pts += sp
        labels += sl
    return RegionVertexSet(np.array(pts, dtype=float), tuple(labels))


def gap_fraction_perfect(cfg):
    """Share of the perfect-CSI peak total rate kept with quantized CSI."""
    li = optimal_load(cfg, RateMode.IMPERFECT).l_int
    lp = optimal_load(cfg, RateMode.PERFECT).l_int
    return (symmetric_rate(cfg, li, RateMode.IMPERFECT, total=True)
            / symmetric_rate(cfg, lp, RateMode.PERFECT, total=True))


def ia_vs_svd(cfg, mode=RateMode.IMPERFECT, svd_total=None):
    """
    Smallest active count whose alignment total beats one SVD pair.

    Returns None when no count up to the optimal load does. ``svd_total``
    overrides the SVD rate.
    """
    top = optimal_load(cfg, mode).l_int
    ref = svd_rate(cfg) if svd_total is None else float(svd_total)
    for size in range(1, top + 1):
        if symmetric_rate(cfg, size, mode, total=True) > ref:
            return size
    return None


def nnls(A, b, tol=1e-9, max_iter=None):
    """
    Non-negative least squares by the Lawson-Hanson active-set method.

    Parameters
    ----------
    A : array_like, shape (m, n)
    b : array_like, shape (m,)
    tol : float
        Relative tolerance on the dual (gradient) test for optimality.
    max_iter : int, optional
        Cap on least-squares solves, ``10 * n`` by default.

    Returns
    -------
    NnlsResult

    Raises
    ------
    NumericFailureError
        When the iteration cap is reached.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[1] < 1:
        raise ValueError("A must be a matrix with at least one column")
    if b.shape != (A.shape[0],):
        raise ValueError("b must match the rows of A")
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = A.shape[1]
    if max_iter is None:
        max_iter = 10 * n
    scale = max(1.0, float(np.abs(A).max()) * max(1.0, float(np.abs(b).max())))
    dual_tol = tol * scale

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    iterations = 0
    while True:
        free = ~passive
        if not free.any() or w[free].max() <= dual_tol:
            break
        j = int(np.flatnonzero(free)[np.argmax(w[free])])
        passive[j] = True
        while True:
            iterations += 1
            if iterations > max_iter:
                raise NumericFailureError(
                    "nnls did not converge within %d iterations" % max_iter,
                    partial=float(np.linalg.norm(A @ x - b)),
                    iterations=iterations - 1)
            z = np.zeros(n)
            idx = np.flatnonzero(passive)
            z[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if (z[idx] > 0).all():
                x = z
                break
            blocking = idx[z[idx] <= 0]
            alpha = np.min(x[blocking] / (x[blocking] - z[blocking]))
            x = x + alpha * (z - x)
            passive &= x > 1e-15 * max(1.0, float(np.abs(x).max()))
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    resid = float(np.linalg.norm(A @ x - b))
    return NnlsResult(x, resid, True, iterations)


def _hull_system(points, a):
    # Normalize by the largest coordinate so the all-ones row and the rate
    # rows have comparable size; feasibility is scale free.
    scale = float(points.max()) if points.size and points.max() > 0 else 1.0
    m, n = points.shape
    cols = np.zeros((n + 1, m + 1))
    cols[:n, :m] = points.T / scale
    cols[n, :] = 1.0
    rhs = np.append(np.asarray(a, dtype=float) / scale, 1.0)
    return cols, rhs


def hull_residual(points, a, tol=1e-9):
    """NNLS residual of writing ``a`` as a convex combination of ``points``
    and the origin, in coordinates scaled by the largest vertex entry."""
    cols, rhs = _hull_system(np.asarray(points, dtype=float), a)
    res = nnls(cols, rhs, tol=tol)
    return res, float(np.linalg.norm(rhs))


def membership(cfg, a, region, tol=1e-7, mode=RateMode.IMPERFECT):
    """Whether arrival vector ``a`` lies in the stability region."""
    a = np.asarray(a, dtype=float)
    if a.shape != (cfg.n_pairs,):
        raise ConfigError("arrival vector must have one entry per pair")
    if (a < 0).any():
        raise ConfigError("arrival rates must be nonnegative")
    region = Region(region)
    if region is Region.SVD:
        if cfg.is_homogeneous:
            return bool(a.sum() < svd_rate(cfg))
        # Direct links differ: time shares a_k / r_k must sum below one.
        load = sum(a[k] / svd_rate(cfg, k) for k in range(cfg.n_pairs))
        return bool(load < 1.0)
    verts = region_vertices(cfg, region, mode)
    res, norm_rhs = hull_residual(verts.points, a)
    return bool(res.residual_norm <= tol * (1.0 + norm_rhs))


def select_technique(cfg, a, mode=RateMode.IMPERFECT):
    """
    Choose between alignment and single-pair SVD for arrival vector ``a``.

    Returns
    -------
    (Technique, Rationale)
    """
    ia_region = (Region.IA_IMPERFECT if mode is RateMode.IMPERFECT
                 else Region.IA_PERFECT)
    in_svd = membership(cfg, a, Region.SVD)
    if ia_vs_svd(cfg, mode) is None:
        if in_svd:
            return Technique.TDMA_SVD, Rationale.SVD_COVERS_IA
        raise InfeasibleArrivalError("arrival vector outside both regions")
    in_ia = membership(cfg, a, ia_region, mode=mode)
    if in_ia and in_svd:
        return Technique.TDMA_SVD, Rationale.BOTH_PREFER_SVD
    if in_ia:
        return Technique.IA, Rationale.IA_ONLY
    if in_svd:
        return Technique.TDMA_SVD, Rationale.SVD_ONLY
    raise InfeasibleArrivalError("arrival vector outside both regions")


def bits_fraction(cfg, b_prime):
    """Worst-case rate kept when the quantization budget drops to
    ``b_prime`` bits with every pair active."""
    require_symmetric(cfg)
    if int(b_prime) != b_prime or b_prime < 0:
        raise ConfigError("b_prime must be a nonnegative integer")
    if b_prime > cfg.bits:
        raise ConfigError("b_prime must not exceed the current bits")
    if b_prime == cfg.bits:
        return 1.0
    ratio = symmetric_F(cfg.replace(bits=int(b_prime))) / symmetric_F(cfg)
    return ratio ** (cfg.n_pairs - 1)


def pairs_fraction(cfg, n_prime):
    """Peak total rate kept when at most ``n_prime`` pairs may be active."""
    require_symmetric(cfg)
    n = cfg.n_pairs
    if int(n_prime) != n_prime or not 1 <= n_prime <= n:
        raise ConfigError("n_prime must be an integer in 1..n_pairs")
    best = optimal_load(cfg, RateMode.IMPERFECT).l_unclamped
    if best <= n_prime:
        return 1.0
    ref = n if n <= best else best
    return (symmetric_rate(cfg, int(n_prime), total=True)
            / symmetric_rate(cfg, ref, total=True))


def _g_matrix(cfg):
    n = cfg.n_pairs
    g = np.zeros((n, n))
    for k in range(n):
        for i in range(n):
            if i != k:
                g[k, i] = g_factor(cfg, k, i)
    return g


def _subset_extremes(weights):
    """
    Minimum and maximum over (subset S, k in S) of sum_{i in S, i != k}
    weights[k, i], with the first minimizer in (mask, k) order.
    """
    n = weights.shape[0]
    w = weights.copy()
    np.fill_diagonal(w, 0.0)
    lo, hi = math.inf, -math.inf
    arg = None
    chunk = 1 << 14
    shifts = np.arange(n)
    for start in range(1, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n))
        member = ((masks[:, None] >> shifts) & 1).astype(bool)
        vals = member.astype(float) @ w.T
        vals[~member] = np.nan
        cmin = np.nanmin(vals)
        if cmin < lo:
            flat = int(np.nanargmin(vals))
            lo = float(cmin)
            arg = (int(masks[flat // n]), flat % n)
        hi = max(hi, float(np.nanmax(vals)))
    return lo, hi, arg


def beta_a(cfg):
    """Guaranteed fraction of the optimal region kept by the mean-``g``
    scheduling rule, by exhaustive enumeration."""
    n = cfg.n_pairs
    _guard(n)
    if n == 1:
        return 1.0
    g = _g_matrix(cfg)
    means = np.array([gbar(cfg, k) for k in range(n)])
    weights = -(g - means[:, None]) / (1.0 - means[:, None])
    lo, hi, _ = _subset_extremes(weights)
    return (1.0 + lo) / (1.0 + hi)


@dataclass(frozen=True)
class BetaP:
    value: float
    subset: tuple
    pair: int
    coupling: float


def beta_p(cfg):
    """
    Guaranteed fraction of the perfect-CSI region kept with quantized CSI.

    ``coupling`` is the smallest ``path_loss[k][i] * threshold * streams /
    path_loss[k][k]`` over the interferers of the minimizing pair.
    """
    n = cfg.n_pairs
    _guard(n)
    if n == 1:
        return BetaP(1.0, (0,), 0, math.nan)
    g = _g_matrix(cfg)
    with np.errstate(divide="ignore"):
        logs = np.log1p(-g)
    np.fill_diagonal(logs, 0.0)
    _, _, (mask, k) = _subset_extremes(logs)
    subset = tuple(i for i in range(n) if mask >> i & 1)
    value = 1.0
    for i in subset:
        if i != k:
            value *= 1.0 - g[k, i]
    pl = cfg.path_loss
    others = [i for i in subset if i != k]
    coupling = (min(pl[k][i] * cfg.threshold * cfg.streams / pl[k][k]
                    for i in others) if others else math.nan)
    return BetaP(float(value), subset, int(k), float(coupling))


def bits_for_fraction(cfg, target):
    """
    Bits needed for the perfect-to-imperfect fraction to reach ``target``.

    Returns
    -------
    b_bound : float
        Closed-form bound from the worst subset's weakest cross coupling.
    b_exact : int
        Smallest bit count whose exhaustive fraction reaches ``target``.
    """
    if not 0 < target < 1:
        raise ConfigError("target must lie strictly between 0 and 1")
    q = derived_params(cfg).quant_order
    worst = beta_p(cfg)
    size = len(worst.subset)
    if size < 2:
        b_bound = -math.inf
    else:
        gap = target ** (-1.0 / (size - 1)) - 1.0
        b_bound = q * math.log2(worst.coupling / gap)
    for bits in range(BIT_SEARCH_LIMIT + 1):
        if beta_p(cfg.replace(bits=bits)).value >= target:
            return b_bound, bits
    raise SearchBoundError("target %g not reached with up to %d bits"
                           % (target, BIT_SEARCH_LIMIT))
