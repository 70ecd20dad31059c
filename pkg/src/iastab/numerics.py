"""
Special-function kernels used by the closed-form rate expressions.

Everything here is a pure function of its arguments and works in double
precision. Laguerre coefficients are built from exact integer binomials
and fall back to ``math.lgamma`` only when a coefficient overflows.
"""

import math
from fractions import Fraction
from dataclasses import dataclass, field

from .errors import NumericFailureError

__all__ = [
    "LaguerreCoeffs",
    "gauss_2f1",
    "log_gauss_2f1",
    "upper_inc_gamma",
    "laguerre_coeffs",
    "MAX_SERIES_TERMS",
]

MAX_SERIES_TERMS = 100_000
_EPS = 2.0 ** -53


def _is_nonpositive_integer(x):
    return x <= 0 and float(x).is_integer()


def _hyp_series(a, b, c, z, max_terms):
    """Sum the Gauss series directly."""
    total = 1.0
    term = 1.0
    n = 0
    while True:
        ratio = (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        term *= ratio
        total += term
        n += 1
        if term == 0.0:
            return total
        if not math.isfinite(total):
            raise NumericFailureError("2F1 series overflowed",
                                      partial=total, iterations=n)
        # Only stop once the terms are shrinking, otherwise a small early
        # term in a growing stretch would end the sum too soon.
        if abs(term) <= _EPS * abs(total) and abs(ratio) < 1.0:
            return total
        if n >= max_terms:
            raise NumericFailureError(
                "2F1 series did not converge within %d terms" % max_terms,
                partial=total,
                iterations=n,
            )


def gauss_2f1(a, b, c, z, max_terms=MAX_SERIES_TERMS):
    """
    Gauss hypergeometric function 2F1(a, b; c; z) for real -1 < z < 1.

    Parameters
    ----------
    a, b, c : float
        Parameters. ``c`` must be positive.
    z : float
        Argument with ``|z| < 1``.
    max_terms : int, optional
        Cap on the number of series terms.

    Returns
    -------
    float

    Raises
    ------
    ValueError
        For parameters outside the supported domain.
    NumericFailureError
        If the series needs more than ``max_terms`` terms.

    Notes
    -----
    Negative arguments are mapped into (0, 1/2) with a Pfaff
    transformation, ``(1-z)^(-b) 2F1(c-a, b; c; z/(z-1))`` or its mirror
    with ``a`` and ``b`` exchanged. For ``z > 1/2`` with ``a + b > c`` the
    Euler transformation ``(1-z)^(c-a-b) 2F1(c-a, c-b; c; z)`` removes the
    algebraic growth of the terms near ``z = 1``. A transformation is used
    only when its series has nonnegative terms; alternating series cancel.
    """
    log_pre, args = _transform(a, b, c, z)
    if args is None:
        return 1.0
    series = _hyp_series(*args, max_terms)
    if log_pre == 0.0:
        return series
    try:
        return math.exp(log_pre) * series
    except OverflowError:
        raise NumericFailureError(
            "2F1 exceeds the double range; use log_gauss_2f1",
            partial=series, iterations=None) from None


def log_gauss_2f1(a, b, c, z, max_terms=MAX_SERIES_TERMS):
    """
    Natural log of ``gauss_2f1(a, b, c, z)`` for parameters where the
    function is positive.

    The transformation prefactor is kept in log form, so values beyond the
    double range (large ``b`` with ``z`` near 1) stay representable.
    """
    log_pre, args = _transform(a, b, c, z)
    if args is None:
        return 0.0
    series = _hyp_series(*args, max_terms)
    if not series > 0.0:
        raise NumericFailureError("2F1 is not positive; no real logarithm",
                                  partial=series, iterations=None)
    return log_pre + math.log(series)


def _transform(a, b, c, z):
    """Pick the series to sum; returns (log prefactor, series args)."""
    a = float(a)
    b = float(b)
    c = float(c)
    z = float(z)
    if not c > 0.0 or _is_nonpositive_integer(c):
        raise ValueError("c must be positive, got %r" % c)
    if not -1.0 < z < 1.0:
        raise ValueError("|z| must be below 1, got %r" % z)
    if z == 0.0 or a == 0.0 or b == 0.0:
        return 0.0, None
    if z < 0.0:
        w = z / (z - 1.0)
        log1mz = math.log1p(-z)
        if c - a >= 0.0 and b > 0.0:
            return -b * log1mz, (c - a, b, c, w)
        if c - b >= 0.0 and a > 0.0:
            return -a * log1mz, (a, c - b, c, w)
        return 0.0, (a, b, c, z)
    if z > 0.0 and a + b > c and c - a >= 0.0 and c - b >= 0.0:
        return (c - a - b) * math.log1p(-z), (c - a, c - b, c, z)
    return 0.0, (a, b, c, z)


def upper_inc_gamma(s, x):
    """
    Upper incomplete gamma function for a positive integer order.

    Uses ``Gamma(s, x) = (s-1)! e^(-x) sum_{k<s} x^k / k!``, which is exact
    for integer ``s``.
    """
    if int(s) != s or s < 1:
        raise ValueError("order must be a positive integer, got %r" % s)
    if x < 0:
        raise ValueError("x must be nonnegative, got %r" % x)
    s = int(s)
    if x == 0.0:
        return float(math.factorial(s - 1)) if s <= 171 else math.inf
    if x < 700.0:
        term = 1.0
        partial = 1.0
        for k in range(1, s):
            term *= x / k
            partial += term
        log_val = math.log(partial) - x
    else:
        # e^x would overflow: sum Poisson weights in log form instead
        log_x = math.log(x)
        top = max(k * log_x - math.lgamma(k + 1) for k in range(s))
        log_val = (top - x + math.log(math.fsum(
            math.exp(k * log_x - math.lgamma(k + 1) - top) for k in range(s))))
    if s <= 171:
        return float(math.factorial(s - 1)) * math.exp(log_val)
    try:
        return math.exp(math.lgamma(s) + log_val)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class LaguerreCoeffs:
    """
    Power-basis coefficients of the associated Laguerre polynomial.

    ``coeffs[l]`` multiplies ``x**l`` in ``L_n^alpha(x)``. When the
    coefficients are known as exact rationals (``exact``), calling the
    object evaluates the polynomial exactly and rounds once; the power
    basis cancels badly for large ``x`` otherwise.
    """

    n: int
    alpha: int
    coeffs: tuple
    exact: tuple = field(default=None, repr=False, compare=False)

    def __call__(self, x):
        if self.exact is not None and math.isfinite(x):
            xr = Fraction(x)
            acc = Fraction(0)
            for w in reversed(self.exact):
                acc = acc * xr + w
            return float(acc)
        acc = 0.0
        for w in reversed(self.coeffs):
            acc = acc * x + w
        return acc


def laguerre_coeffs(n, alpha):
    """
    Coefficients of ``L_n^alpha`` in the monomial basis.

    ``w_l = (-1)^l (n+alpha)! / ((n-l)! (alpha+l)! l!)``. Each coefficient
    is formed exactly as ``C(n+alpha, n-l) / l!`` in integer arithmetic and
    rounded once; log-gamma is used only if that ratio overflows a float.
    """
    if int(n) != n or n < 0 or int(alpha) != alpha or alpha < 0:
        raise ValueError("n and alpha must be nonnegative integers")
    n = int(n)
    alpha = int(alpha)
    out = []
    exact = []
    for l in range(n + 1):
        ratio = Fraction(math.comb(n + alpha, n - l), math.factorial(l))
        exact.append(-ratio if l % 2 else ratio)
        try:
            mag = float(ratio)
        except OverflowError:
            mag = math.exp(math.lgamma(n + alpha + 1) - math.lgamma(n - l + 1)
                           - math.lgamma(alpha + l + 1) - math.lgamma(l + 1))
            exact = None
        out.append(-mag if l % 2 else mag)
        if exact is None:
            break
    if exact is None:
        return _laguerre_lgamma(n, alpha)
    return LaguerreCoeffs(n, alpha, tuple(out), tuple(exact))


def _laguerre_lgamma(n, alpha):
    top = math.lgamma(n + alpha + 1)
    out = []
    for l in range(n + 1):
        mag = math.exp(top - math.lgamma(n - l + 1)
                       - math.lgamma(alpha + l + 1) - math.lgamma(l + 1))
        out.append(-mag if l % 2 else mag)
    return LaguerreCoeffs(n, alpha, tuple(out))
