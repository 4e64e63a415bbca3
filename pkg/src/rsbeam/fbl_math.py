"""Finite-blocklength rate model and its rate-to-SINR inversion.

The achievable rate at SINR ``xi`` with blocklength ``L`` and block error
rate ``epsilon`` is ``ln(1+xi) - sqrt(dispersion(xi)) * D`` where
``D = q_inv(epsilon) / sqrt(L)`` and ``dispersion(xi) = 1 - (1+xi)**-2``.
``D = 0`` recovers Shannon capacity (the infinite-blocklength limit).

Two inversions of the increasing branch of the rate function are provided:
a bisection that serves as the numerical reference, and a closed-form
series (a Lagrange-inversion expansion of a generalized Lambert-type
equation with Bessel-polynomial coefficients) that is cross-checked against
the bisection and reports non-convergence near its convergence boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class SeriesNonConvergence(RuntimeError):
    """The series inversion failed to settle within the term budget."""


def q_function(x: float) -> float:
    """Gaussian tail probability ``Q(x) = P[N(0,1) > x]``."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inv(epsilon: float) -> float:
    """Inverse Gaussian Q-function by bisection, positive for ``epsilon < 0.5``.

    Bisection on the complementary error function trades speed for
    predictable accuracy; the result satisfies ``Q(x) = epsilon`` to well
    below 1e-12 and is evaluated once per configuration.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if q_function(mid) > epsilon:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dispersion(xi: float) -> float:
    """Channel dispersion ``1 - (1+xi)**-2``, in [0, 1) and increasing."""
    if xi < 0:
        raise ValueError("SINR must be nonnegative")
    return 1.0 - (1.0 + xi) ** -2


@dataclass(frozen=True)
class FblPenalty:
    """Rate penalty coefficient ``D = q_inv(epsilon)/sqrt(L)`` with its inputs.

    ``D = 0`` if and only if the infinite-blocklength limit is requested
    (``L = inf``).
    """

    D: float
    L: float
    epsilon: float

    @classmethod
    def from_requirements(cls, L: float, epsilon: float) -> "FblPenalty":
        if L < 1:
            raise ValueError("L must be at least 1")
        return cls(D=q_inv(epsilon) / math.sqrt(L), L=float(L), epsilon=float(epsilon))

    @classmethod
    def infinite_blocklength(cls, epsilon: float = 0.0) -> "FblPenalty":
        return cls(D=0.0, L=math.inf, epsilon=float(epsilon))


def _coef(penalty) -> float:
    d = penalty.D if isinstance(penalty, FblPenalty) else float(penalty)
    if d < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    return d


def fbl_rate(xi: float, penalty) -> float:
    """Achievable rate ``ln(1+xi) - sqrt(dispersion(xi)) * D`` in nats/s/Hz.

    ``penalty`` is an :class:`FblPenalty` or a bare coefficient.  The value
    can be negative for small SINR and large penalty.
    """
    d = _coef(penalty)
    return math.log1p(xi) - math.sqrt(dispersion(xi)) * d


def stationary_point(d: float) -> float:
    """SINR below which the rate decreases and above which it increases.

    ``v0 = sqrt((1 + sqrt(1 + 4 d^2)) / 2) - 1``; the rate is nonincreasing
    on [0, v0] and nondecreasing on [v0, inf).
    """
    if d < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    return math.sqrt((1.0 + math.sqrt(1.0 + 4.0 * d * d)) / 2.0) - 1.0


def target_sinr_bisect(r: float, d: float, tol: float = 1e-10) -> float:
    """Unique SINR on the increasing branch with ``fbl_rate(gamma, d) = r``.

    Bisection on ``[v0, exp(r + 4 d)]``: the rate exceeds ``ln(1+gamma) - d``
    everywhere, so the upper endpoint's rate is at least ``r + 3 d >= r``,
    while the rate at the stationary point is nonpositive.  Absolute
    tolerance ``tol`` on the returned SINR.
    """
    if r < 0:
        raise ValueError("rate target must be nonnegative")
    if d < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    lo = stationary_point(d)
    hi = math.exp(r + 4.0 * d)
    if fbl_rate(lo, d) >= r:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fbl_rate(mid, d) < r:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def _series_correction(r: float, d: float, max_terms: int, term_tol: float) -> float:
    """Series solution ``b`` of ``b = 2 d sqrt(1 - exp(-2 r - b))``.

    Equivalently the root near ``2 d`` of ``(b - t1)(b - t2) = mu e^{-b}``
    with ``t1 = 2 d``, ``t2 = -2 d`` and ``mu = -4 d^2 exp(-2 r)``, expanded
    around ``mu = 0`` by Lagrange inversion.  All terms are positive, so the
    partial sums are monotone; the inner coefficient sums are Bessel
    polynomials evaluated at ``1/(m (t1 - t2))``.
    """
    t1 = 2.0 * d
    spread = 4.0 * d  # t1 - t2
    mu = -4.0 * d * d * math.exp(-2.0 * r)
    base = mu * math.exp(-t1) / (-spread)  # positive
    total = 0.0
    for m in range(1, max_terms + 1):
        log_outer = m * math.log(base * m) - math.log(m) - math.lgamma(m + 1)
        z = 1.0 / (m * spread)
        inner_term = 1.0
        inner = 1.0
        for n in range(m - 1):
            inner_term *= (m + n) * (m - 1 - n) / (n + 1) * z
            inner += inner_term
        term = math.exp(log_outer + math.log(inner))
        total += term
        if term < term_tol:
            return t1 - total
    raise SeriesNonConvergence(
        f"series terms did not fall below {term_tol:g} within {max_terms} terms "
        f"(r={r:g}, d={d:g})"
    )


def target_sinr_series(
    r: float, d: float, max_terms: int = 50, term_tol: float = 1e-12
) -> float:
    """Closed-form series counterpart of :func:`target_sinr_bisect`.

    Returns ``exp(r + b/2) - 1`` with ``b`` from :func:`_series_correction`,
    truncated at the first term below ``term_tol`` or at ``max_terms``.
    Raises :class:`SeriesNonConvergence` if the partial sums fail to settle;
    callers fall back to the bisection, which is the normative inversion.
    """
    if r < 0:
        raise ValueError("rate target must be nonnegative")
    if d < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    if d == 0.0:
        return math.expm1(r)
    b = _series_correction(r, d, max_terms, term_tol)
    return math.expm1(r + 0.5 * b)


def target_sinr(r: float, d: float) -> float:
    """Series inversion with automatic fallback to the bisection."""
    try:
        return target_sinr_series(r, d)
    except SeriesNonConvergence:
        return target_sinr_bisect(r, d)
