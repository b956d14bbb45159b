"""Closed forms for the law of beta_t(x) = int_0^t ds / |x + sqrt(2) W_s|^2.

The function h(y) = |y|^{-a} satisfies Delta h + lam h / |y|^2 = 0 when
a(a + 2 - d) = -lam, i.e. a = (d-2)/2 - sqrt(((d-2)/2)^2 - lam). A Doob
transform with h turns the radial part of x + sqrt(2) W into a Bessel
process of dimension d - 2a run at twice the speed, whose negative moments
are confluent hypergeometric functions. This gives

    E exp(lam beta_t(x)) = r^{-a} (4t)^{a/2} Gamma(d/2 - a/2) / Gamma(d/2 - a)
                           * 1F1(-a/2; d/2 - a; -r^2 / (4t)),   r = |x|,

for every lam < ((d-2)/2)^2. Moments of beta are lam-derivatives at 0.
These are the exact oracles the Monte Carlo engine is tested against.
"""
from __future__ import annotations

import math

import mpmath as mp

from .errors import DomainError

_DPS = 40


def growth_exponent(d: int, kappa: float) -> float:
    """alpha = (d-2)/2 - sqrt(((d-2)/2)^2 - kappa^2)."""
    g = (d - 2) / 2
    if not (0 <= kappa <= g):
        raise DomainError(f"kappa must lie in [0, (d-2)/2], got {kappa}")
    return g - math.sqrt(g * g - kappa * kappa)


def _exp_moment_mp(lam, r, t, d):
    g = mp.mpf(d - 2) / 2
    a = g - mp.sqrt(g * g - lam)
    nu = mp.mpf(d) - 2 * a
    r = mp.mpf(r)
    t = mp.mpf(t)
    return (r ** (-a) * (4 * t) ** (a / 2) * mp.gamma(nu / 2 + a / 2) / mp.gamma(nu / 2)
            * mp.hyp1f1(-a / 2, nu / 2, -r * r / (4 * t)))


def _check(r, t, d):
    if int(d) != d or d < 3:
        raise DomainError(f"dimension must be an integer >= 3, got {d}")
    if not r > 0:
        raise DomainError("starting distance must be positive")
    if not t > 0:
        raise DomainError("time must be positive")


def exp_moment_exact(lam: float, r: float, t: float, d: int) -> float:
    """E exp(lam beta_t(x)) with |x| = r, for lam < ((d-2)/2)^2."""
    _check(r, t, d)
    if not lam < ((d - 2) / 2) ** 2:
        raise DomainError("exponential moment is infinite for lam >= ((d-2)/2)^2")
    with mp.workdps(_DPS):
        return float(_exp_moment_mp(mp.mpf(lam), r, t, d))


def beta_moment_exact(n: int, r: float, t: float, d: int) -> float:
    """E beta_t(x)^n with |x| = r."""
    _check(r, t, d)
    if n < 0 or int(n) != n:
        raise DomainError("moment order must be a non-negative integer")
    if n == 0:
        return 1.0
    with mp.workdps(_DPS):
        return float(mp.diff(lambda lam: _exp_moment_mp(lam, r, t, d), 0, int(n)))


def exp_moment_large_tau(tau: float, kappa: float, d: int) -> float:
    """Leading large-tau behaviour of E exp(kappa^2 beta) at tau = t/|x|^2."""
    a = growth_exponent(d, kappa)
    return (4 * tau) ** (a / 2) * math.gamma((d - a) / 2) / math.gamma((d - 2 * a) / 2)


def exp_moment_local_slope(tau: float, kappa: float, d: int, rel_step: float = 1e-4) -> float:
    """d log E exp(kappa^2 beta) / d log tau from the closed form."""
    lam = kappa * kappa
    hi = math.log(exp_moment_exact(lam, 1.0, tau * math.exp(rel_step), d))
    lo = math.log(exp_moment_exact(lam, 1.0, tau * math.exp(-rel_step), d))
    return (hi - lo) / (2 * rel_step)
