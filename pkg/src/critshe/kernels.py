"""Special functions and exact constants for the index-2 Riesz kernel.

Bessel functions of order d/2, the Riesz spectral constant, the Riesz
composition constant, the Fourier transform of a ball indicator, Gaussian
inverse-square moments and an oscillatory quadrature for integrals of the
form ``int_0^inf w(r) J_{d/2}(r)^2 dr``.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError
from .params import QuadratureSpec

BALL_FOURIER_CROSSOVER = 1e-4


def _check_dim(d) -> int:
    if int(d) != d or d < 3:
        raise DomainError(f"dimension must be an integer >= 3, got {d}")
    return int(d)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def bessel_j(d: int, x):
    """J_{d/2}(x) for x >= 0; scalar or array.

    Odd d goes through the spherical Bessel closed form
    J_{k+1/2}(x) = sqrt(2x/pi) j_k(x); even d through the integer-order routine.
    """
    d = _check_dim(d)
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)):
        raise DomainError("bessel_j needs a finite argument")
    if np.any(xa < 0):
        raise DomainError("bessel_j needs x >= 0")
    if d % 2:
        out = np.sqrt(2 * xa / np.pi) * special.spherical_jn((d - 1) // 2, xa)
    else:
        out = special.jv(d // 2, xa)
    return float(out) if out.ndim == 0 else out


def bessel_y(d: int, x):
    """Y_{d/2}(x), used only for the modulus-phase split of tails."""
    d = _check_dim(d)
    xa = np.asarray(x, dtype=float)
    if d % 2:
        out = np.sqrt(2 * xa / np.pi) * special.spherical_yn((d - 1) // 2, xa)
    else:
        out = special.yv(d // 2, xa)
    return float(out) if out.ndim == 0 else out


def _bessel_jp(d, x):
    return special.jvp(d / 2, x)


def bessel_j_zeros(d: int, upto: float) -> np.ndarray:
    """Positive zeros of J_{d/2} below ``upto`` in increasing order."""
    d = _check_dim(d)
    if upto <= 0:
        return np.empty(0)
    grid = np.arange(0.05, upto + 0.05, 0.05)
    f = bessel_j(d, grid)
    k = np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]
    lo, hi = grid[k], grid[k + 1]
    flo, fhi = f[k], f[k + 1]
    z = lo - flo * (hi - lo) / (fhi - flo)
    for _ in range(8):
        step = bessel_j(d, z) / _bessel_jp(d, z)
        z = np.clip(z - step, lo, hi)
    return z[z < upto]


def bessel_envelope_constant(d: int, x_max: float = 1e4, n: int = 200001) -> float:
    """Empirical sup of |J_{d/2}(x)| sqrt(x) on (0, x_max]."""
    x = np.linspace(x_max / n, x_max, n)
    x = np.concatenate([np.linspace(1e-6, 50, 50001), x])
    return float(np.max(np.abs(bessel_j(d, x)) * np.sqrt(x)))


def riesz_spectral_constant(d: int) -> float:
    """c_d with Fourier transform of |x|^{-2} equal to (2 pi)^d c_d |xi|^{2-d}."""
    d = _check_dim(d)
    return math.gamma((d - 2) / 2) / (4 * math.pi ** (d / 2))


def riesz_composition_k(alpha: float, beta: float, d: int) -> float:
    """k with int |x-z|^{alpha-d} |z-y|^{beta-d} dz = k |x-y|^{alpha+beta-d}."""
    if not (alpha > 0 and beta > 0 and alpha + beta < d):
        raise DomainError(
            f"need 0 < alpha, beta and alpha+beta < d; got {alpha}, {beta}, d={d}")
    g = math.gamma
    return (math.pi ** (d / 2) * g(alpha / 2) * g(beta / 2) * g((d - alpha - beta) / 2)
            / (g((d - alpha) / 2) * g((d - beta) / 2) * g((alpha + beta) / 2)))


def ball_fourier(R: float, xi) -> float:
    """Fourier transform of the indicator of the ball of radius R at frequency xi."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = _check_dim(xi.shape[-1])
    k = float(np.linalg.norm(xi))
    x = R * k
    vol = unit_ball_volume(d) * R ** d
    if x < BALL_FOURIER_CROSSOVER:
        return vol * (1 - x * x / (2 * d + 4))
    return (2 * math.pi * R) ** (d / 2) * k ** (-d / 2) * bessel_j(d, x)


def inv_sq_gaussian_moment(x, s: float) -> float:
    """E|x + Z|^{-2} for Z ~ N(0, 2s I_d), d = len(x).

    Uses |y|^{-2} = int_0^inf exp(-u|y|^2) du and the Gaussian Laplace
    transform, which after the substitution v = 1/(1+4su) leaves
    (1/(4s)) int_0^1 v^{d/2-2} exp(-lam (1-v)/2) dv with lam = |x|^2/(2s).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = _check_dim(x.size)
    if not s > 0:
        raise DomainError("inv_sq_gaussian_moment needs s > 0")
    lam = float(x @ x) / (2 * s)
    val, err = integrate.quad(lambda v: math.exp(-lam * (1 - v) / 2), 0.0, 1.0,
                              weight="alg", wvar=(d / 2 - 2, 0.0),
                              epsabs=0.0, epsrel=1e-12, limit=200)
    if not np.isfinite(val) or err > 1e-9 * abs(val):
        raise NumericalError(f"inverse-square moment quadrature failed (err={err})")
    return val / (4 * s)


def ball_distance_density(r, d: int, R: float = 1.0):
    """Density of |X - Y| for X, Y independent uniform in the ball B_R in R^d."""
    d = _check_dim(d)
    r = np.asarray(r, dtype=float)
    u = np.clip(r / R, 0.0, 2.0)
    f = d * u ** (d - 1) * special.betainc((d + 1) / 2, 0.5, np.clip(1 - u * u / 4, 0, 1)) / R
    return np.where((r >= 0) & (r <= 2 * R), f, 0.0)


def bessel_sq_power_integral(p: float, d: int) -> float:
    """Closed form of int_0^inf r^{-p} J_{d/2}(r)^2 dr for 0 < p < d+1."""
    d = _check_dim(d)
    nu = d / 2
    if not (0 < p < 2 * nu + 1):
        raise DomainError(f"integral diverges for p={p}, d={d}")
    g = special.gamma
    return float(g(p) * g(nu + (1 - p) / 2)
                 / (2 ** p * g((1 + p) / 2) ** 2 * g(nu + (1 + p) / 2)))


def _euler_sum(terms: np.ndarray) -> float:
    """Sum of an alternating series from its leading terms by repeated averaging."""
    s = np.cumsum(terms)
    while s.size > 1:
        s = 0.5 * (s[1:] + s[:-1])
    return float(s[0])


def _modulus_phase_zeros(d: int, start: float, count: int) -> np.ndarray:
    """Zeros of J^2 - Y^2 beyond ``start``, where the Bessel phase hits pi/4 mod pi/2."""
    nu = d / 2
    omega = (2 * nu + 1) * math.pi / 4
    m0 = math.ceil((start - omega - math.pi / 4) / (math.pi / 2))
    z = omega + math.pi / 4 + (m0 + np.arange(count + 2)) * math.pi / 2
    z = z.astype(float)
    for _ in range(6):
        j, y = bessel_j(d, z), bessel_y(d, z)
        jp, yp = special.jvp(nu, z), special.yvp(nu, z)
        z = z - (j * j - y * y) / (2 * (j * jp - y * yp))
    z = z[z > start]
    return z[:count]


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _gl_blocks(f, edges):
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    r = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return (f(r) * _GL_WEIGHTS[None, :]).sum(axis=1) * half


def bessel_sq_integral(weight: Callable[[np.ndarray], np.ndarray], d: int,
                       quad: QuadratureSpec = QuadratureSpec(),
                       scale: float = 1.0) -> tuple[float, float]:
    """int_0^inf weight(r) J_{d/2}(r)^2 dr for a smooth non-oscillating weight.

    The head is integrated by Gauss-Legendre between consecutive zeros of
    J_{d/2}. Beyond the last head zero X the square is split as
    J^2 = (J^2+Y^2)/2 + (J^2-Y^2)/2: the first half is monotone and handed
    to adaptive quadrature, the second oscillates with nearly constant
    amplitude between zeros of J^2-Y^2 and is summed block by block with
    Euler acceleration. ``scale`` marks where ``weight`` changes shape so
    the head extends past it. Returns (value, error estimate).
    """
    d = _check_dim(d)
    weight_sq = lambda r: weight(r) * bessel_j(d, r) ** 2
    x_head = max(40.0 * (d / 2 + 1), 8.0 * scale)
    zeros = bessel_j_zeros(d, x_head + 4.0)
    if zeros.size > quad.max_subdivisions:
        zeros = zeros[:quad.max_subdivisions]
    edges = np.concatenate([[0.0], zeros])
    # the first block may carry a fractional power at r = 0
    first_block, fb_err = integrate.quad(lambda r: float(weight_sq(np.array([r]))[0]),
                                         0.0, edges[1], epsabs=quad.abs_tol,
                                         epsrel=quad.rel_tol, limit=quad.max_subdivisions)
    head = first_block + float(np.sum(_gl_blocks(weight_sq, edges[1:])))
    X = float(edges[-1])

    def smooth(r):
        return 0.5 * weight(np.asarray(r)) * (bessel_j(d, r) ** 2 + bessel_y(d, r) ** 2)

    sm, sm_err = integrate.quad(smooth, X, np.inf, epsabs=quad.abs_tol,
                                epsrel=quad.rel_tol, limit=quad.max_subdivisions)
    nblk = 4 * quad.tail_zero_blocks
    tz = _modulus_phase_zeros(d, X, nblk)
    osc_f = lambda r: 0.5 * weight(r) * (bessel_j(d, r) ** 2 - bessel_y(d, r) ** 2)
    first = float(_gl_blocks(osc_f, np.array([X, tz[0]]))[0])
    terms = _gl_blocks(osc_f, tz)
    acc = _euler_sum(terms)
    acc_short = _euler_sum(terms[:-1])
    value = head + sm + first + acc
    err = abs(fb_err) + abs(sm_err) + abs(acc - acc_short)
    if not np.isfinite(value):
        raise NumericalError("Bessel-square quadrature produced a non-finite value")
    tol = max(quad.abs_tol, quad.rel_tol * abs(value))
    if err > 1e3 * tol:
        raise NumericalError(f"Bessel-square quadrature error {err:.3g} above tolerance")
    return value, err
