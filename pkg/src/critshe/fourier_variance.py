"""Fourier-side chaos variances, the limiting variance constant and proof constants.

At t = 1 the n-th chaos variance of the ball average is

    Var_n = kappa^{2n} (2 pi)^d R^{2d-2n} c_d^n
            int prod_j |eta_j - eta_{j-1}|^{2-d} |eta_n|^{-d} J_{d/2}(|eta_n|)^2
                phi(|eta_1|^2/R^2, ..., |eta_n|^2/R^2) d eta,   eta_0 = 0.

The angular integrals are done exactly: by Newton's shell theorem the mean
of |x - y|^{2-d} over the sphere |y| = a is max(|x|, a)^{2-d}. What remains
is an n-dimensional radial integral

    I_n = int prod_j r_j^{d-1} r_1^{2-d} prod_{j>=2} max(r_{j-1}, r_j)^{2-d}
              r_n^{-d} J(r_n)^2 phi(r^2/R^2) dr,
    Var_n = kappa^{2n} (2 pi)^d R^{2d-2n} c_d^n S_{d-1}^n I_n.

n = 1 is a one-dimensional Bessel-square integral; n >= 2 is estimated by
importance sampling in the radii. Other times follow from the diffusive
scaling Var_n(t, R) = t^d Var_n(1, R / sqrt(t)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, NumericalError, UnreliableEstimateError
from .kernels import (bessel_j, bessel_sq_integral, bessel_sq_power_integral,
                      ball_distance_density, riesz_composition_k, riesz_spectral_constant,
                      sphere_area, unit_ball_volume)
from .params import Estimate, ModelParams, QuadratureSpec
from .simplex_phi import phi_batch
from .streams import mean_and_stderr, run_chunked, stream_key
from .feynman_kac import sample_uniform_ball

MIN_ESS_FRACTION = 0.01
OUTER_POWER = 0.5
MC_CHUNK = 1 << 17
# tabulated range of the Bessel-square proposal; a Pareto tail covers beyond
_B_MAX = 2000.0


def _psi(a):
    """(1 - e^{-a}) / a with the a -> 0 limit."""
    a = np.asarray(a, dtype=float)
    small = a < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, 1.0 - a / 2, -np.expm1(-safe) / safe)


def _fourier_prefactor(n: int, d: int, kappa: float, R: float) -> float:
    c = riesz_spectral_constant(d)
    return (kappa ** (2 * n) * (2 * math.pi) ** d * R ** (2 * d - 2 * n)
            * c ** n * sphere_area(d) ** n)


# -- the limiting variance --------------------------------------------------------

def sigma_squared_fourier(d: int, kappa: float, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """kappa^2 (2 pi)^d c_d S_{d-1} int_0^inf r^{1-d} J_{d/2}(r)^2 dr by quadrature."""
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    val, _ = bessel_sq_integral(lambda r: r ** (1.0 - d), d, quad)
    return kappa ** 2 * (2 * math.pi) ** d * riesz_spectral_constant(d) * sphere_area(d) * val


def sigma_squared_closed_form(d: int, kappa: float) -> float:
    """Same constant with the Bessel-square integral in closed form."""
    return (kappa ** 2 * (2 * math.pi) ** d * riesz_spectral_constant(d) * sphere_area(d)
            * bessel_sq_power_integral(d - 1, d))


def sigma_squared_distance_quadrature(d: int, kappa: float) -> float:
    """kappa^2 int int_{B_1^2} |x - y|^{-2} from the ball distance density."""
    from scipy import integrate
    vol = unit_ball_volume(d)
    val, _ = integrate.quad(lambda r: float(ball_distance_density(r, d)) / (r * r),
                            0.0, 2.0, epsrel=1e-12, limit=200)
    return kappa ** 2 * vol * vol * val


def sigma_squared_real_mc(d: int, kappa: float, n_pairs: int, seed: int,
                          parallelism: int = 1) -> Estimate:
    """kappa^2 int int_{B_1^2} |x - y|^{-2} by Monte Carlo.

    Uniform pairs give an infinite-variance estimator (the pole is only
    barely integrable), so x is uniform in B_1 and the offset z = y - x is
    drawn with density proportional to |z|^{-2} on |z| < 2. The weight then
    reduces to a constant times the indicator that x + z lies in B_1.
    """
    vol = unit_ball_volume(d)
    z_norm = sphere_area(d) * 2.0 ** (d - 2) / (d - 2)  # int_{|z|<2} |z|^{-2} dz
    keys = ("sigma-real", f"d{d}")

    def work(rng, size, _):
        x = sample_uniform_ball(rng, size, d, 1.0)
        u = rng.standard_normal((size, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = 2.0 * rng.random(size) ** (1.0 / (d - 2))
        y = x + u * rad[:, None]
        return int(np.count_nonzero(np.einsum("md,md->m", y, y) < 1.0))

    hits = sum(run_chunked(work, n_pairs, seed, keys, chunk=MC_CHUNK, parallelism=parallelism))
    p = hits / n_pairs
    scale = kappa ** 2 * vol * z_norm
    se = scale * math.sqrt(p * (1 - p) / n_pairs)
    return Estimate(scale * p, se, n_pairs, "real-space-mc", seed, stream_key(*keys))


def sigma_squared(d: int, kappa: float, quad: QuadratureSpec = QuadratureSpec(),
                  n_pairs: int = 10 ** 7, seed: int = 0,
                  parallelism: int = 1) -> tuple[float, Estimate]:
    """(Fourier quadrature, real-space Monte Carlo) for the limiting variance."""
    if int(d) != d or d < 3:
        raise DomainError("dimension must be an integer >= 3")
    fourier = sigma_squared_fourier(d, kappa, quad)
    if not math.isfinite(fourier):
        raise NumericalError("Fourier quadrature for sigma^2 diverged")
    return fourier, sigma_squared_real_mc(d, kappa, n_pairs, seed, parallelism)


# -- first chaos ----------------------------------------------------------------------

def first_chaos_variance_exact(params: ModelParams, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Var of the first chaos of u_t(B_R) by Bessel-square quadrature."""
    d, kappa = params.d, params.kappa
    R = params.R / math.sqrt(params.t)
    val, _ = bessel_sq_integral(lambda r: r ** (1.0 - d) * _psi(r * r / (R * R)), d, quad,
                                scale=R)
    return params.t ** d * _fourier_prefactor(1, d, kappa, R) * val


# -- higher chaos: importance sampling in the radii -------------------------------

@dataclass(frozen=True)
class ChaosVarianceSpec:
    n: int
    params: ModelParams
    quad: QuadratureSpec = QuadratureSpec()
    mc_samples: int = 2 * 10 ** 6

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("chaos order must be >= 1")


class BesselSquareSampler:
    """Draws b with density d J_{d/2}(b)^2 / b on (0, inf).

    Piecewise-uniform on a fine table over (0, B]; beyond B a Pareto law
    with the asymptotic b^{-2} decay. ``sample`` also returns the proposal
    density actually used, so importance weights stay exact.
    """

    def __init__(self, d: int, b_max: float = _B_MAX):
        self.d = d
        self.b_max = b_max
        grid = np.concatenate([np.linspace(0.0, 50.0, 20001)[:-1],
                               np.linspace(50.0, b_max, 200001)])
        lo, hi = grid[:-1], grid[1:]
        xg, wg = np.polynomial.legendre.leggauss(6)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * xg[None, :]
        mass = (self.target(nodes) * wg).sum(axis=1) * half
        self.lo, self.hi = lo, hi
        self.mass = mass
        self.cdf = np.concatenate([[0.0], np.cumsum(mass)])
        self.tail = max(1.0 - self.cdf[-1], 0.0)
        self.total = self.cdf[-1] + self.tail

    def target(self, b):
        b = np.asarray(b, dtype=float)
        out = np.zeros_like(b)
        m = b > 0
        out[m] = self.d * bessel_j(self.d, b[m]) ** 2 / b[m]
        return out

    def sample(self, rng: np.random.Generator, size: int):
        u = rng.random(size) * self.total
        b = np.empty(size)
        q = np.empty(size)
        head = u < self.cdf[-1]
        k = np.clip(np.searchsorted(self.cdf, u[head], side="right") - 1, 0, self.mass.size - 1)
        width = self.hi[k] - self.lo[k]
        b[head] = self.lo[k] + (u[head] - self.cdf[k]) / self.mass[k] * width
        q[head] = self.mass[k] / width / self.total
        v = rng.random(int(np.count_nonzero(~head)))
        b[~head] = self.b_max / np.maximum(v, 1e-300)
        q[~head] = self.tail / self.total * self.b_max / b[~head] ** 2
        return b, q


@lru_cache(maxsize=8)
def _bessel_sampler(d: int) -> BesselSquareSampler:
    return BesselSquareSampler(d)


def _broken_power_sample(rng, size, s, p, q):
    left = rng.random(size) < q / (p + q)
    u = rng.random(size)
    return np.where(left, s * u ** (1.0 / p), s * u ** (-1.0 / q))


def _broken_power_pdf(r, s, p, q):
    c = p * q / ((p + q) * s ** p)
    return np.where(r < s, c * r ** (p - 1), c * s ** (p + q) * r ** (-q - 1))


def radius_proposal_components(d: int, R: float) -> list[tuple[float, float, float]]:
    """(scale, inner power, outer power) of the broken power laws for inner radii.

    Near 0 the radial integrand grows like r, so the inner power is 2. When
    k inner radii grow together like rho the integrand decays like
    rho^{2-k-d}, and the weight variance is finite only if the outer power
    q satisfies k q < 2d - 4; q = 1/2 covers k <= 3, i.e. every n <= 4.
    Breaks sit at the scales 1, sqrt(R) and R set by the Bessel factor and phi.
    """
    q = OUTER_POWER
    return [(1.0, 2.0, q), (math.sqrt(R), 2.0, q), (float(R), 2.0, q)]


def _sample_radius(rng, size, comps):
    k = rng.integers(0, len(comps), size)
    r = np.empty(size)
    for i, c in enumerate(comps):
        m = k == i
        r[m] = _broken_power_sample(rng, int(m.sum()), *c)
    pdf = sum(_broken_power_pdf(r, *c) for c in comps) / len(comps)
    return r, pdf


def _radial_integrand(radii: np.ndarray, d: int, R: float, with_bessel: bool = True):
    """Integrand of I_n at radii (M, n), the last column being |eta_n|.

    Returns (integrand, phi factor, rates).
    """
    n = radii.shape[1]
    val = radii[:, 0] ** (2.0 - d)
    for j in range(n):
        val = val * radii[:, j] ** (d - 1.0)
    for j in range(1, n):
        val = val * np.maximum(radii[:, j - 1], radii[:, j]) ** (2.0 - d)
    b = radii[:, -1]
    val = val * b ** (-float(d))
    if with_bessel:
        val = val * bessel_j(d, b) ** 2
    rates = radii ** 2 / R ** 2
    ph = phi_batch(rates)
    return val * ph, ph, rates


def fourier_importance_sample(n: int, d: int, R: float, rng: np.random.Generator, size: int):
    """One batch of importance weights for I_n; returns (weights, phi values, rates)."""
    sampler = _bessel_sampler(d)
    comps = radius_proposal_components(d, R)
    radii = np.empty((size, n))
    q = np.ones(size)
    for j in range(n - 1):
        radii[:, j], pdf = _sample_radius(rng, size, comps)
        q *= pdf
    radii[:, -1], qb = sampler.sample(rng, size)
    q *= qb
    f, ph, rates = _radial_integrand(radii, d, R)
    return f / q, ph, rates


def nth_chaos_fourier_mc(spec: ChaosVarianceSpec, seed: int, parallelism: int = 1,
                         raise_on_unreliable: bool = True) -> Estimate:
    """Importance-sampled Var_n for 2 <= n <= 4."""
    n, p = spec.n, spec.params
    if not 2 <= n <= 4:
        raise DomainError("the Fourier Monte Carlo covers chaos orders 2..4")
    d = p.d
    R = p.R / math.sqrt(p.t)
    keys = ("chaos-fourier", f"n{n}", f"d{d}", f"R{R!r}")
    _bessel_sampler(d)  # build the table before any worker threads start

    def work(rng, size, _):
        w, _, _ = fourier_importance_sample(n, d, R, rng, size)
        return w

    w = np.concatenate(run_chunked(work, spec.mc_samples, seed, keys, chunk=MC_CHUNK,
                                   parallelism=parallelism))
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise NumericalError("importance weights must be finite and non-negative")
    m, se = mean_and_stderr(w)
    ess = float(w.sum() ** 2 / np.sum(w * w)) if np.any(w > 0) else 0.0
    pref = p.t ** d * _fourier_prefactor(n, d, p.kappa, R)
    est = Estimate(pref * m, pref * se, w.size, "fourier-mc", seed, stream_key(*keys),
                   reliable=ess >= MIN_ESS_FRACTION * w.size,
                   diagnostics={"ess": ess, "max_weight_share": float(w.max() / w.sum())})
    if raise_on_unreliable and not est.reliable:
        raise UnreliableEstimateError(
            f"effective sample size {ess:.3g} below {MIN_ESS_FRACTION:.0%} of "
            f"{w.size} samples", est)
    return est


_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def _geometric_panels(lo_exp: float, n_panels: int):
    edges = np.concatenate([[0.0], np.logspace(lo_exp, 0.0, n_panels + 1)])
    a, b = edges[:-1], edges[1:]
    x = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _GL8_X[None, :]
    w = 0.5 * (b - a)[:, None] * _GL8_W[None, :]
    return x.ravel(), w.ravel()


_U_NODES, _U_WEIGHTS = _geometric_panels(-10.0, 60)


def _second_chaos_inner(b: np.ndarray, d: int, R: float) -> np.ndarray:
    """G(b) = int_0^inf a max(a, b)^{2-d} phi(a^2/R^2, b^2/R^2) da, vectorised in b."""
    b = np.asarray(b, dtype=float)
    shape = b.shape
    b = b.ravel()
    u, wu = _U_NODES, _U_WEIGHTS
    B = b[:, None]
    # a = b u on [0, b]
    a1 = B * u[None, :]
    rates1 = np.stack([(a1 / R) ** 2, np.broadcast_to((B / R) ** 2, a1.shape)], axis=-1)
    f1 = a1 * B ** (2.0 - d) * phi_batch(rates1.reshape(-1, 2)).reshape(a1.shape) * B
    # a = b / v on [b, inf)
    a2 = B / u[None, :]
    rates2 = np.stack([(a2 / R) ** 2, np.broadcast_to((B / R) ** 2, a2.shape)], axis=-1)
    f2 = a2 ** (3.0 - d) * phi_batch(rates2.reshape(-1, 2)).reshape(a2.shape) * B / u[None, :] ** 2
    return ((f1 + f2) * wu[None, :]).sum(axis=1).reshape(shape)


def second_chaos_radial_quadrature(params: ModelParams,
                                   quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Deterministic Var_2 from the radial reduction; a check on the sampler."""
    d = params.d
    R = params.R / math.sqrt(params.t)
    val, _ = bessel_sq_integral(lambda b: _second_chaos_inner(b, d, R) / b, d, quad, scale=R)
    return params.t ** d * _fourier_prefactor(2, d, params.kappa, R) * val


# -- proof constants -----------------------------------------------------------------

@dataclass(frozen=True)
class ProofConstants:
    d: int
    kappa: float
    m0: int
    gamma0: float
    gamma_J: float
    k_J: float
    k_K: float
    geometric_ratio: float
    summable: bool
    diagnostics: dict = field(default_factory=dict, compare=False)


def _m0_gamma0(d: int) -> tuple[int, float]:
    """Largest m0 >= 0 with 4 m0 <= d - 3, and gamma0 = 3/2 + (4 m0 - (d - 3))/2."""
    m0 = (d - 3) // 4
    return m0, 1.5 + (4 * m0 - (d - 3)) / 2


def proof_constants(d: int, kappa: float) -> ProofConstants:
    """Exponent choices that make the higher-chaos bounds a geometric series."""
    if int(d) != d or d < 3:
        raise DomainError("dimension must be an integer >= 3")
    d = int(d)
    m0, gamma0 = _m0_gamma0(d)
    gamma_J = (d - 2) / 2
    c = riesz_spectral_constant(d)
    k_J = riesz_composition_k(gamma_J, 2.0, d)
    k_K = riesz_composition_k(2 * m0 + 2 - gamma0, 2.0, d)
    ratio = kappa ** 2 * c * k_J
    # the ratio equals kappa^2 / gamma_J^2 exactly; decide summability on that form
    exact_ratio = (kappa / gamma_J) ** 2
    return ProofConstants(d=d, kappa=kappa, m0=m0, gamma0=gamma0, gamma_J=gamma_J,
                          k_J=k_J, k_K=k_K, geometric_ratio=ratio,
                          summable=bool(exact_ratio < 1.0),
                          diagnostics={"k_J_closed_form": 1.0 / (c * gamma_J ** 2)})


def _radial_power_integral(exponent: float, d: int) -> float:
    """int_{R^d} |eta|^{exponent} J_{d/2}(|eta|)^2 d eta."""
    p = -(exponent + d - 1)
    return sphere_area(d) * bessel_sq_power_integral(p, d)


def envelope_constant_J(n: int, d: int) -> float:
    """Bound on the |eta_1| > 1 part of the normalised n-th chaos integral."""
    c = riesz_spectral_constant(d)
    return ((1 / c) ** (n - 1) * (2 / (d - 2)) ** (2 * n - 2)
            * _radial_power_integral(-2 * d + (d + 2) / 2, d))


def envelope_constant_K(n: int, d: int) -> float:
    """Bound on the |eta_1| < 1 part of the normalised n-th chaos integral."""
    m0, gamma0 = _m0_gamma0(d)
    if n <= m0 + 2:
        m, g = 0, 1.5
    else:
        m, g = m0, gamma0
    prod = 1.0
    for i in range(m + 1):
        prod *= riesz_composition_k(2 * i + 2 - g, 2.0, d)
    prod *= riesz_composition_k(2 * m + 2 - g, 2.0, d) ** (n - 2 - m)
    return prod * _radial_power_integral(-2 * d + 2 * m + 4 - g, d)


def chaos_envelope(n: int, d: int, kappa: float) -> float:
    """Upper bound for Var_n / R^{2d-2} valid for every R > 1 (loose; diagnostic only)."""
    c = riesz_spectral_constant(d)
    return (kappa ** (2 * n) * (2 * math.pi) ** d * c ** n
            * (envelope_constant_J(n, d) + envelope_constant_K(n, d)))
