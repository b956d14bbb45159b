"""The simplex exponential integral.

    phi(a_1..a_n) = int_{w_i >= 0, sum w_i <= 1} exp(-sum a_i w_i) dw

equals the divided difference of exp at the nodes 0, -a_1, ..., -a_n. Three
routes are provided: the partial-fraction closed form for distinct rates,
the exponential of the bidiagonal generator (any rates, including clusters
and zeros), and a batched divided-difference table used inside samplers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial

import mpmath as mp
import numpy as np
from scipy.linalg import expm

from .errors import DomainError
from .params import Estimate
from .streams import run_chunked, stream_key

CLUSTER_GAP = 1e-6
_TAYLOR_TERMS = 24
_TAYLOR_SPREAD = 1.0


@dataclass(frozen=True)
class RateVector:
    rates: tuple

    def __init__(self, rates):
        arr = np.atleast_1d(np.asarray(rates, dtype=float))
        if arr.ndim != 1 or arr.size < 1:
            raise DomainError("a rate vector needs at least one entry")
        if not np.all(np.isfinite(arr)):
            raise DomainError("rates must be finite")
        if np.any(arr < 0):
            raise DomainError(f"rates must be non-negative, got {arr.tolist()}")
        object.__setattr__(self, "rates", tuple(float(a) for a in arr))

    @property
    def n(self) -> int:
        return len(self.rates)

    def array(self) -> np.ndarray:
        return np.array(self.rates)


def _as_rates(rates) -> RateVector:
    return rates if isinstance(rates, RateVector) else RateVector(rates)


def _well_separated(a: np.ndarray) -> bool:
    if np.any(a <= 0):
        return False
    s = np.sort(a)
    return bool(np.all(np.diff(s) / s[1:] >= CLUSTER_GAP))


def phi_closed_form(rates) -> float:
    """Partial-fraction formula [1 - sum_i prod_{j!=i} a_j/(a_j-a_i) e^{-a_i}] / prod a_i.

    Requires distinct positive rates. The cancellation in the bracket is
    estimated up front; when double precision would lose more than four
    digits the same formula is carried out in extended precision.
    """
    a = _as_rates(rates).array()
    if np.any(a <= 0):
        raise DomainError("closed form needs strictly positive rates")
    if np.unique(a).size != a.size:
        raise DomainError("closed form needs pairwise distinct rates")
    n = a.size
    coef = np.array([np.prod([a[j] / (a[j] - a[i]) for j in range(n) if j != i])
                     for i in range(n)])
    terms = coef * np.exp(-a)
    scale = 1.0 + np.sum(np.abs(terms))
    bracket = 1.0 - terms.sum()
    if bracket > 1e-4 * scale:
        return float(bracket / np.prod(a))
    # Jensen: phi >= exp(-sum a / (n+1)) / n!, which bounds the bracket below
    log_floor = np.sum(np.log(a)) - a.sum() / (n + 1) - math.lgamma(n + 1)
    digits = int(20 + math.log10(scale) - log_floor / math.log(10))
    with mp.workdps(digits):
        am = [mp.mpf(float(x)) for x in a]
        s = mp.mpf(1)
        for i in range(n):
            c = mp.mpf(1)
            for j in range(n):
                if j != i:
                    c *= am[j] / (am[j] - am[i])
            s -= c * mp.exp(-am[i])
        return float(s / mp.fprod(am))


def phi_generator(rates) -> float:
    """phi from the exponential of the bidiagonal generator.

    The last component of F' = G F with G upper bidiagonal, diagonal
    (0, -a_1, ..., -a_n) and unit superdiagonal, started from e_0 and run to
    time 1, is the simplex integral; zero and repeated rates need no
    special casing.
    """
    a = _as_rates(rates).array()
    n = a.size
    G = np.diag(np.concatenate([[0.0], -a])) + np.diag(np.ones(n), 1)
    return float(expm(G)[0, n])


def phi(rates) -> float:
    """Simplex exponential integral; always in (0, 1/n!]."""
    rv = _as_rates(rates)
    a = rv.array()
    if _well_separated(a):
        val = phi_closed_form(rv)
    else:
        val = phi_generator(rv)
    return min(val, 1.0 / factorial(rv.n))


def _divided_differences_exp(z: np.ndarray) -> np.ndarray:
    """exp[z_0, ..., z_m] for each row of z, shape (M, m+1)."""
    z = np.sort(z, axis=1)
    M, m1 = z.shape
    table = {(i, i): np.exp(z[:, i]) for i in range(m1)}
    for L in range(1, m1):
        for i in range(m1 - L):
            j = i + L
            spread = z[:, j] - z[:, i]
            val = (table[(i + 1, j)] - table[(i, j - 1)]) / np.where(spread > 0, spread, 1.0)
            close = spread <= _TAYLOR_SPREAD
            if close.any():
                # Taylor series about the centre, with complete homogeneous
                # symmetric polynomials h_k of the shifted nodes
                zz = z[close, i:j + 1]
                c = 0.5 * (zz[:, 0] + zz[:, -1])
                x = zz - c[:, None]
                h = np.zeros((_TAYLOR_TERMS + 1, zz.shape[0]))
                h[0] = 1.0
                for v in range(L + 1):
                    for k in range(1, _TAYLOR_TERMS + 1):
                        h[k] = h[k] + x[:, v] * h[k - 1]
                s = np.zeros(zz.shape[0])
                for k in range(_TAYLOR_TERMS, -1, -1):
                    s += h[k] / factorial(L + k)
                val = val.copy()
                val[close] = np.exp(c) * s
            table[(i, j)] = val
    return table[(0, m1 - 1)]


def phi_batch(rates: np.ndarray) -> np.ndarray:
    """Vectorised phi over the rows of an (M, n) array of rates."""
    a = np.atleast_2d(np.asarray(rates, dtype=float))
    if np.any(a < 0):
        raise DomainError("rates must be non-negative")
    z = np.concatenate([np.zeros((a.shape[0], 1)), -a], axis=1)
    return _divided_differences_exp(z)


def phi_chain_bound(rates, k: int) -> float:
    """(1 min prod_{i<=k} 1/a_i) * phi(a_{k+1}, ..., a_n), an upper bound for phi."""
    rv = _as_rates(rates)
    if not (1 <= k <= rv.n - 1):
        raise DomainError(f"k must lie in [1, n-1] = [1, {rv.n - 1}], got {k}")
    a = rv.array()
    if np.any(a[:k] == 0):
        raise DomainError("the first k rates must be positive")
    return min(1.0, 1.0 / float(np.prod(a[:k]))) * phi(a[k:])


def phi_chain_bound_batch(rates: np.ndarray, k: int) -> np.ndarray:
    a = np.atleast_2d(np.asarray(rates, dtype=float))
    head = np.minimum(1.0, 1.0 / np.prod(a[:, :k], axis=1))
    return head * phi_batch(a[:, k:])


def sample_simplex(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """Uniform points of {w >= 0, sum w <= 1} in R^n via normalised exponentials."""
    e = rng.standard_exponential((size, n + 1))
    return e[:, :n] / e.sum(axis=1, keepdims=True)


def phi_mc_oracle(rates, samples: int, seed: int = 0, parallelism: int = 1) -> Estimate:
    """Plain Monte Carlo over uniform simplex points; for testing only."""
    rv = _as_rates(rates)
    if samples < 1000:
        raise DomainError("phi_mc_oracle needs at least 1000 samples")
    a = rv.array()
    vol = 1.0 / factorial(rv.n)
    keys = ("phi-mc", stream_key(*rv.rates))

    def work(rng, size, _):
        w = sample_simplex(rng, size, rv.n)
        v = np.exp(-(w @ a))
        return v.sum(), (v * v).sum()

    parts = run_chunked(work, samples, seed, keys, chunk=1 << 18, parallelism=parallelism)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0) * samples / (samples - 1)
    return Estimate(value=vol * mean, stderr=vol * math.sqrt(var / samples),
                    n_samples=samples, method="simplex-mc", seed=seed,
                    stream=stream_key(*keys))
