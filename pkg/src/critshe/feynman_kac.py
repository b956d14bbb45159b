"""Monte Carlo for the Brownian functional beta_t(x) and the moments built on it.

    beta_t(x) = int_0^t ds / |x + sqrt(2) W_s|^2

Chaos variances and the second moment of the ball average follow from

    Var I_n = kappa^{2n}/n! int int_{B_R^2} E beta_t(x-y)^n dx dy,
    E u_t(B_R)^2 = int int_{B_R^2} E exp(kappa^2 beta_t(x-y)) dx dy.

Path discretisation: each path lives on a graded grid s_k = t (k/N)^p with
p = 1 + max(0, log(t/|x|^2) / log N), so that the first step is resolved on
the scale |x|^2 of the starting distance. Steps whose endpoints come within
delta * sqrt(2 h) of the pole are subdivided by exact Brownian-bridge
midpoints until they no longer do (or ``max_depth`` is reached); leaves are
integrated by the trapezoid or harmonic two-point rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import bessel_process as bp
from .errors import DomainError, HeavyTailError
from .kernels import ball_distance_density, unit_ball_volume
from .params import Estimate, ModelParams
from .streams import jackknife_stderr, mean_and_stderr, run_chunked, stream_key

DEFAULT_BASE_STEPS = 1024
DEFAULT_DELTA = 4.0
# a close approach at distance eps within a step h needs about log2(h / eps^2)
# halvings; only a few segments are still active that deep, so the cap is generous
DEFAULT_MAX_DEPTH = 64
MAX_MOMENT_ORDER = 8
PATH_CHUNK = 1024
LEAF_RULES = ("trapezoid", "harmonic")
RELIABILITY_REL_STDERR = 0.05
RELIABILITY_TOP10_SHARE = 0.20
# edges of log10(min distance / |x|) used to post-stratify heavy-tailed samples
STRATA_EDGES = (-np.inf, -2.0, -1.0, -0.5, np.inf)


@dataclass
class BetaSampleBatch:
    """Realisations of beta_t(x) with their discretisation metadata."""

    values: np.ndarray
    t: float
    x: np.ndarray
    base_steps: int
    refinement_events: int
    seed: int | None
    stream: str = ""
    min_distance: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.base_steps < 64:
            raise DomainError("base_steps must be >= 64")
        if np.any(self.values < 0):
            raise DomainError("beta realisations must be non-negative")

    def moment(self, n: int) -> Estimate:
        """E beta^n with jackknife standard error; n = 0 gives 1 exactly."""
        if n == 0:
            return Estimate(1.0, 0.0, self.values.size, "fk-mc", self.seed, self.stream)
        v = self.values ** n
        return Estimate(float(np.mean(v)), jackknife_stderr(v), v.size, "fk-mc",
                        self.seed, self.stream)


def _simulate_paths(start: np.ndarray, t: np.ndarray, rng: np.random.Generator,
                    base_steps: int = DEFAULT_BASE_STEPS, delta: float = DEFAULT_DELTA,
                    max_depth: int = DEFAULT_MAX_DEPTH, rule: str = "trapezoid"):
    """Vectorised beta for paths started at the rows of ``start``.

    Returns (values, number of bridge subdivisions, minimum distance seen).
    """
    if rule not in LEAF_RULES:
        raise DomainError(f"leaf rule must be one of {LEAF_RULES}")
    M, d = start.shape
    N = int(base_steps)
    t = np.broadcast_to(np.asarray(t, dtype=float), (M,))
    r0sq = np.einsum("md,md->m", start, start)
    if np.any(r0sq <= 0):
        raise DomainError("paths must start away from the pole")
    tau = t / r0sq
    p = 1.0 + np.maximum(0.0, np.log(tau) / math.log(N))
    u = np.arange(N + 1) / N
    s = t[:, None] * u[None, :] ** p[:, None]
    h = np.diff(s, axis=1)

    P = np.empty((M, N + 1, d))
    P[:, 0] = start
    steps = rng.standard_normal((M, N, d)) * np.sqrt(2.0 * h)[:, :, None]
    np.cumsum(steps, axis=1, out=P[:, 1:])
    P[:, 1:] += start[:, None, :]
    del steps
    r2 = np.einsum("mkd,mkd->mk", P, P)
    r = np.sqrt(r2)
    min_dist = r.min(axis=1)

    flag = np.minimum(r[:, :-1], r[:, 1:]) < delta * np.sqrt(2.0 * h)
    contrib = 0.5 * h * (1.0 / r2[:, :-1] + 1.0 / r2[:, 1:])
    out = np.where(flag, 0.0, contrib).sum(axis=1)

    idx, k = np.nonzero(flag)
    p0, p1, hh = P[idx, k], P[idx, k + 1], h[idx, k]
    del P
    n_ref = 0
    depth = 0
    while idx.size:
        n_ref += idx.size
        mid = 0.5 * (p0 + p1) + rng.standard_normal(p0.shape) * np.sqrt(hh / 2.0)[:, None]
        hh = 0.5 * hh
        depth += 1
        idx = np.concatenate([idx, idx])
        a = np.concatenate([p0, mid])
        b = np.concatenate([mid, p1])
        hh = np.concatenate([hh, hh])
        ra = np.sqrt(np.einsum("md,md->m", a, a))
        rb = np.sqrt(np.einsum("md,md->m", b, b))
        np.minimum.at(min_dist, idx, np.minimum(ra, rb))
        again = np.minimum(ra, rb) < delta * np.sqrt(2.0 * hh)
        if depth >= max_depth:
            again[:] = False
        if rule == "harmonic":
            leaf = hh / (ra * rb)
        else:
            leaf = 0.5 * hh * (1.0 / ra ** 2 + 1.0 / rb ** 2)
        done = ~again
        np.add.at(out, idx[done], leaf[done])
        idx, p0, p1, hh = idx[again], a[again], b[again], hh[again]
    return out, n_ref, min_dist


def sample_beta(x, t: float, base_steps: int = DEFAULT_BASE_STEPS,
                rng_stream: np.random.Generator | None = None, **kw) -> float:
    """One realisation of beta_t(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not t > 0:
        raise DomainError("t must be positive")
    rng = rng_stream if rng_stream is not None else np.random.default_rng()
    vals, _, _ = _simulate_paths(x[None, :], np.array([t]), rng, base_steps, **kw)
    return float(vals[0])


def sample_beta_batch(x, t: float, n_paths: int, seed: int,
                      base_steps: int = DEFAULT_BASE_STEPS, delta: float = DEFAULT_DELTA,
                      rule: str = "trapezoid", max_depth: int = DEFAULT_MAX_DEPTH,
                      parallelism: int = 1, keys=("beta",)) -> BetaSampleBatch:
    """``n_paths`` independent realisations of beta_t(x) from the stream ``keys``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size < 3:
        raise DomainError("dimension must be >= 3")
    if not t > 0:
        raise DomainError("t must be positive")

    def work(rng, size, _):
        start = np.broadcast_to(x, (size, x.size))
        return _simulate_paths(start, np.full(size, float(t)), rng, base_steps,
                               delta, max_depth, rule)

    parts = run_chunked(work, n_paths, seed, keys, chunk=PATH_CHUNK,
                        parallelism=parallelism)
    return BetaSampleBatch(values=np.concatenate([p[0] for p in parts]), t=float(t), x=x,
                           base_steps=base_steps,
                           refinement_events=int(sum(p[1] for p in parts)),
                           seed=seed, stream=stream_key(*keys),
                           min_distance=np.concatenate([p[2] for p in parts]))


def _check_order(n_max):
    if n_max > MAX_MOMENT_ORDER:
        raise HeavyTailError(
            f"moment order {n_max} > {MAX_MOMENT_ORDER}: beta has exponential tails "
            "and higher powers are dominated by a handful of samples")


def beta_moments(x, t: float, n_max: int, n_paths: int, seed: int, **kw) -> list[Estimate]:
    """E beta_t(x)^n for n = 1..n_max from one shared path ensemble."""
    _check_order(n_max)
    batch = sample_beta_batch(x, t, n_paths, seed, keys=("beta-moments",), **kw)
    return [batch.moment(n) for n in range(1, n_max + 1)]


def _check_kappa(kappa, d):
    if not (0 < kappa < (d - 2) / 2):
        raise DomainError(
            f"kappa={kappa} violates the model constraint 0 < kappa < (d-2)/2 = {(d - 2) / 2}")


def _top_share(w: np.ndarray, k: int = 10) -> float:
    tot = w.sum()
    if tot <= 0:
        return 0.0
    return float(np.sort(w)[-k:].sum() / tot)


def _strata(values: np.ndarray, rel_min: np.ndarray) -> list[dict]:
    """Per-stratum counts and contributions, binned by log10(min distance / |x|)."""
    lg = np.log10(np.maximum(rel_min, 1e-300))
    n = values.size
    rows = []
    for lo, hi in zip(STRATA_EDGES[:-1], STRATA_EDGES[1:]):
        m = (lg >= lo) & (lg < hi)
        c = int(m.sum())
        contrib = values * m / n
        rows.append({"log10_min_dist": [lo, hi], "count": c,
                     "contribution": float(contrib.sum()),
                     "stderr": float(np.std(contrib, ddof=1) * math.sqrt(n)) / n if n > 1 else 0.0})
    return rows


def _reliability(w: np.ndarray, est: float, se: float) -> tuple[bool, dict]:
    rel = se / abs(est) if est else math.inf
    share = _top_share(w)
    ok = rel <= RELIABILITY_REL_STDERR and share <= RELIABILITY_TOP10_SHARE
    return ok, {"rel_stderr": rel, "top10_share": share}


def exp_moment(x, t: float, kappa: float, n_paths: int, seed: int, **kw) -> Estimate:
    """E exp(kappa^2 beta_t(x)) with reliability flag and stratum diagnostics."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_kappa(kappa, x.size)
    batch = sample_beta_batch(x, t, n_paths, seed, keys=("exp-moment",), **kw)
    w = np.exp(kappa * kappa * batch.values)
    m, se = mean_and_stderr(w)
    ok, diag = _reliability(w, m, se)
    diag["strata"] = _strata(w, batch.min_distance / np.linalg.norm(x))
    diag["beta_mean"] = float(np.mean(batch.values))
    diag["refinement_events"] = batch.refinement_events
    # E exp(2 kappa^2 beta) is finite only for 2 kappa^2 <= ((d-2)/2)^2
    diag["finite_variance"] = 2 * kappa * kappa <= ((x.size - 2) / 2) ** 2
    return Estimate(m, se, w.size, "fk-mc", seed, batch.stream, ok, diag)


def sample_uniform_ball(rng: np.random.Generator, size: int, d: int, R: float) -> np.ndarray:
    """Uniform points in B_R: Gaussian direction times R U^{1/d}."""
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (R * rng.random(size) ** (1.0 / d))[:, None]


def sample_uniform_ball_pair(R: float, rng_stream: np.random.Generator, d: int = 3):
    if not R > 0:
        raise DomainError("R must be positive")
    pts = sample_uniform_ball(rng_stream, 2, d, R)
    return pts[0], pts[1]


def pair_beta_ensemble(params: ModelParams, n_pairs: int, seed: int, paths_per_pair: int = 1,
                       parallelism: int = 1, keys=("pairs",), **kw):
    """beta_t(x - y) for uniform pairs (x, y) in B_R, fresh paths for every pair.

    Returns (values of shape (n_pairs, paths_per_pair), pair distances,
    minimum distances relative to the starting distance).
    """
    d, R, t = params.d, params.R, params.t
    ppp = int(paths_per_pair)
    pairs_per_chunk = max(1, PATH_CHUNK // ppp)

    def work(rng, size, _):
        x = sample_uniform_ball(rng, size, d, R)
        y = sample_uniform_ball(rng, size, d, R)
        z = np.repeat(x - y, ppp, axis=0)
        vals, _, mind = _simulate_paths(z, np.full(z.shape[0], t), rng, **kw)
        r = np.linalg.norm(x - y, axis=1)
        return vals.reshape(size, ppp), r, mind.reshape(size, ppp) / r[:, None]

    parts = run_chunked(work, n_pairs, seed, keys, chunk=pairs_per_chunk,
                        parallelism=parallelism)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]))


def chaos_variances_fk(orders, params: ModelParams, n_pairs: int, seed: int,
                       paths_per_pair: int = 1, parallelism: int = 1, **kw) -> dict[int, Estimate]:
    """Var of chaos terms for several orders from one pair/path ensemble."""
    orders = sorted(set(int(n) for n in orders))
    if orders[0] < 1:
        raise DomainError("chaos order must be >= 1")
    _check_order(orders[-1])
    keys = ("chaos-fk", f"d{params.d}", f"t{params.t!r}", f"R{params.R!r}")
    vals, _, _ = pair_beta_ensemble(params, n_pairs, seed, paths_per_pair, parallelism,
                                    keys=keys, **kw)
    vol = unit_ball_volume(params.d) * params.R ** params.d
    out = {}
    for n in orders:
        per_pair = np.mean(vals ** n, axis=1)
        m, se = mean_and_stderr(per_pair)
        pref = params.kappa ** (2 * n) / math.factorial(n) * vol * vol
        out[n] = Estimate(pref * m, pref * se, vals.size, "fk-mc", seed, stream_key(*keys))
    return out


def chaos_variance_fk(n: int, params: ModelParams, n_paths: int = 1, n_pairs: int = 100000,
                      seed: int = 0, **kw) -> Estimate:
    """Var I_t^{(n)}(1_{B_R}); ``n_paths`` fresh paths for each of ``n_pairs`` pairs."""
    if not 1 <= n <= MAX_MOMENT_ORDER:
        _check_order(n)
        raise DomainError("chaos order must be >= 1")
    return chaos_variances_fk([n], params, n_pairs, seed, paths_per_pair=n_paths, **kw)[n]


def second_moment_fk(params: ModelParams, n_paths: int = 1, n_pairs: int = 100000,
                     seed: int = 0, parallelism: int = 1, **kw) -> Estimate:
    """E u_t(B_R)^2 = vol^2 E exp(kappa^2 beta_t(x - y)).

    ``diagnostics['excess']`` holds vol^2 E[exp(kappa^2 beta) - 1], the
    variance of u_t(B_R), computed from the same samples without cancellation.
    """
    _check_kappa(params.kappa, params.d)
    keys = ("second-moment-fk", f"d{params.d}", f"t{params.t!r}", f"R{params.R!r}")
    vals, _, rel_min = pair_beta_ensemble(params, n_pairs, seed, n_paths, parallelism,
                                          keys=keys, **kw)
    k2 = params.kappa ** 2
    vol2 = (unit_ball_volume(params.d) * params.R ** params.d) ** 2
    w = np.mean(np.exp(k2 * vals), axis=1)
    ex = np.mean(np.expm1(k2 * vals), axis=1)
    m, se = mean_and_stderr(w)
    me, see = mean_and_stderr(ex)
    ok, diag = _reliability(w, m, se)
    diag["excess"] = Estimate(vol2 * me, vol2 * see, vals.size, "fk-mc", seed, stream_key(*keys))
    diag["strata"] = _strata(w, rel_min.min(axis=1))
    return Estimate(vol2 * m, vol2 * se, vals.size, "fk-mc", seed, stream_key(*keys), ok, diag)


def _pair_integral(fun, params: ModelParams) -> float:
    """vol^2 int_0^{2R} f_R(r) fun(r) dr with f_R the ball distance density."""
    d, R = params.d, params.R
    vol = unit_ball_volume(d) * R ** d
    g = lambda r: float(ball_distance_density(r, d, R)) * fun(r)
    val, _ = integrate.quad(g, 0.0, 2 * R, epsrel=1e-10, limit=200)
    return vol * vol * val


def chaos_variance_closed_form(n: int, params: ModelParams) -> float:
    """Var I_n from the exact moments of beta; an oracle for the Monte Carlo."""
    pref = params.kappa ** (2 * n) / math.factorial(n)
    return pref * _pair_integral(lambda r: bp.beta_moment_exact(n, r, params.t, params.d), params)


def second_moment_closed_form(params: ModelParams) -> float:
    """E u_t(B_R)^2 from the exact exponential moment of beta."""
    lam = params.kappa ** 2
    return _pair_integral(lambda r: bp.exp_moment_exact(lam, r, params.t, params.d), params)
