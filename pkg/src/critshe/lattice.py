"""Periodic-lattice simulation of the stochastic heat equation with Riesz noise.

    du = (1/2) Delta_h u dt + kappa u dW,   u(0) = 1,

on an N^3 torus of spacing h. The noise has spatial covariance close to
|x - y|^{-2}, synthesised spectrally: white noise is filtered by
sqrt((2 pi)^d c_d / h^d) |xi|^{(2-d)/2} with the zero mode removed, which
makes the lattice covariance the torus Fourier series of the continuum
spectral density truncated to the Brillouin zone.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import DomainError, SimulationBlowUpError
from .kernels import riesz_spectral_constant, unit_ball_volume
from .report import RegimeReport
from .streams import run_chunked

BLOW_UP = 1e12
DIM = 3


@dataclass
class LatticeField:
    grid: np.ndarray
    spacing: float = 1.0
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.shape[0]
        if self.grid.ndim != DIM or any(s != n for s in self.grid.shape):
            raise DomainError("lattice fields are cubic N^3 arrays")
        if n & (n - 1):
            raise DomainError(f"N must be a power of two, got {n}")
        if not self.spacing > 0:
            raise DomainError("spacing must be positive")

    @property
    def N(self) -> int:
        return self.grid.shape[0]

    @property
    def extent(self) -> float:
        return self.N * self.spacing

    @classmethod
    def flat(cls, N: int, spacing: float = 1.0) -> "LatticeField":
        return cls(np.ones((N, N, N)), spacing, 0.0)


@dataclass
class NoiseSpectrum:
    multiplier: np.ndarray  # rfftn layout, shape (N, N, N//2 + 1)
    N: int
    spacing: float

    @classmethod
    def riesz(cls, N: int, spacing: float = 1.0) -> "NoiseSpectrum":
        k = 2 * np.pi * np.fft.fftfreq(N, d=spacing)
        kr = 2 * np.pi * np.fft.rfftfreq(N, d=spacing)
        kx, ky, kz = np.meshgrid(k, k, kr, indexing="ij")
        knorm = np.sqrt(kx ** 2 + ky ** 2 + kz ** 2)
        amp = math.sqrt((2 * np.pi) ** DIM * riesz_spectral_constant(DIM) / spacing ** DIM)
        mult = np.zeros_like(knorm)
        nz = knorm > 0
        mult[nz] = amp * knorm[nz] ** ((2 - DIM) / 2)
        return cls(mult, N, spacing)

    def covariance(self) -> np.ndarray:
        """Exact lattice covariance C(x) of one unit-time noise slice."""
        return np.fft.irfftn(self.multiplier ** 2, s=(self.N,) * DIM, axes=(0, 1, 2))

    def point_variance(self) -> float:
        return float(self.covariance()[0, 0, 0])


def generate_riesz_noise(spectrum: NoiseSpectrum, dt: float, rng_stream: np.random.Generator) -> np.ndarray:
    """One time slice of the noise increment, covariance dt * C(x - y)."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    N = spectrum.N
    white = rng_stream.standard_normal((N, N, N))
    spec = np.fft.rfftn(white) * spectrum.multiplier
    return math.sqrt(dt) * np.fft.irfftn(spec, s=(N,) * DIM, axes=(0, 1, 2))


def laplacian(u: np.ndarray, h: float) -> np.ndarray:
    out = -2.0 * DIM * u
    for ax in range(DIM):
        out += np.roll(u, 1, ax) + np.roll(u, -1, ax)
    return out / (h * h)


@dataclass(frozen=True)
class LatticeConfig:
    N: int = 128
    spacing: float = 1.0
    dt: float | None = None
    kappa: float = 0.4
    scheme: str = "exponential"

    def __post_init__(self):
        if self.scheme not in ("ito", "exponential"):
            raise DomainError("scheme must be 'ito' or 'exponential'")
        if not (0 <= self.kappa < (DIM - 2) / 2):
            raise DomainError(
                f"kappa={self.kappa} violates the model constraint 0 <= kappa < (d-2)/2 = 0.5")
        if self.time_step > self.spacing ** 2 / (2 * DIM):
            raise DomainError("dt must not exceed h^2/(2d) for the explicit heat step")

    @property
    def time_step(self) -> float:
        return self.spacing ** 2 / 12 if self.dt is None else float(self.dt)


def evolve_she(initial: LatticeField, config: LatticeConfig, T: float,
               rng_stream: np.random.Generator, record_times=None,
               spectrum: NoiseSpectrum | None = None) -> list[LatticeField]:
    """Integrate to time T, returning snapshots at ``record_times`` (default: T only).

    The Ito scheme is Euler-Maruyama. The exponential scheme multiplies the
    heat step by exp(kappa dW - kappa^2 C(0) dt / 2), which has mean one and
    keeps the field positive.
    """
    dt = config.time_step
    h = initial.spacing
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise DomainError("T must be a positive multiple of dt")
    rec_steps = sorted({int(round(r / dt)) for r in (record_times or [T])})
    if rec_steps and rec_steps[-1] > n_steps:
        raise DomainError("record times must not exceed T")
    spec = spectrum or NoiseSpectrum.riesz(initial.N, h)
    var0 = spec.point_variance()
    k = config.kappa
    u = initial.grid.astype(float, copy=True)
    out = []
    ri = 0
    for step in range(1, n_steps + 1):
        heat = u + 0.5 * dt * laplacian(u, h)
        if k == 0:
            u = heat
        else:
            dw = generate_riesz_noise(spec, dt, rng_stream)
            if config.scheme == "ito":
                u = heat + k * u * dw
            else:
                u = heat * np.exp(k * dw - 0.5 * k * k * var0 * dt)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > BLOW_UP:
            raise SimulationBlowUpError(f"lattice field blew up at step {step}", step)
        while ri < len(rec_steps) and rec_steps[ri] == step:
            out.append(LatticeField(u.copy(), h, initial.time + step * dt))
            ri += 1
    return out


def ball_mask(N: int, h: float, R: float) -> np.ndarray:
    """Cells whose centres lie within R of the lattice point at index 0."""
    L = N * h
    if not (2 * h <= R <= L / 4):
        raise DomainError(f"ball radius must satisfy 2h <= R <= L/4, got R={R}, h={h}, L={L}")
    c = np.arange(N) * h
    c = np.minimum(c, L - c)
    d2 = c[:, None, None] ** 2 + c[None, :, None] ** 2 + c[None, None, :] ** 2
    return d2 <= R * R


def ball_average(field: LatticeField, R: float, normalise: str = "mass") -> float:
    """Mass of the field in the ball of radius R (``normalise='volume'`` divides by omega_3 R^3)."""
    mask = ball_mask(field.N, field.spacing, R)
    mass = float(field.grid[mask].sum()) * field.spacing ** DIM
    if normalise == "mass":
        return mass
    if normalise == "volume":
        return mass / (unit_ball_volume(DIM) * R ** DIM)
    raise DomainError("normalise must be 'mass' or 'volume'")


REGIME_TAGS = ("clt", "fixed-point", "extinction")


@dataclass(frozen=True)
class RegimeProtocol:
    """Ball radius and observation times (in units of h and h^2) for one regime."""

    R: float
    times: tuple

    @staticmethod
    def default(regime: str, config: LatticeConfig) -> "RegimeProtocol":
        h = config.spacing
        dt = config.time_step
        if regime == "clt":
            return RegimeProtocol(16 * h, (4 * dt,))
        if regime == "fixed-point":
            return RegimeProtocol(16 * h, ((16 * h) ** 2,))
        if regime == "extinction":
            R = 4 * h
            return RegimeProtocol(R, (R * R, 4 * R * R, 16 * R * R))
        raise DomainError(f"unknown regime {regime!r}")

    def steps(self, dt: float) -> int:
        return int(round(max(self.times) / dt))


def _bootstrap_skew_se(x: np.ndarray, rng: np.random.Generator, n_boot: int = 400) -> float:
    idx = rng.integers(0, x.size, (n_boot, x.size))
    return float(np.std(stats.skew(x[idx], axis=1), ddof=1))


def regime_ensemble(regime: str, replicas: int, config: LatticeConfig = LatticeConfig(),
                    rng_seed: int = 0, protocol: RegimeProtocol | None = None,
                    parallelism: int = 1, dump_path=None) -> RegimeReport:
    """Ensemble of lattice runs with the regime's qualitative statistics."""
    if regime not in REGIME_TAGS:
        raise DomainError(f"regime must be one of {REGIME_TAGS}")
    if replicas < 100:
        raise DomainError("regime statistics need at least 100 replicas")
    proto = protocol or RegimeProtocol.default(regime, config)
    dt = config.time_step
    h = config.spacing
    spec = NoiseSpectrum.riesz(config.N, h)
    vol = unit_ball_volume(DIM) * proto.R ** DIM
    times = sorted(proto.times)
    def work(rng, _size, _idx):
        snaps = evolve_she(LatticeField.flat(config.N, h), config, times[-1], rng,
                           record_times=times, spectrum=spec)
        avgs = [ball_average(s, proto.R, "volume") for s in snaps]
        positive = all(bool(np.all(s.grid > 0)) for s in snaps)
        return avgs, positive

    res = run_chunked(work, replicas, rng_seed, ("lattice", regime, config.N), chunk=1,
                      parallelism=parallelism)
    avgs = np.array([r[0] for r in res])  # (replicas, len(times)), normalised by ball volume
    positive = all(r[1] for r in res)
    flat_norm = ball_average(LatticeField.flat(config.N, h), proto.R, "volume")
    avgs = avgs / flat_norm  # remove the lattice volume-quantisation factor

    rep = RegimeReport(regime, meta={"N": config.N, "h": h, "dt": dt, "kappa": config.kappa,
                                     "scheme": config.scheme, "R": proto.R, "times": times,
                                     "replicas": replicas, "seed": rng_seed,
                                     "ball_volume": vol, "quantised_volume_ratio": flat_norm})
    seed_tag = f"{rng_seed}:lattice/{regime}/{config.N}"
    boot = np.random.default_rng(rng_seed)
    worst_mean = math.inf
    medians, skews = [], []
    for j, T in enumerate(times):
        a = avgs[:, j]
        n = a.size
        mean, se = float(a.mean()), float(a.std(ddof=1) / math.sqrt(n))
        sk = float(stats.skew(a))
        sk_se = _bootstrap_skew_se(a, boot)
        med = float(np.median(a))
        rep.add("mean", mean, T, "T", method="lattice", seed=seed_tag).stderr = se
        rep.add("variance", float(a.var(ddof=1)), T, "T", method="lattice", seed=seed_tag)
        rep.add("skewness", sk, T, "T", method="lattice", seed=seed_tag).stderr = sk_se
        rep.add("median", med, T, "T", method="lattice", seed=seed_tag)
        for r in rep.rows[-4:]:
            r.n_samples = n
        z = abs(mean - 1.0) / se if se > 0 else 0.0
        worst_mean = min(worst_mean, 3 - z)
        medians.append(med)
        skews.append(sk)
    rep.verdict("mean_preserved_3sigma", worst_mean >= 0, worst_mean)
    if regime == "clt":
        s = abs(skews[-1])
        rep.verdict("skewness_within_0.3", s < 0.3, 0.3 - s, f"skewness {skews[-1]:.3g}")
    elif regime == "fixed-point":
        s = skews[-1]
        var = float(avgs[:, -1].var(ddof=1))
        rep.verdict("skewness_above_0.3", s > 0.3, s - 0.3, f"skewness {s:.3g}")
        rep.verdict("variance_positive", var > 0, var)
        rep.verdict("all_positive", positive and bool(np.all(avgs > 0)), 0.0)
    else:
        diffs = -np.diff(medians)
        rep.verdict("median_strictly_decreasing", bool(np.all(diffs > 0)), float(np.min(diffs)),
                    f"medians {[round(m, 4) for m in medians]}")
        rep.verdict("median_below_half", medians[-1] < 0.5, 0.5 - medians[-1],
                    f"final median {medians[-1]:.3g}")
    if dump_path is not None:
        with open(dump_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "T", "R", "average"])
            for i in range(avgs.shape[0]):
                for j, T in enumerate(times):
                    w.writerow([i, repr(T), repr(proto.R), repr(float(avgs[i, j]))])
    return rep


def seconds_per_step(config: LatticeConfig, n_steps: int = 5, seed: int = 0) -> float:
    """Measured wall time of one evolution step at the configured size."""
    rng = np.random.default_rng(seed)
    spec = NoiseSpectrum.riesz(config.N, config.spacing)
    f = LatticeField.flat(config.N, config.spacing)
    evolve_she(f, config, config.time_step, rng, spectrum=spec)  # warm-up
    t0 = time.perf_counter()
    evolve_she(f, config, n_steps * config.time_step, rng, spectrum=spec)
    return (time.perf_counter() - t0) / n_steps


def projected_runtime(config: LatticeConfig, replicas: int, regimes=REGIME_TAGS,
                      parallelism: int = 1) -> float:
    """Projected wall time in seconds of running ``regimes`` with ``replicas`` each."""
    per_step = seconds_per_step(config)
    steps = sum(RegimeProtocol.default(r, config).steps(config.time_step) for r in regimes)
    return per_step * steps * replicas / max(1, parallelism)
