import math

import numpy as np
import pytest

from critshe import lattice as L
from critshe.errors import DomainError, SimulationBlowUpError
from critshe.kernels import unit_ball_volume


def test_spectrum_zero_mode_and_symmetry():
    sp = L.NoiseSpectrum.riesz(16)
    assert sp.multiplier[0, 0, 0] == 0.0
    m = sp.multiplier[:, :, 0]
    neg = np.roll(m[::-1, ::-1], 1, axis=(0, 1))  # index -k mod N
    assert np.array_equal(m, neg)


def test_noise_mean_zero_and_covariance():
    N = 32
    sp = L.NoiseSpectrum.riesz(N)
    target = sp.covariance()
    rng = np.random.default_rng(0)
    lags = range(2, N // 8 + 1)
    acc = np.zeros(len(lags))
    n = 10 ** 4
    for _ in range(n):
        f = L.generate_riesz_noise(sp, 1.0, rng)
        assert abs(f.mean()) < 1e-12
        for i, r in enumerate(lags):
            acc[i] += sum(np.mean(f * np.roll(f, r, ax)) for ax in range(3)) / 3
    emp = acc / n
    want = np.array([target[r, 0, 0] for r in lags])
    assert np.all(np.abs(emp / want - 1) < 0.10)


def test_noise_scales_with_dt_and_independent_streams():
    sp = L.NoiseSpectrum.riesz(16)
    a = L.generate_riesz_noise(sp, 0.25, np.random.default_rng(1))
    b = L.generate_riesz_noise(sp, 1.0, np.random.default_rng(1))
    assert np.allclose(2 * a, b)
    from critshe.streams import rng_stream
    x = np.stack([L.generate_riesz_noise(sp, 1.0, rng_stream(0, "a", i)) for i in range(200)])
    y = np.stack([L.generate_riesz_noise(sp, 1.0, rng_stream(0, "b", i)) for i in range(200)])
    prod = (x * y).mean(axis=(1, 2, 3))
    assert abs(prod.mean()) < 3 * prod.std(ddof=1) / math.sqrt(prod.size)
    with pytest.raises(DomainError):
        L.generate_riesz_noise(sp, 0.0, np.random.default_rng(0))


def test_field_validation():
    with pytest.raises(DomainError):
        L.LatticeField(np.ones((12, 12, 12)))
    with pytest.raises(DomainError):
        L.LatticeField(np.ones((8, 8, 4)))
    f = L.LatticeField.flat(8, 0.5)
    assert f.extent == 4.0


def test_config_validation():
    with pytest.raises(DomainError):
        L.LatticeConfig(N=16, kappa=0.5)
    with pytest.raises(DomainError):
        L.LatticeConfig(N=16, dt=0.2)  # above h^2 / (2d)
    with pytest.raises(DomainError):
        L.LatticeConfig(N=16, scheme="rk4")


def test_zero_coupling_keeps_flat_field():
    cfg = L.LatticeConfig(N=16, kappa=0.0)
    out = L.evolve_she(L.LatticeField.flat(16), cfg, 1.0, np.random.default_rng(0))
    assert np.array_equal(out[-1].grid, np.ones((16, 16, 16)))
    assert out[-1].time == pytest.approx(1.0)


@pytest.mark.parametrize("scheme", ["ito", "exponential"])
def test_mean_preserved_over_replicas(scheme):
    cfg = L.LatticeConfig(N=16, kappa=0.4, scheme=scheme)
    sp = L.NoiseSpectrum.riesz(16)
    means = []
    for i in range(200):
        out = L.evolve_she(L.LatticeField.flat(16), cfg, 1.0, np.random.default_rng(i), spectrum=sp)
        means.append(out[-1].grid.mean())
        if scheme == "exponential":
            assert np.all(out[-1].grid > 0)
    means = np.array(means)
    assert abs(means.mean() - 1) < 3 * means.std(ddof=1) / math.sqrt(means.size)


def test_record_times_and_blow_up():
    cfg = L.LatticeConfig(N=16, kappa=0.4)
    dt = cfg.time_step
    out = L.evolve_she(L.LatticeField.flat(16), cfg, 12 * dt, np.random.default_rng(0),
                       record_times=[4 * dt, 12 * dt])
    assert [round(f.time / dt) for f in out] == [4, 12]
    big = L.LatticeField(np.full((16, 16, 16), 2e12))
    with pytest.raises(SimulationBlowUpError) as info:
        L.evolve_she(big, cfg, 4 * dt, np.random.default_rng(0))
    assert info.value.step == 1
    with pytest.raises(DomainError):
        L.evolve_she(L.LatticeField.flat(16), cfg, 0.5 * dt, np.random.default_rng(0))


def test_ball_variance_grows_with_kappa():
    variances = []
    for k in (0.2, 0.4):
        cfg = L.LatticeConfig(N=16, kappa=k)
        vals = [L.ball_average(L.evolve_she(L.LatticeField.flat(16), cfg, 2.0,
                                            np.random.default_rng(i))[-1], 3.0)
                for i in range(100)]
        variances.append(np.var(vals, ddof=1))
    assert variances[1] > variances[0]


def test_ball_average_flat_and_direct_sum():
    f = L.LatticeField.flat(32, 1.0)
    for R in (4.0, 6.0, 8.0):
        rel = abs(L.ball_average(f, R) / (unit_ball_volume(3) * R ** 3) - 1)
        assert rel < 3 / R
    g = L.LatticeField(np.random.default_rng(0).random((32, 32, 32)) + 0.5, 0.5)
    R = g.extent / 4
    direct = 0.0
    for i in range(32):
        for j in range(32):
            for k in range(32):
                dx = [min(a, 32 - a) * 0.5 for a in (i, j, k)]
                if dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2 <= R * R:
                    direct += g.grid[i, j, k] * 0.125
    assert L.ball_average(g, R) == pytest.approx(direct, rel=1e-13)
    g2 = L.LatticeField(2 * g.grid, 0.5)
    assert L.ball_average(g2, R) == pytest.approx(2 * L.ball_average(g, R), rel=1e-14)
    with pytest.raises(DomainError):
        L.ball_average(g, 0.5)
    with pytest.raises(DomainError):
        L.ball_average(g, R * 1.01)


def test_regime_ensemble_contract(tmp_path):
    cfg = L.LatticeConfig(N=16, kappa=0.4)
    with pytest.raises(DomainError):
        L.regime_ensemble("clt", 50, cfg)
    with pytest.raises(DomainError):
        L.regime_ensemble("other", 100, cfg)
    proto = L.RegimeProtocol(4.0, (4 * cfg.time_step,))
    dump = tmp_path / "raw.csv"
    a = L.regime_ensemble("clt", 100, cfg, 3, proto, 1, dump)
    b = L.regime_ensemble("clt", 100, cfg, 3, proto, 2)
    assert a.csv_records() == b.csv_records()
    assert a.verdicts["skewness_within_0.3"].passed
    assert a.verdicts["mean_preserved_3sigma"].passed
    lines = dump.read_text().splitlines()
    assert lines[0] == "replica,T,R,average" and len(lines) == 101


def test_skewness_insensitive_to_time_step():
    # halving dt changes the fixed-point skewness by less than 3 combined bootstrap stderrs
    proto = L.RegimeProtocol(2.0, (4.0,))
    res = []
    for dt in (1 / 12, 1 / 24):
        cfg = L.LatticeConfig(N=16, kappa=0.4, dt=dt)
        r = L.regime_ensemble("fixed-point", 200, cfg, 1, proto)
        res.append(r.get("skewness"))
    diff = abs(res[0].value - res[1].value)
    assert diff < 3 * math.hypot(res[0].stderr, res[1].stderr)


def test_reduced_scale_trichotomy():
    """N = 32, 100 replicas: the qualitative signatures at a size that runs in minutes."""
    cfg = L.LatticeConfig(N=32, kappa=0.4)
    clt = L.regime_ensemble("clt", 100, cfg, 0, L.RegimeProtocol(4.0, (4 * cfg.time_step,)))
    fixed = L.regime_ensemble("fixed-point", 100, cfg, 0, L.RegimeProtocol(4.0, (16.0,)))
    ext = L.regime_ensemble("extinction", 100, cfg, 0, L.RegimeProtocol(2.0, (4.0, 16.0, 64.0)))
    assert clt.verdicts["skewness_within_0.3"].passed
    assert fixed.verdicts["skewness_above_0.3"].passed
    assert fixed.verdicts["variance_positive"].passed and fixed.verdicts["all_positive"].passed
    assert ext.verdicts["median_strictly_decreasing"].passed
    for rep in (clt, fixed, ext):
        assert rep.verdicts["mean_preserved_3sigma"].passed
