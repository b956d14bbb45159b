"""Acceptance criteria, one test each, each printing a PASS/FAIL line.

Criteria whose thresholds cannot be met are run in full, print FAIL with
the measured numbers, and are marked strict xfail: if one of them ever
passes, the suite goes red so the marker gets revisited.
"""
import json
import math
import time

import numpy as np
import pytest

from critshe import bessel_process as bp
from critshe import cli
from critshe import feynman_kac as fk
from critshe import fourier_variance as fv
from critshe import lattice
from critshe import regimes
from critshe import simplex_phi as sp
from critshe.params import ModelParams

P = ModelParams(3, 0.4, 1.0, 1.0)
R_SWEEP = [1, 2, 4, 8, 16, 32, 64]


def report(capsys, number, title, passed, detail, seconds):
    line = f"[acceptance {number:>2}] {'PASS' if passed else 'FAIL'} {title}: {detail} ({seconds:.1f} s)"
    with capsys.disabled():
        print("\n" + line)
    return line


def test_criterion_01_sigma_cross_representation(capsys):
    t0 = time.perf_counter()
    ok, parts = True, []
    for d in (3, 4):
        four, mc = fv.sigma_squared(d, 1.0, n_pairs=10 ** 7, seed=1)
        tol = max(0.005 * four, 3 * mc.stderr)
        diff = abs(mc.value - four)
        ok &= diff <= tol
        parts.append(f"d={d} fourier {four:.6f} real-space {mc.value:.4f}+-{mc.stderr:.4f} "
                     f"|diff| {diff:.3g} <= {tol:.3g}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    report(capsys, 1, "sigma^2 Fourier vs real-space MC", ok, "; ".join(parts), dt)
    assert ok


def test_criterion_02_first_chaos_convergence(capsys):
    t0 = time.perf_counter()
    s2 = fv.sigma_squared_fourier(3, 0.4)
    v = [fv.first_chaos_variance_exact(P.with_(R=float(R))) / R ** 4 for R in R_SWEEP]
    inc = all(b > a for a, b in zip(v, v[1:]))
    rel = abs(v[-1] / s2 - 1)
    dt = time.perf_counter() - t0
    ok = inc and rel <= 0.02 and dt < 60
    report(capsys, 2, "Var1/R^4 increasing, within 2% of sigma^2 at R=64", ok,
           f"ratios {[round(x / s2, 4) for x in v]}, final rel diff {rel:.4f}", dt)
    assert ok


@pytest.mark.xfail(strict=True, reason="Var2/R^4 rises from R=1 to R=2 (exact 0.4563 -> 0.5320) "
                   "before decreasing; see the decisions ledger")
def test_criterion_03_higher_chaos_trend(capsys):
    t0 = time.perf_counter()
    rep = regimes.clt_convergence_table(R_SWEEP, P, {"fourier_samples": 3 * 10 ** 6,
                                                     "min_ess": 1e6, "seed": 3})
    dt = time.perf_counter() - t0
    v = rep.verdicts
    ok = (v["var2_decreasing"].passed and v["var2_final_below_5pct"].passed
          and v["var2_min_ess"].passed and dt < 600)
    vals = [round(r.value, 4) for r in rep.series("var2_norm")]
    exact = [round(fv.second_chaos_radial_quadrature(P.with_(R=1.0)), 4),
             round(fv.second_chaos_radial_quadrature(P.with_(R=2.0)) / 16, 4)]
    report(capsys, 3, "Var2/R^4 decreasing, < 5% of sigma^2 at R=64, ESS >= 1e6", ok,
           f"MC {vals}; exact R=1,2: {exact}; decreasing={v['var2_decreasing'].passed}, "
           f"{v['var2_final_below_5pct'].detail}, {v['var2_min_ess'].detail}", dt)
    assert ok


def test_criterion_04_cross_method_equality(capsys):
    t0 = time.perf_counter()
    ests = fk.chaos_variances_fk([1, 2], P, 10 ** 5, seed=4)
    v1_four = fv.first_chaos_variance_exact(P)
    v2_four = fv.nth_chaos_fourier_mc(fv.ChaosVarianceSpec(2, P, mc_samples=3 * 10 ** 6), seed=4)
    z1 = ests[1].z_score(v1_four)
    z2 = ests[2].z_score(v2_four)
    dt = time.perf_counter() - t0
    ok = abs(z1) <= 3 and abs(z2) <= 3 and dt < 600
    report(capsys, 4, "Feynman-Kac vs Fourier, n=1,2", ok,
           f"n=1 FK {ests[1].value:.5f}+-{ests[1].stderr:.5f} vs {v1_four:.5f} (z={z1:.2f}); "
           f"n=2 FK {ests[2].value:.5f}+-{ests[2].stderr:.5f} vs "
           f"{v2_four.value:.5f}+-{v2_four.stderr:.5f} (z={z2:.2f})", dt)
    assert ok


def test_criterion_05_scaling(capsys):
    t0 = time.perf_counter()
    rep = regimes.scaling_check(P, [0.25], {"seed": 5, "fk_pairs": 10 ** 5, "ks_paths": 10 ** 5,
                                            "fourier_samples": 10 ** 6})
    dt = time.perf_counter() - t0
    v = rep.verdicts
    names = ["var1_identity[eps=0.25]", "beta_law_ks[eps=0.25]", "second_moment_collapse"]
    ok = all(v[n].passed for n in names)
    report(capsys, 5, "scaling identity, beta-law KS, second-moment collapse", ok,
           "; ".join(f"{n}: {v[n].detail}" for n in names), dt)
    assert ok


def test_criterion_06_phi_suite(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_z, mc_ok = 0.0, True
    for i in range(20):
        n = int(rng.integers(1, 6))
        rates = list(10 ** rng.uniform(-1, 1, n))
        e = sp.phi_mc_oracle(rates, 10 ** 7, seed=i)
        z = e.z_score(sp.phi(rates))
        worst_z = max(worst_z, abs(z))
        mc_ok &= abs(z) <= 3
    violations = 0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        rates = list(10 ** rng.uniform(-3, 3, n))
        v = sp.phi(rates)
        if not (0 < v <= 1 / math.factorial(n)):
            violations += 1
        for k in range(1, n):
            if v > sp.phi_chain_bound(rates, k) * (1 + 1e-12):
                violations += 1
    dt = time.perf_counter() - t0
    ok = mc_ok and violations == 0 and dt < 120
    report(capsys, 6, "phi closed form vs simplex MC, bound suite", ok,
           f"20 vectors, max |z| {worst_z:.2f}; 200 vectors, {violations} bound violations", dt)
    assert ok


def test_criterion_07_proof_constants(capsys):
    t0 = time.perf_counter()
    ok = True
    for d in range(3, 13):
        g = (d - 2) / 2
        c = fv.proof_constants(d, 0.5 * g)
        ok &= abs(2 * c.m0 + 2 - c.gamma0 - g) < 1e-14
        ok &= fv.proof_constants(d, g * (1 - 1e-12)).summable
        ok &= not fv.proof_constants(d, g).summable
    dt = time.perf_counter() - t0
    report(capsys, 7, "m0/gamma0 recipe and summability flip", ok,
           "d = 3..12: 2 m0 + 2 - gamma0 = (d-2)/2, summable below and not at (d-2)/2", dt)
    assert ok


@pytest.mark.xfail(strict=True, reason="the exact growth exponent in tau is alpha/2, not alpha; "
                   "see the decisions ledger")
def test_criterion_08_extinction_exponent(capsys):
    t0 = time.perf_counter()
    rep = regimes.extinction_profile([1e2, 3e2, 1e3, 3e3, 1e4], 0.4, 3,
                                     {"exp_paths": 10 ** 5, "seed": 8}, fit_from=1e2)
    dt = time.perf_counter() - t0
    slope = rep.get("fitted_slope").value
    se = rep.get("fitted_slope_stderr").value
    exact = rep.get("exact_slope").value
    ok = rep.verdicts["slope_within_15pct_of_alpha"].passed and dt < 900
    report(capsys, 8, "fitted exponent within [0.85, 1.15] alpha", ok,
           f"MC slope {slope:.4f}+-{se:.4f}, exact-closed-form slope {exact:.4f}, "
           f"alpha {bp.growth_exponent(3, 0.4):.4f}, band [0.17, 0.23]", dt)
    assert ok


@pytest.mark.xfail(strict=True, reason="N=128 with 200 replicas projects to ~76 h on one CPU "
                   "against a 30 min budget; see the decisions ledger")
def test_criterion_09_lattice_trichotomy(capsys):
    t0 = time.perf_counter()
    cfg = lattice.LatticeConfig()  # N = 128, h = 1, dt = h^2/12, kappa = 0.4
    clt = lattice.regime_ensemble("clt", 200, cfg, rng_seed=9)
    clt_ok = (clt.verdicts["skewness_within_0.3"].passed
              and clt.verdicts["mean_preserved_3sigma"].passed)
    per_step = lattice.seconds_per_step(cfg)
    rest = sum(lattice.RegimeProtocol.default(r, cfg).steps(cfg.time_step)
               for r in ("fixed-point", "extinction"))
    projected = per_step * rest * 200
    dt = time.perf_counter() - t0
    ok = clt_ok and dt + projected < 1800
    report(capsys, 9, "lattice trichotomy at N=128, 200 replicas", ok,
           f"clt run: skewness {clt.get('skewness').value:.3f}, mean "
           f"{clt.get('mean').value:.4f}+-{clt.get('mean').stderr:.4f} "
           f"({'ok' if clt_ok else 'failed'}); fixed-point and extinction not run: "
           f"{per_step:.3f} s/step x {rest} steps x 200 replicas = {projected / 3600:.1f} h "
           f"projected", dt)
    assert ok


def test_criterion_10_determinism(tmp_path, capsys):
    """Every subcommand replayed from its manifest at a different parallelism degree."""
    t0 = time.perf_counter()
    runs = {
        "sigma": ["sigma", "--n-pairs", "1e6"],
        "chaos-var": ["chaos-var", "--n", "2", "--pairs", "20000", "--samples", "3e5"],
        "phi": ["phi", "--rates", "0.5,1,3", "--mc-samples", "1e6"],
        "fk-moments": ["fk-moments", "--paths", "20000", "--n-max", "3"],
        "scaling-check": ["scaling-check", "--fk-pairs", "5000", "--ks-paths", "5000",
                          "--fourier-samples", "2e5"],
        "clt-table": ["clt-table", "--R-list", "1,4", "--fourier-samples", "2e5",
                      "--min-ess", "1e3"],
        "extinction": ["extinction", "--tau-list", "10,100,1000", "--fit-from", "10",
                       "--paths", "5000"],
        "lattice": ["lattice", "--N", "16", "--replicas", "100", "--ball-R", "4", "--dump"],
        "constants": ["constants"],
    }
    bad = []
    for name, argv in runs.items():
        out = tmp_path / name
        code = cli.main(argv + ["--seed", "10", "--parallelism", "1", "--format", "json",
                                "--output-dir", str(out)])
        capsys.readouterr()
        if code not in (cli.EXIT_OK, cli.EXIT_VERDICT, cli.EXIT_UNRELIABLE):
            bad.append(f"{name}: exit {code}")
            continue
        rcode = cli.main(["--replay", str(out / "manifest.json"), "--replay-parallelism", "3"])
        text = capsys.readouterr().out
        man = json.loads((out / "manifest.json").read_text())
        if "all outputs identical" not in text or rcode != code:
            bad.append(f"{name}: replay differs")
        for f in man["outputs"]:
            if (out / f).read_bytes() != (out / "replay" / f).read_bytes():
                bad.append(f"{name}: {f} differs")
    dt = time.perf_counter() - t0
    ok = not bad
    report(capsys, 10, "bit-for-bit replay at parallelism 1 vs 3", ok,
           f"{len(runs)} subcommands replayed from manifest seed" + (f"; {bad}" if bad else ""),
           dt)
    assert ok
