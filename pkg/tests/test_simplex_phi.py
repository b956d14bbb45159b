import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critshe import simplex_phi as sp
from critshe.errors import DomainError

log_rates = st.lists(st.floats(-3, 3), min_size=1, max_size=6).map(lambda v: [10 ** x for x in v])


def phi_mpmath(rates):
    """Divided difference of exp at 0, -a_1, ..., -a_n in 60-digit arithmetic (distinct rates)."""
    with mp.workdps(60):
        z = [mp.mpf(0)] + [-mp.mpf(x) for x in rates]
        n = len(z)
        table = [mp.e ** zi for zi in z]
        for L in range(1, n):
            table = [(table[i + 1] - table[i]) / (z[i + L] - z[i]) for i in range(n - L)]
        return float(table[0])


def test_examples():
    assert sp.phi([0.0, 0.0, 0.0]) == pytest.approx(1 / 6, rel=1e-14)
    assert sp.phi([1.0]) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert sp.phi([1.0, 2.0]) == pytest.approx((1 - 2 * math.exp(-1) + math.exp(-2)) / 2, rel=1e-14)
    assert (1 - 2 * math.exp(-1) + math.exp(-2)) / 2 == pytest.approx(0.199788, abs=1e-6)


def test_chain_bound_examples():
    b = sp.phi_chain_bound([1.0, 1.0], 1)
    assert b == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert sp.phi([1.0, 1.0]) <= b
    assert sp.phi_chain_bound([4.0, 9.0, 1.0], 2) == pytest.approx((1 - math.exp(-1)) / 36, rel=1e-14)


def test_rejects_bad_rates():
    with pytest.raises(DomainError):
        sp.phi([])
    with pytest.raises(DomainError):
        sp.phi([1.0, -1.0])
    with pytest.raises(DomainError):
        sp.phi([1.0, math.inf])
    with pytest.raises(DomainError):
        sp.phi_chain_bound([1.0, 2.0], 2)


@given(log_rates)
def test_bounds(rates):
    v = sp.phi(rates)
    n = len(rates)
    assert 0 < v <= 1 / math.factorial(n)
    for k in range(1, n):
        assert v <= sp.phi_chain_bound(rates, k) * (1 + 1e-12)


@given(log_rates, st.integers(0, 5), st.floats(1.001, 10))
def test_non_increasing_in_each_rate(rates, i, factor):
    i = i % len(rates)
    bumped = list(rates)
    bumped[i] *= factor
    assert sp.phi(bumped) <= sp.phi(rates) * (1 + 1e-12)


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=5))
def test_closed_form_and_generator_agree(logs):
    rates = sorted(10 ** x for x in logs)
    gaps = [(b - a) / b for a, b in zip(rates, rates[1:])]
    if min(gaps) <= 1e-3:
        return
    a, b = sp.phi_closed_form(rates), sp.phi_generator(rates)
    assert a == pytest.approx(b, rel=1e-9)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=5))
def test_phi_matches_high_precision(logs):
    rates = sorted(set(round(10 ** x, 6) for x in logs))
    if len(rates) > 1 and min((b - a) / b for a, b in zip(rates, rates[1:])) < 1e-3:
        return
    assert sp.phi(rates) == pytest.approx(phi_mpmath(rates), rel=1e-9)


def test_repeated_and_zero_rates():
    # phi(a, a) = (1 - e^{-a}(1 + a)) / a^2
    a = 1.7
    assert sp.phi([a, a]) == pytest.approx((1 - math.exp(-a) * (1 + a)) / a ** 2, rel=1e-12)
    # phi(0, a) = (a - 1 + e^{-a}) / a^2
    assert sp.phi([0.0, a]) == pytest.approx((a - 1 + math.exp(-a)) / a ** 2, rel=1e-12)


def test_batch_matches_scalar():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3, 4):
        rates = 10 ** rng.uniform(-3, 3, (200, n))
        rates[::7, 0] = rates[::7, -1] * (1 + 1e-9)  # near-collisions
        got = sp.phi_batch(rates)
        ref = np.array([sp.phi(r) for r in rates])
        assert np.allclose(got, ref, rtol=1e-9, atol=0)


def test_r_scaling_limit():
    rates = np.array([0.3, 1.2, 2.5])
    n = rates.size
    vals = [R ** (2 - 2 * n) * sp.phi(rates / R ** 2) for R in 2.0 ** np.arange(9)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_mc_oracle():
    e = sp.phi_mc_oracle([0.0, 0.0], 10 ** 6, seed=1)
    assert abs(e.value - 0.5) < 3 * e.stderr + 1e-15
    e = sp.phi_mc_oracle([1.0, 2.0], 2 * 10 ** 6, seed=2)
    assert e.agrees_with(sp.phi([1.0, 2.0]))
    e = sp.phi_mc_oracle([1.0, 1.0, 1.0], 2 * 10 ** 6, seed=3)
    assert e.agrees_with(sp.phi_generator([1.0, 1.0, 1.0]))
    assert e.method == "simplex-mc"


def test_mc_oracle_deterministic_across_parallelism():
    a = sp.phi_mc_oracle([0.5, 2.0, 3.0], 600000, seed=9, parallelism=1)
    b = sp.phi_mc_oracle([0.5, 2.0, 3.0], 600000, seed=9, parallelism=2)
    assert a.value == b.value and a.stderr == b.stderr


def test_sample_simplex_uniform():
    rng = np.random.default_rng(0)
    w = sp.sample_simplex(rng, 10 ** 5, 3)
    assert np.all(w >= 0) and np.all(w.sum(axis=1) <= 1)
    # E w_i = 1/(n+1) for the uniform simplex
    assert np.allclose(w.mean(axis=0), 0.25, atol=0.005)
