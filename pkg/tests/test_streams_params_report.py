import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critshe import streams
from critshe.errors import DomainError
from critshe.params import Estimate, ModelParams, QuadratureSpec, critical_kappa
from critshe.report import CSV_COLUMNS, RegimeReport


def test_streams_reproducible_and_distinct():
    a = streams.rng_stream(5, "x", 1).random(8)
    b = streams.rng_stream(5, "x", 1).random(8)
    c = streams.rng_stream(5, "x", 2).random(8)
    d = streams.rng_stream(6, "x", 1).random(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_disjoint_streams_uncorrelated():
    a = streams.rng_stream(0, "k", 0).standard_normal(200000)
    b = streams.rng_stream(0, "k", 1).standard_normal(200000)
    assert abs(np.mean(a * b)) < 3 / math.sqrt(a.size)


@given(st.integers(1, 10000), st.integers(1, 3000))
def test_chunk_sizes_partition(n, c):
    sizes = streams.chunk_sizes(n, c)
    assert sum(sizes) == n and all(0 < s <= c for s in sizes)


def test_run_chunked_order_independent_of_parallelism():
    def work(rng, size, idx):
        return (idx, rng.random(size))
    a = streams.run_chunked(work, 10000, 3, ("t",), chunk=512, parallelism=1)
    b = streams.run_chunked(work, 10000, 3, ("t",), chunk=512, parallelism=4)
    assert [i for i, _ in a] == list(range(len(a)))
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))


@given(st.lists(st.floats(-1e6, 1e6), max_size=50))
def test_tree_sum(values):
    assert streams.tree_sum(values) == pytest.approx(math.fsum(values), abs=1e-6)


def test_jackknife_matches_iid_stderr():
    x = np.random.default_rng(1).standard_normal(100000)
    _, se = streams.mean_and_stderr(x)
    assert streams.jackknife_stderr(x) == pytest.approx(se, rel=0.2)


def test_model_params_validation():
    assert critical_kappa(3) == 0.5
    ModelParams(3, 0.49, 1.0, 1.0)
    for bad in [dict(d=2), dict(kappa=0.5), dict(kappa=0.0), dict(t=0.0), dict(R=-1.0),
                dict(d=3.5)]:
        with pytest.raises(DomainError) as info:
            ModelParams(**{"d": 3, "kappa": 0.4, **bad})
        if "kappa" in bad:
            assert "(d-2)/2" in str(info.value)
    assert ModelParams().with_(R=2.0).R == 2.0
    with pytest.raises(DomainError):
        QuadratureSpec(rel_tol=0.0)


def test_estimate_helpers():
    a = Estimate(1.0, 0.1, 100, "fk-mc", seed=3, stream="s")
    b = Estimate(1.2, 0.1, 100, "fourier-mc")
    assert a.z_score(b) == pytest.approx(-0.2 / math.hypot(0.1, 0.1))
    assert a.agrees_with(b)
    assert a.scaled(-2.0).stderr == 0.2
    assert a.as_row("v")["seed"] == "3:s"
    with pytest.raises(DomainError):
        Estimate(1.0, -1.0, 1, "fk-mc")
    with pytest.raises(DomainError):
        Estimate(1.0, 0.0, 1, "made-up")


def test_report_csv_json_roundtrip(tmp_path):
    rep = RegimeReport("clt", meta={"d": 3})
    rep.add("var", Estimate(2.0, 0.1, 10, "fk-mc", seed=1, stream="k"), 4.0, "R")
    rep.add("exact", 2.05, 4.0, "R")
    rep.verdict("ok", True, 0.5, "fine")
    rep.verdict("bad", False, -0.1)
    assert not rep.passed
    p = tmp_path / "r.csv"
    rep.write_csv(p)
    rows = list(csv.DictReader(open(p)))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert rows[0]["name"] == "var[R=4]" and float(rows[0]["value"]) == 2.0
    assert rows[-1]["name"] == "verdict:bad" and rows[-1]["method"] == "verdict"
    j = tmp_path / "r.json"
    rep.write_json(j)
    data = json.loads(j.read_text())
    assert data["schema"] == "critshe-results/1" and data["verdicts"]["ok"]["passed"]
    assert rep.get("exact").value == 2.05 and len(rep.series("var")) == 1
