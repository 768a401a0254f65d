import math

import numpy as np
import pytest
from scipy import special, stats

from oipharness.stats.distributions import (
    betainc,
    betaincc,
    f_cdf,
    f_sf,
    normal_range_cdf,
    studentized_range_cdf,
    studentized_range_ppf,
    t_cdf,
    t_sf,
    t_two_sided_p,
)


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (1, 1), (2.5, 7), (108, 0.5), (239, 0.5), (1.5, 216), (50, 50)])
def test_betainc_matches_scipy(a, b):
    for x in np.linspace(0.001, 0.999, 41):
        ref = special.betainc(a, b, x)
        assert betainc(a, b, x) == pytest.approx(ref, rel=1e-10, abs=1e-300)
        refc = special.betaincc(a, b, x)
        assert betaincc(a, b, x) == pytest.approx(refc, rel=1e-9, abs=1e-300)


def test_betainc_edges():
    assert betainc(2, 3, 0) == 0.0
    assert betainc(2, 3, 1) == 1.0
    with pytest.raises(ValueError):
        betainc(0, 1, 0.5)


@pytest.mark.parametrize("df", [1, 2.5, 5, 30, 216, 478, 1e6])
def test_t_matches_scipy(df):
    for x in (-8, -2.5, -0.3, 0.0, 0.7, 1.96, 4.804, 12):
        assert t_cdf(x, df) == pytest.approx(stats.t.cdf(x, df), rel=1e-10, abs=1e-15)
        assert t_sf(x, df) == pytest.approx(stats.t.sf(x, df), rel=1e-9, abs=1e-300)


def test_t_symmetry_and_limit():
    for df in (1, 3, 50):
        assert t_cdf(0, df) == 0.5
    assert t_cdf(1.96, 1e6) == pytest.approx(0.975, abs=1e-3)
    assert t_cdf(1.96, math.inf) == pytest.approx(0.9750021, abs=1e-7)


@pytest.mark.parametrize("d1,d2", [(1, 5), (3, 216), (5, 216), (15, 432), (2, 324), (1, 864)])
def test_f_matches_scipy(d1, d2):
    for x in (0.01, 0.5, 1.0, 2.84, 18.76, 61.7):
        assert f_cdf(x, d1, d2) == pytest.approx(stats.f.cdf(x, d1, d2), rel=1e-10)
        assert f_sf(x, d1, d2) == pytest.approx(stats.f.sf(x, d1, d2), rel=1e-9, abs=1e-300)


def test_f_t_identity():
    for d in (3, 20, 216):
        for t in (0.2, 1.0, 2.5, 4.0):
            assert f_cdf(t * t, 1, d) == pytest.approx(2 * t_cdf(abs(t), d) - 1, abs=1e-13)
            assert t_two_sided_p(t, d) == pytest.approx(f_sf(t * t, 1, d), rel=1e-10)


@pytest.mark.parametrize("df", [5, 10, 30, 120])
def test_studentized_range_k2_identity(df):
    qs = np.linspace(0, 10, 101)
    worst = max(abs(studentized_range_cdf(q, 2, df) - (2 * t_cdf(q / math.sqrt(2), df) - 1)) for q in qs)
    assert worst < 1e-6


@pytest.mark.parametrize("k,df", [(3, 10), (4, 216), (6, 216), (6, 432), (10, 20), (4, 2.5), (3, 1.5)])
def test_studentized_range_matches_scipy(k, df):
    for q in (0.5, 1.5, 3.0, 4.5, 7.0):
        assert studentized_range_cdf(q, k, df) == pytest.approx(stats.studentized_range.cdf(q, k, df), abs=1e-6)


def test_studentized_range_table_value():
    assert round(studentized_range_ppf(0.95, 3, 10), 3) == 3.877


def test_studentized_range_shape():
    assert studentized_range_cdf(0.0, 4, 10) == 0.0
    qs = np.linspace(0.0, 8.0, 60)
    vals = [studentized_range_cdf(q, 5, 12) for q in qs]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    by_df = [studentized_range_cdf(3.5, 4, df) for df in (2, 5, 20, 100, 1000)]
    assert all(b > a for a, b in zip(by_df, by_df[1:]))
    assert studentized_range_cdf(3.5, 4, 1e9) == pytest.approx(float(normal_range_cdf(3.5, 4)[0]), abs=1e-9)
    assert by_df[-1] < float(normal_range_cdf(3.5, 4)[0])


def test_studentized_range_domain():
    with pytest.raises(ValueError):
        studentized_range_cdf(1.0, 1, 10)
    with pytest.raises(ValueError):
        studentized_range_cdf(1.0, 3, 0)
