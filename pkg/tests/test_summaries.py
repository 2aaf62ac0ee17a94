import math

import numpy as np
import pytest

from columnar.core import PointPattern, Window
from columnar.summaries import (GERL_ARGS, SummaryRangeError, UndefinedSummaryError,
                                concat_for_gerl, cylk_est, default_pcf_bandwidth, f_est,
                                f_test_locations, g_nn_est, j_from, k_est, l_est, pcf_est,
                                write_summaries_csv)
from oracles import brute_cylk, brute_f, brute_g, brute_j, brute_k, brute_pcf

W3 = Window.from_sides(40.0, 30.0, 50.0)
W2 = Window.from_sides(40.0, 30.0)


def _pattern(n, W, seed):
    gen = np.random.default_rng(seed)
    return PointPattern(W.lo + gen.random((n, W.dim)) * W.sides, W)


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


@pytest.mark.parametrize("W", [W2, W3])
def test_k_matches_brute_force(W):
    pat = _pattern(20, W, 1)
    r = np.linspace(0.5, 7.5, 30)
    assert _rel(k_est(pat, r).values, brute_k(pat.points, W, r)) < 1e-12


def test_cylk_matches_brute_force():
    pat = _pattern(20, W3, 2)
    r = np.linspace(1, 7, 12)
    t = np.linspace(1, 12, 10)
    assert _rel(cylk_est(pat, r, t).values, brute_cylk(pat.points, W3, r, t)) < 1e-12


@pytest.mark.parametrize("W", [W2, W3])
def test_pcf_matches_brute_force(W):
    pat = _pattern(20, W, 3)
    r = np.linspace(0.5, 7.5, 30)
    b = default_pcf_bandwidth(pat)
    got = pcf_est(pat, r).values
    ref = brute_pcf(pat.points, W, r, b)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-300)


def test_g_f_j_match_brute_force():
    pat = _pattern(15, W3, 4)
    r = np.linspace(0.5, 14, 40)
    locs = f_test_locations(W3, pat.n, min_count=300)
    G = g_nn_est(pat, r)
    F = f_est(pat, r, locs)
    J = j_from(F, G)
    np.testing.assert_allclose(np.where(G.defined, G.values, np.nan), brute_g(pat.points, W3, r),
                               rtol=1e-12, equal_nan=True)
    np.testing.assert_allclose(np.where(F.defined, F.values, np.nan),
                               brute_f(pat.points, W3, locs, r), rtol=1e-12, equal_nan=True)
    np.testing.assert_allclose(np.where(J.defined, J.values, np.nan),
                               brute_j(pat.points, W3, locs, r), rtol=1e-12, equal_nan=True)


def test_two_point_k_by_hand():
    W = Window.from_sides(20.0, 20.0)
    pat = PointPattern([[2.0, 2.0], [5.0, 6.0]], W)
    w = 400.0 / (17.0 * 16.0)
    K = k_est(pat, [4.9, 5.0, 6.0]).values
    np.testing.assert_allclose(K, [0.0, 2 * w * 400 / 4, 2 * w * 400 / 4], rtol=1e-14)


def test_l_is_root_of_k():
    pat = _pattern(30, W3, 5)
    r = np.linspace(1, 7, 10)
    K = k_est(pat, r).values
    np.testing.assert_allclose(l_est(pat, r).values, (K / (4 / 3 * math.pi)) ** (1 / 3))
    np.testing.assert_allclose(l_est(pat, r, centred=True).values,
                               (K / (4 / 3 * math.pi)) ** (1 / 3) - r)


def test_range_checks():
    pat = _pattern(10, W3, 6)
    with pytest.raises(SummaryRangeError):
        k_est(pat, [20.0])
    with pytest.raises(UndefinedSummaryError):
        k_est(_pattern(1, W3, 6), [1.0])


def test_single_point_g_undefined():
    G = g_nn_est(_pattern(1, W3, 7), [1.0, 2.0])
    assert not G.defined.any()


def test_j_undefined_where_f_is_one():
    W = Window.from_sides(10.0, 10.0)
    pat = PointPattern(np.array([[x, y] for x in np.arange(0.5, 10, 1) for y in np.arange(0.5, 10, 1)]), W)
    r = np.array([0.1, 0.8, 2.0])
    J = j_from(f_est(pat, r), g_nn_est(pat, r))
    assert not J.defined[-1]


def test_concat_layout():
    W = Window.from_sides(100.0, 80.0, 120.0)
    pat = _pattern(200, W, 8)
    c = concat_for_gerl(pat)
    assert [s[0] for s in c.segments] == ["L", "G", "F", "J", "cylK"]
    for name, a, b in c.segments:
        assert b - a == GERL_ARGS
    assert c.values.size == 5 * GERL_ARGS
    assert np.all(c.values[~c.mask] == 0)
    # L, G, F and cylK are defined everywhere on the default grids
    assert c.mask[c.segment("L")].all() and c.mask[c.segment("cylK")].all()
    planar = concat_for_gerl(PointPattern(pat.points[:, :2], W.xy))
    assert [s[0] for s in planar.segments] == ["L", "G", "F", "J"]


def test_csr_l_near_identity():
    W = Window.from_sides(200.0, 200.0, 200.0)
    pat = PointPattern(np.random.default_rng(9).random((800, 3)) * 200, W)
    r = np.linspace(5, 40, 8)
    Lc = l_est(pat, r, centred=True).values
    assert np.all(np.abs(Lc) < 2.0)


def test_csv_output(tmp_path):
    pat = _pattern(20, W3, 10)
    r = np.linspace(1, 5, 5)
    write_summaries_csv([k_est(pat, r), cylk_est(pat, r, r)], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "name,r,value,defined"
    assert lines[6] == "name,r,t,value"
    assert len(lines) == 1 + 5 + 1 + 25
