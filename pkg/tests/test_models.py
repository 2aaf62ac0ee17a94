import math

import numpy as np
import pytest
from scipy import stats

from columnar.core import L3_WINDOW, RngStream, Window
from columnar.models import (ClusterModelParams, DppConfigError, DppSpectralConfig, _spectral_frequencies, dpp_extension,
                             _householder_drop, jinc_kernel, simulate_csr, simulate_dlcpp,
                             simulate_dtpp, simulate_jinc_dpp, simulate_plcpp, simulate_thomas)

THOMAS_L3 = ClusterModelParams(0.027, 0.36, 2.86)
DTPP_L3 = ClusterModelParams(0.0040, 2.42, 5.45, "jinc_dpp")


def test_params_validation():
    with pytest.raises(ValueError):
        ClusterModelParams(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ClusterModelParams(1.0, 1.0, 1.0, "strauss")
    assert THOMAS_L3.intensity == pytest.approx(0.027 * 0.36)


def test_csr_count_distribution():
    W = Window.from_sides(50.0, 40.0)
    counts = [simulate_csr(W, 0.05, RngStream(3, i)).n for i in range(400)]
    assert abs(np.mean(counts) - 100) < 4 * math.sqrt(100 / 400)


def test_csr_uniform_marginals():
    p = simulate_csr(L3_WINDOW, 2.37e-5, 11)
    for k in range(3):
        u = (p.points[:, k] - L3_WINDOW.lo[k]) / L3_WINDOW.sides[k]
        assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_simulators_reproducible():
    a = simulate_dlcpp(L3_WINDOW, DTPP_L3, rng=RngStream(9, 4))
    b = simulate_dlcpp(L3_WINDOW, DTPP_L3, rng=RngStream(9, 4))
    assert a == b


def test_thomas_mean_count():
    W = L3_WINDOW.xy
    n = [simulate_thomas(W, THOMAS_L3, RngStream(4, i)).n for i in range(200)]
    expected = THOMAS_L3.intensity * W.volume
    assert abs(np.mean(n) / expected - 1) < 0.05


def test_jinc_kernel_values():
    k = 0.004
    assert jinc_kernel(k, [0.0])[0] == k
    assert jinc_kernel(k, [1e-12])[0] == pytest.approx(k, rel=1e-12)
    # first zero of J1 at 3.8317
    r0 = 3.8317059702075125 / (2 * math.sqrt(math.pi * k))
    assert abs(jinc_kernel(k, [r0])[0]) < 1e-12


def test_householder_keeps_orthonormal_complement():
    gen = np.random.default_rng(0)
    Q, _ = np.linalg.qr(gen.normal(size=(12, 7)))
    Q = Q.T
    c = gen.normal(size=7)
    R = _householder_drop(Q, c)
    v = c @ Q
    np.testing.assert_allclose(R @ R.T, np.eye(6), atol=1e-13)
    np.testing.assert_allclose(R @ v, 0, atol=1e-12)


def test_jinc_dpp_count_is_fixed():
    S = Window.from_sides(150.0, 120.0)
    p = simulate_jinc_dpp(S, 0.004, rng=1, sample_window=S)
    # a projection DPP has exactly one point per retained frequency
    q = simulate_jinc_dpp(S, 0.004, rng=2, sample_window=S)
    assert p.n == q.n
    assert abs(p.n - 0.004 * S.volume) / (0.004 * S.volume) < 0.1


def test_jinc_dpp_is_repulsive():
    S = Window.from_sides(200.0, 200.0)
    p = simulate_jinc_dpp(S, 0.004, rng=5, sample_window=S)
    d, _ = __import__("scipy.spatial", fromlist=["cKDTree"]).cKDTree(p.points).query(p.points, k=2)
    poisson_mean_nn = 0.5 / math.sqrt(0.004)
    assert d[:, 1].mean() > 1.2 * poisson_mean_nn


def test_truncation_too_small_raises():
    with pytest.raises(DppConfigError, match="truncation must be at least"):
        simulate_jinc_dpp(L3_WINDOW.xy, 0.004, DppSpectralConfig(truncation=2), rng=0)


def test_columnar_processes_need_3d():
    with pytest.raises(Exception):
        simulate_plcpp(L3_WINDOW.xy, THOMAS_L3, 0)
    p = simulate_plcpp(L3_WINDOW, THOMAS_L3, 0)
    assert p.dim == 3
    assert stats.kstest(p.points[:, 2] / L3_WINDOW.z_length, "uniform").pvalue > 1e-3


def test_dtpp_inside_window():
    p = simulate_dtpp(L3_WINDOW.xy, DTPP_L3, rng=3)
    assert np.all(L3_WINDOW.xy.contains(p.points))
    assert abs(p.n / (DTPP_L3.intensity * L3_WINDOW.xy.volume) - 1) < 0.2


@pytest.mark.parametrize("kappa", [0.0021, 0.004, 0.027])
def test_dpp_extension_matches_lattice_count(kappa):
    S = dpp_extension(L3_WINDOW.xy, kappa)
    n = _spectral_frequencies(kappa, S.sides, None)[0].size
    assert abs(n - kappa * S.volume) <= 0.5
    assert np.all(S.sides - L3_WINDOW.xy.sides >= 2 * 3 / math.sqrt(kappa))
