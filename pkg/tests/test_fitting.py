import math

import numpy as np
import pytest

from columnar.core import L3_WINDOW, RngStream
from columnar.fitting import (ContrastConfig, DataRangeError, MpleFitConfig, NoMpleError,
                              NumericalError, QuadConfig, _c2_conv_fourier, c2_conv_direct,
                              dtpp_pcf_theory, gaussian_self_convolution, jinc_dpp_pcf_theory,
                              jinc_kernel_from_spectrum, lp_value_grad_hess, min_contrast_fit,
                              mple_fit, site_pieces, theta_grid_points, thomas_k_theory,
                              thomas_pcf_theory)
from columnar.models import jinc_kernel
from columnar.mrf import FITTED_L3, ConditionalState, MrfModelSpec, initial_z, mh_sample_z
from columnar.summaries import SummaryFunction1D


def test_thomas_k_values():
    assert thomas_k_theory(0.027, 2.86, 0.0) == 0.0
    assert thomas_k_theory(0.027, 2.86, 5.0) == pytest.approx(98.3267, abs=1e-3)
    r = np.array([1.0, 5.0, 10.0])
    np.testing.assert_allclose(thomas_k_theory(1e12, 2.86, r), np.pi * r ** 2, rtol=1e-10)
    with pytest.raises(ValueError):
        thomas_k_theory(0.0, 1.0, 1.0)


def test_thomas_pcf_is_k_derivative():
    r = np.linspace(0.5, 30, 50)
    eps = 1e-5
    dk = (thomas_k_theory(0.027, 2.86, r + eps) - thomas_k_theory(0.027, 2.86, r - eps)) / (2 * eps)
    np.testing.assert_allclose(dk / (2 * np.pi * r), thomas_pcf_theory(0.027, 2.86, r), rtol=1e-6)
    assert thomas_pcf_theory(0.027, 2.86, 1e4) == pytest.approx(1.0)


def test_jinc_pcf_limits():
    assert jinc_dpp_pcf_theory(0.004, 0.0) == 0.0
    assert jinc_dpp_pcf_theory(0.004, 1e5) == pytest.approx(1.0, abs=1e-8)


def test_jinc_kernel_is_hankel_transform_of_disc():
    r = np.linspace(0.0, 120.0, 61)
    for kappa in (0.0021, 0.004, 0.027):
        ref = jinc_kernel_from_spectrum(kappa, r)
        assert np.max(np.abs(ref - jinc_kernel(kappa, r))) / kappa < 1e-6


@pytest.mark.parametrize("kappa,sigma", [(0.004, 5.45), (0.0021, 6.53), (0.02, 1.5)])
def test_convolution_routes_agree(kappa, sigma):
    r = np.array([0.0, 1.0, 3.0, 7.0, 15.0, 30.0])
    fourier = _c2_conv_fourier(kappa, sigma, r, 192)
    direct = c2_conv_direct(kappa, sigma, r)
    np.testing.assert_allclose(fourier, direct, rtol=1e-8)


def test_dtpp_pcf_limits():
    r = np.linspace(0.0, 30.0, 7)
    g = dtpp_pcf_theory(0.004, 1e4, r)
    np.testing.assert_allclose(g, 1.0, atol=1e-8)
    # dropping the DPP term leaves the Thomas pcf
    thomas_part = 1 + gaussian_self_convolution(5.45, r) / 0.004
    np.testing.assert_allclose(thomas_part, thomas_pcf_theory(0.004, 5.45, r))


def test_dtpp_quadrature_failure_is_reported():
    with pytest.raises(NumericalError):
        dtpp_pcf_theory(0.004, 0.01, np.array([200.0]), QuadConfig(nodes=4, rtol=1e-14))


def test_contrast_zero_fixed_point_thomas():
    r = np.linspace(0, 33, 513)[1:]
    T = SummaryFunction1D("K", r, thomas_k_theory(0.027, 2.86, r), np.ones(r.size, bool))
    fit = min_contrast_fit(T, "thomas_K", intensity=0.027 * 0.36)
    assert fit.contrast < 1e-10
    assert fit.kappa == pytest.approx(0.027, rel=1e-5)
    assert fit.sigma == pytest.approx(2.86, rel=1e-5)
    assert fit.alpha_a == pytest.approx(0.36, rel=1e-5)


def test_contrast_zero_fixed_point_dtpp():
    r = np.linspace(0, 33, 257)[1:]
    T = SummaryFunction1D("pcf", r, dtpp_pcf_theory(0.004, 5.45, r), np.ones(r.size, bool))
    fit = min_contrast_fit(T, "dtpp_pcf", intensity=0.004 * 2.42)
    assert fit.contrast < 1e-10
    assert fit.kappa == pytest.approx(0.004, rel=1e-4)
    assert fit.sigma == pytest.approx(5.45, rel=1e-4)


def test_contrast_grid_refinement_invariance():
    r1 = np.linspace(0, 33, 257)[1:]
    r2 = np.linspace(0, 33, 1025)[1:]
    k = lambda r: thomas_k_theory(0.02, 3.5, r) * (1 + 0.01 * np.sin(r))
    f1 = min_contrast_fit(SummaryFunction1D("K", r1, k(r1), np.ones(r1.size, bool)), "thomas_K",
                          intensity=0.01)
    f2 = min_contrast_fit(SummaryFunction1D("K", r2, k(r2), np.ones(r2.size, bool)), "thomas_K",
                          intensity=0.01)
    assert f1.kappa == pytest.approx(f2.kappa, rel=1e-2)
    assert f1.sigma == pytest.approx(f2.sigma, rel=1e-2)


def test_contrast_rejects_bad_input():
    r = np.linspace(1, 10, 10)
    T = SummaryFunction1D("K", r, np.full(10, np.nan), np.ones(10, bool))
    with pytest.raises(DataRangeError):
        min_contrast_fit(T, "thomas_K", intensity=0.01)
    with pytest.raises(ValueError):
        ContrastConfig(target="J")


def test_grid_points_respect_constraints():
    grids = {"r1": [10, 20], "t1": [5, 15], "r2": [10, 20], "t2": [10, 30]}
    pts = list(theta_grid_points(5, grids, 1.0))
    for (r1, t1), (r2, t2) in pts:
        assert r1 >= r2 and t2 > t1
    assert pts == sorted(pts)
    assert ((10.0, 5.0), (10.0, 10.0)) in pts
    assert all(th1[0] > 4.0 for th1, _ in theta_grid_points(2, {"r": [2, 4, 6]}, 4.0))


def _data(seed, n_sweeps=100):
    gen = np.random.default_rng(seed)
    xy = gen.uniform(0, 150, (150, 2))
    z = mh_sample_z(xy, FITTED_L3, (0.0, 150.0), n_sweeps, rng=gen).z
    return xy, z


def test_h_hat_is_min_distance():
    xy, z = _data(0, 10)
    fit = mple_fit(xy, z, (0.0, 150.0), 1)
    d = np.sqrt(((np.column_stack([xy, z])[:, None] - np.column_stack([xy, z])[None]) ** 2).sum(-1))
    d[np.diag_indices_from(d)] = np.inf
    assert fit.h_hat == d.min()
    assert fit.spec.h == d.min()


def test_lp_gradient_and_hessian():
    xy, z = _data(1, 20)
    st = ConditionalState(xy, z, (0.0, 150.0), FITTED_L3)
    sp = site_pieces(st)
    gen = np.random.default_rng(2)
    for _ in range(10):
        x = gen.uniform(-2, 2, 2)
        f, g, H = lp_value_grad_hess(sp, x)
        eps = 1e-5
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            fd = (lp_value_grad_hess(sp, x + e)[0] - lp_value_grad_hess(sp, x - e)[0]) / (2 * eps)
            assert fd == pytest.approx(g[k], rel=1e-6, abs=1e-6)
            fdg = (lp_value_grad_hess(sp, x + e)[1] - lp_value_grad_hess(sp, x - e)[1]) / (2 * eps)
            np.testing.assert_allclose(fdg, H[:, k], rtol=1e-5, atol=1e-5)
        assert np.all(np.linalg.eigvalsh(H) <= 1e-10)


def test_mple_recovers_truth_on_fixed_theta():
    xy, z = _data(3)
    g = {"r1": [20.0], "t1": [11.5], "r2": [11.0], "t2": [35.5]}
    fit = mple_fit(xy, z, (0.0, 150.0), 5, MpleFitConfig(g))
    assert abs(math.log(fit.spec.gamma1) - math.log(0.41)) < 1.0
    assert abs(math.log(fit.spec.gamma2) - math.log(1.78)) < 1.0
    assert fit.spec.theta1 == (20.0, 11.5)


def test_mple_no_existence():
    # the closest pair is stacked 3 apart in z, outside the cylinder of half-height 2
    xy = np.array([[0.0, 0.0], [0.0, 0.0], [50.0, 0.0]])
    z = np.array([1.0, 4.0, 1.0])
    with pytest.raises(NoMpleError, match="s1_i > 0"):
        mple_fit(xy, z, (0.0, 10.0), 3, MpleFitConfig({"r": [5.0], "t": [2.0]}))


def test_mple_model1_lp():
    xy, z = _data(4, 5)
    fit = mple_fit(xy, z, (0.0, 150.0), 1)
    st = ConditionalState(xy, z, (0.0, 150.0), MrfModelSpec(1, h=fit.diagnostics["h_used"]))
    ref = -sum(st.full_conditional_lognorm(i) for i in range(len(z)))
    assert fit.lp == pytest.approx(ref, rel=1e-12)
