"""Theoretical summaries, minimum-contrast fits and pseudo-likelihood fits.

Minimum contrast minimises ``int |T(theta, r)**q - That(r)**q|**p dr`` over
``(kappa, sigma)`` for the Thomas K-function or the DTPP pair correlation.
The pseudo-likelihood of the conditional z-model is

    LP = sum_i [ s1_i log g1 + s2_i log g2 - log c_i(g1, g2) ]

where ``c_i`` is the exact piecewise-constant normaliser. LP is concave in
``(log g1, log g2)``, so the inner problem is solved by Newton's method and
the region parameters by grid search.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special
from scipy.stats import qmc

from .core import PointPattern, pairwise_min_distance
from .models import jinc_kernel, jinc_spectral_radius
from .mrf import ConditionalState, MrfModelSpec, MrfSpecError, MODEL_REGIONS
from .summaries import SummaryFunction1D


class NumericalError(RuntimeError):
    pass


class DataRangeError(ValueError):
    pass


class NoMpleError(ValueError):
    pass


def _positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be positive, got {v}")


# -- closed forms -------------------------------------------------------------

def thomas_k_theory(kappa, sigma, r):
    """K-function of the planar Thomas process."""
    _positive(kappa=kappa, sigma=sigma)
    r = np.asarray(r, dtype=float)
    return np.pi * r ** 2 + -np.expm1(-r ** 2 / (4.0 * sigma ** 2)) / kappa


def gaussian_self_convolution(sigma, r):
    """Density of the difference of two N(0, sigma^2 I) planar displacements."""
    r = np.asarray(r, dtype=float)
    return np.exp(-r ** 2 / (4.0 * sigma ** 2)) / (4.0 * np.pi * sigma ** 2)


def thomas_pcf_theory(kappa, sigma, r):
    _positive(kappa=kappa, sigma=sigma)
    return 1.0 + gaussian_self_convolution(sigma, r) / kappa


def jinc_dpp_pcf_theory(kappa, r):
    """Pair correlation ``1 - (C(r) / kappa)**2`` of the jinc-like DPP."""
    _positive(kappa=kappa)
    return 1.0 - (jinc_kernel(kappa, r) / kappa) ** 2


def jinc_kernel_from_spectrum(kappa, r, epsabs=1e-13):
    """Jinc kernel as the Hankel transform of its spectral disc indicator.

    ``C(r) = 2 pi int_0^rho J0(2 pi r w) w dw`` by adaptive quadrature; used
    to check the closed form.
    """
    rho = jinc_spectral_radius(kappa)
    out = []
    for x in np.atleast_1d(np.asarray(r, float)):
        v, _ = integrate.quad(lambda w: special.j0(2 * np.pi * x * w) * w, 0.0, rho,
                              epsabs=epsabs, epsrel=1e-12, limit=200)
        out.append(2 * np.pi * v)
    return np.array(out)


@dataclass(frozen=True)
class QuadConfig:
    """Gauss-Legendre settings for the DTPP convolution term.

    ``check`` re-evaluates with twice the nodes and raises
    :class:`NumericalError` if the two disagree by more than ``rtol``.
    """

    nodes: int = 96
    rtol: float = 1e-8
    check: bool = True


def _lens_area(rho, w):
    x = np.clip(w / (2.0 * rho), 0.0, 1.0)
    return 2.0 * rho ** 2 * np.arccos(x) - 0.5 * w * np.sqrt(np.maximum(4.0 * rho ** 2 - w ** 2, 0.0))


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n):
    if n not in _GL_CACHE:
        x, wt = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * wt)
    return _GL_CACHE[n]


def _c2_conv_fourier(kappa, sigma, r, nodes):
    """``(C^2 * h_sigma)(r)`` through the spectral side.

    The Fourier transform of ``C^2`` is the overlap area of two spectral discs
    of radius rho at distance w, and that of ``h_sigma`` is
    ``exp(-4 pi^2 sigma^2 w^2)``. The integral runs up to ``2 rho`` or to where
    the Gaussian factor drops below 1e-18, whichever is smaller. When the
    disc edge is reached, ``w = 2 rho (1 - u^2)`` removes the
    ``(2 rho - w)^(3/2)`` endpoint behaviour so plain Gauss-Legendre converges
    fast.
    """
    rho = jinc_spectral_radius(kappa)
    u, wt = _gl(nodes)
    w_cut = 6.5 / (2.0 * np.pi * sigma)
    if w_cut < 2.0 * rho:
        w = w_cut * u
        jac = np.full_like(u, w_cut)
    else:
        w = 2.0 * rho * (1.0 - u ** 2)
        jac = 4.0 * rho * u
    f = _lens_area(rho, w) * np.exp(-4.0 * np.pi ** 2 * sigma ** 2 * w ** 2) * w * jac * wt
    r = np.asarray(r, dtype=float)
    return 2.0 * np.pi * (special.j0(2.0 * np.pi * np.multiply.outer(r, w)) @ f)


def c2_conv_direct(kappa, sigma, r, epsrel=1e-11):
    """``(C^2 * h_sigma)(r)`` by adaptive radial quadrature in direct space."""
    s2 = 2.0 * sigma ** 2

    def one(x):
        def f(s):
            c = jinc_kernel(kappa, np.array([s]))[0]
            return c * c * s * math.exp(-(x - s) ** 2 / (2 * s2)) * special.i0e(x * s / s2) / s2

        # the Gaussian factor confines the mass near s = x
        hi = x + 12.0 * sigma + 200.0 / math.sqrt(kappa)
        pts = [p for p in (x,) if 0 < p < hi]
        v, err = integrate.quad(f, 0.0, hi, points=pts or None, epsabs=0.0, epsrel=epsrel, limit=2000)
        return v

    return np.array([one(x) for x in np.atleast_1d(np.asarray(r, float))])


def dtpp_pcf_theory(kappa, sigma, r, quad_cfg: QuadConfig | None = None):
    """Pair correlation of the determinantal Thomas process.

    ``g = 1 + h_sigma / kappa - (C^2 * h_sigma) / kappa^2`` with ``h_sigma``
    the Gaussian self-convolution and ``C`` the jinc kernel.
    """
    _positive(kappa=kappa, sigma=sigma)
    cfg = quad_cfg or QuadConfig()
    conv = _c2_conv_fourier(kappa, sigma, r, cfg.nodes)
    if cfg.check:
        fine = _c2_conv_fourier(kappa, sigma, r, 2 * cfg.nodes)
        err = np.max(np.abs(fine - conv)) / max(np.max(np.abs(fine)), 1e-300)
        if not err <= cfg.rtol:
            raise NumericalError(f"DTPP convolution not converged: relative change {err:.2e} "
                                 f"with {cfg.nodes} -> {2 * cfg.nodes} nodes")
        conv = fine
    return 1.0 + gaussian_self_convolution(sigma, r) / kappa - conv / kappa ** 2


# -- minimum contrast -----------------------------------------------------------

@dataclass(frozen=True)
class ContrastConfig:
    """Contrast exponents and integration range.

    ``r_max=None`` means a quarter of the shortest planar side. For the pair
    correlation the lower limit is raised to the kernel bandwidth because the
    estimate is biased below it.
    """

    q: float = 0.25
    p: float = 2.0
    r_min: float = 0.0
    r_max: float | None = None
    target: str = "K"
    n_grid: int = 512

    def __post_init__(self):
        if self.target not in ("K", "pcf"):
            raise ValueError("target must be 'K' or 'pcf'")
        if not (self.q > 0 and self.p > 0):
            raise ValueError("q and p must be positive")
        if self.r_max is not None and not self.r_min < self.r_max:
            raise ValueError("need r_min < r_max")

    def to_dict(self):
        return dict(q=self.q, p=self.p, r_min=self.r_min, r_max=self.r_max,
                    target=self.target, n_grid=self.n_grid)


@dataclass
class ContrastFit:
    kappa: float
    sigma: float
    alpha_a: float
    contrast: float
    family: str
    at_bound: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(kappa=self.kappa, sigma=self.sigma, alpha_a=self.alpha_a,
                    contrast=self.contrast, family=self.family, at_bound=self.at_bound,
                    diagnostics=self.diagnostics)


FAMILIES = ("thomas_K", "dtpp_pcf")


def default_bounds(intensity: float, r_max: float):
    """Box for ``(kappa, sigma)`` in natural units."""
    return (intensity / 200.0, intensity * 200.0), (0.05, r_max)


def min_contrast_fit(T_hat: SummaryFunction1D, family: str, cfg: ContrastConfig | None = None,
                     bounds=None, *, intensity: float, n_starts: int = 8,
                     quad_cfg: QuadConfig | None = None) -> ContrastFit:
    """Minimum-contrast estimate of ``(kappa, sigma)``; ``alpha_a = intensity / kappa``.

    The contrast is integrated by the trapezoidal rule on ``T_hat``'s own
    grid restricted to ``[r_min, r_max]``. Bounded Nelder-Mead runs in log
    coordinates from ``n_starts`` scrambled-Sobol starts.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    cfg = cfg or ContrastConfig(target="K" if family == "thomas_K" else "pcf")
    _positive(intensity=intensity)
    r, vals = T_hat.args, T_hat.values
    r_lo = cfg.r_min
    if family == "dtpp_pcf" and "bandwidth" in T_hat.meta:
        r_lo = max(r_lo, float(T_hat.meta["bandwidth"]))
    r_hi = r[-1] if cfg.r_max is None else cfg.r_max
    keep = T_hat.defined & (r >= r_lo) & (r <= r_hi)
    r, vals = r[keep], vals[keep]
    if r.size < 2 or not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise DataRangeError("summary estimate not usable on the contrast range")
    target_q = vals ** cfg.q
    if bounds is None:
        bounds = default_bounds(intensity, r_hi)
    lb = np.log([bounds[0][0], bounds[1][0]])
    ub = np.log([bounds[0][1], bounds[1][1]])
    qcfg = quad_cfg or QuadConfig(check=False)

    if family == "thomas_K":
        def model(k, s):
            return thomas_k_theory(k, s, r)
    else:
        def model(k, s):
            return dtpp_pcf_theory(k, s, r, qcfg)

    def contrast(x):
        k, s = np.exp(x)
        m = model(k, s)
        d = np.abs(np.maximum(m, 0.0) ** cfg.q - target_q) ** cfg.p
        return float(np.trapezoid(d, r)) if hasattr(np, "trapezoid") else float(np.trapz(d, r))

    starts = lb + qmc.Sobol(2, scramble=True, seed=0).random(n_starts) * (ub - lb)
    best, runs = None, []
    for x0 in starts:
        res = optimize.minimize(contrast, x0, method="Nelder-Mead", bounds=list(zip(lb, ub)),
                                options=dict(xatol=1e-9, fatol=1e-15, maxiter=4000, maxfev=8000))
        runs.append(dict(x=res.x.tolist(), fun=float(res.fun), nfev=int(res.nfev),
                         success=bool(res.success)))
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise DataRangeError("contrast is not finite at any start")
    # polish from the best point
    res = optimize.minimize(contrast, best.x, method="Nelder-Mead", bounds=list(zip(lb, ub)),
                            options=dict(xatol=1e-11, fatol=1e-18, maxiter=4000, maxfev=8000))
    if res.fun <= best.fun:
        best = res
    kappa, sigma = (float(v) for v in np.exp(best.x))
    span = ub - lb
    at_bound = bool(np.any(np.minimum(best.x - lb, ub - best.x) < 1e-6 * span))
    if family == "dtpp_pcf":
        dtpp_pcf_theory(kappa, sigma, r[:8], QuadConfig())  # convergence check at the optimum
    return ContrastFit(kappa, sigma, intensity / kappa, float(best.fun), family, at_bound,
                       dict(r_range=[float(r[0]), float(r[-1])], n_args=int(r.size),
                            bounds=[list(b) for b in bounds], starts=runs, config=cfg.to_dict()))


# -- pseudo-likelihood ---------------------------------------------------------

#: Factor applied to the minimum distance so the data pair itself stays feasible.
HARD_CORE_SHRINK = 1.0 - 1e-9


@dataclass(frozen=True)
class MpleFitConfig:
    """Grids for the region parameters and settings of the inner Newton solve.

    ``theta_grids`` maps ``r``/``t`` (models 2-4) or ``r1``/``t1``/``r2``/``t2``
    (model 5) to ascending value lists. Missing keys fall back to
    :func:`default_theta_grids`.
    """

    theta_grids: dict = field(default_factory=dict)
    gamma_bounds: tuple = ((-12.0, 12.0), (-12.0, 12.0))
    tol: float = 1e-10
    max_iter: int = 100

    def to_dict(self):
        return dict(theta_grids={k: list(map(float, v)) for k, v in self.theta_grids.items()},
                    gamma_bounds=[list(b) for b in self.gamma_bounds], tol=self.tol,
                    max_iter=self.max_iter)


def default_theta_grids(model_id: int, h: float) -> dict:
    """Default grids.

    Models 2-4 use r from h to 30 in steps of 0.25 and t from 0.5 to 50 in
    steps of 0.5. Model 5 has four region parameters, so a 2.5 step is used
    there to keep the search near a minute.
    """
    if model_id == 2:
        return {"r": np.arange(0.25, 30.0 + 1e-9, 0.25)}
    if model_id in (3, 4):
        return {"r": np.arange(0.25, 30.0 + 1e-9, 0.25), "t": np.arange(0.5, 50.0 + 1e-9, 0.5)}
    if model_id == 5:
        return {"r1": np.arange(10.0, 30.0 + 1e-9, 2.5), "t1": np.arange(5.0, 25.0 + 1e-9, 2.5),
                "r2": np.arange(5.0, 25.0 + 1e-9, 2.5), "t2": np.arange(20.0, 50.0 + 1e-9, 2.5)}
    return {}


_GRID_KEYS = {1: (), 2: ("r",), 3: ("r", "t"), 4: ("r", "t"), 5: ("r1", "t1", "r2", "t2")}


def theta_grid_points(model_id: int, grids: dict, h: float):
    """Valid ``(theta1, theta2)`` pairs in lexicographic order."""
    keys = _GRID_KEYS[model_id]
    full = default_theta_grids(model_id, h)
    full.update(grids or {})
    axes = []
    for k in keys:
        g = np.asarray(full[k], float)
        if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
            raise ValueError(f"grid {k} must be non-empty and strictly increasing")
        axes.append(g)
    for combo in itertools.product(*axes):
        if model_id == 5:
            th1, th2 = combo[:2], combo[2:]
        else:
            th1, th2 = combo, ()
        try:
            MrfModelSpec(model_id, 0.5 if model_id > 1 else 1.0, 0.5 if model_id == 5 else 1.0,
                         h, th1, th2)
        except MrfSpecError:
            continue
        yield tuple(float(v) for v in th1), tuple(float(v) for v in th2)


@dataclass
class SitePieces:
    """Data needed to evaluate LP and its derivatives at fixed region parameters."""

    s: np.ndarray        # (n, d) observed counts
    feats: np.ndarray    # (P, d) piece counts
    loglen: np.ndarray   # (P,)
    site_ptr: np.ndarray  # (n + 1,)

    @property
    def d(self):
        return self.s.shape[1]


def site_pieces(state: ConditionalState) -> SitePieces:
    d = {1: 0, 2: 1, 3: 1, 4: 1, 5: 2}[state.spec.model_id]
    s1, s2, bad = state.site_counts()
    if np.any(bad):
        raise MrfSpecError("data violate the hard core")
    ptr, k, l, ln = state.all_pieces()
    if np.any(np.diff(ptr) == 0):
        raise MrfSpecError("a site has an empty conditional support")
    s = np.stack([s1, s2], axis=1)[:, :d].astype(float)
    feats = np.stack([k, l], axis=1)[:, :d].astype(float)
    return SitePieces(s, feats, np.log(ln), ptr)


def lp_value_grad_hess(sp: SitePieces, lg) -> tuple[float, np.ndarray, np.ndarray]:
    """LP, its gradient and Hessian in ``(log g1[, log g2])``."""
    lg = np.asarray(lg, float).reshape(-1)
    a = sp.loglen + sp.feats @ lg
    starts = sp.site_ptr[:-1]
    m = np.maximum.reduceat(a, starts)
    site_of = np.repeat(np.arange(len(starts)), np.diff(sp.site_ptr))
    e = np.exp(a - m[site_of])
    z = np.add.reduceat(e, starts)
    lognorm = m + np.log(z)
    w = e / z[site_of]
    lp = float(np.sum(sp.s @ lg) - np.sum(lognorm))
    mean = np.add.reduceat(w[:, None] * sp.feats, starts, axis=0) if sp.d else np.zeros((len(starts), 0))
    grad = np.sum(sp.s - mean, axis=0)
    second = np.einsum("p,pi,pj->ij", w, sp.feats, sp.feats)
    hess = -(second - mean.T @ mean)
    return lp, grad, hess


def log_pseudolikelihood(state: ConditionalState) -> float:
    sp = site_pieces(state)
    lg = np.array(state.spec.log_gammas)[: sp.d]
    return lp_value_grad_hess(sp, lg)[0]


def mple_exists(sp: SitePieces) -> bool:
    """Some site has a B1-neighbour and, for two regions, some site a B2-neighbour."""
    return bool(np.all(np.any(sp.s > 0, axis=0)))


def _newton(sp: SitePieces, bounds, tol, max_iter):
    d = sp.d
    lo = np.array([b[0] for b in bounds[:d]])
    hi = np.array([b[1] for b in bounds[:d]])
    x = np.zeros(d)
    f, g, H = lp_value_grad_hess(sp, x)
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = g
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            step = g
        t = 1.0
        while True:
            xn = np.clip(x + t * step, lo, hi)
            fn, gn, Hn = lp_value_grad_hess(sp, xn)
            if fn >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        moved = np.max(np.abs(xn - x))
        x, f, g, H = xn, fn, gn, Hn
        free = ~(((x <= lo) & (g < 0)) | ((x >= hi) & (g > 0)))
        if moved < tol or np.max(np.abs(g[free]), initial=0.0) < tol:
            break
    at_bound = bool(np.any((x <= lo + 1e-9) | (x >= hi - 1e-9)))
    return x, f, it, at_bound


@dataclass
class MpleFit:
    spec: MrfModelSpec
    lp: float
    h_hat: float
    n_grid: int
    n_feasible: int
    at_bound: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(spec=self.spec.to_dict(), lp=self.lp, h_hat=self.h_hat, n_grid=self.n_grid,
                    n_feasible=self.n_feasible, at_bound=self.at_bound,
                    diagnostics=self.diagnostics)


def mple_fit(xy, z, window_z, model_id: int, cfg: MpleFitConfig | None = None) -> MpleFit:
    """Maximum pseudo-likelihood fit of one of the five conditional z-models.

    ``h`` is the minimum pairwise distance of the 3D data. LP is taken in the
    limit ``h -> h_hat`` from below, so the closest data pair stays feasible.
    Ties in LP are broken towards the lexicographically smallest
    ``(theta1, theta2)``.
    """
    cfg = cfg or MpleFitConfig()
    xy = np.asarray(xy, float).reshape(-1, 2)
    z = np.asarray(z, float).ravel()
    h_hat = pairwise_min_distance(np.column_stack([xy, z]))
    h = h_hat * HARD_CORE_SHRINK
    if model_id not in MODEL_REGIONS:
        raise MrfSpecError(f"model_id must be 1..5, got {model_id}")
    if model_id == 1:
        spec = MrfModelSpec(1, h=h)
        lp = log_pseudolikelihood(ConditionalState(xy, z, window_z, spec))
        return MpleFit(MrfModelSpec(1, h=h_hat), lp, h_hat, 1, 1, False,
                       dict(h_used=h, config=cfg.to_dict()))
    points = list(theta_grid_points(model_id, cfg.theta_grids, h))
    if not points:
        raise NoMpleError("no valid grid point for the region parameters")
    radius = max(max(th1[0], *(th2[:1] or (0.0,))) for th1, th2 in points)
    base = ConditionalState(xy, z, window_z, MrfModelSpec(1, h=h), cache_radius=max(radius, h))
    best = None
    n_feasible = 0
    for th1, th2 in points:
        spec = MrfModelSpec(model_id, 0.5, 0.5 if model_id == 5 else 1.0, h, th1, th2)
        sp = site_pieces(base.with_spec(spec))
        if not mple_exists(sp):
            continue
        n_feasible += 1
        lg, lp, iters, at_bound = _newton(sp, cfg.gamma_bounds, cfg.tol, cfg.max_iter)
        if best is None or lp > best[0]:
            best = (lp, th1, th2, lg, iters, at_bound)
    if best is None:
        cond = "some s1_i > 0" + (" and some s2_j > 0" if model_id == 5 else "")
        raise NoMpleError(f"MPLE does not exist at any grid point: need {cond}")
    lp, th1, th2, lg, iters, at_bound = best
    g1 = math.exp(lg[0])
    g2 = math.exp(lg[1]) if model_id == 5 else 1.0
    spec = MrfModelSpec(model_id, g1, g2, h_hat, th1, th2)
    return MpleFit(spec, float(lp), h_hat, len(points), n_feasible, at_bound,
                   dict(h_used=h, newton_iterations=iters, log_gammas=list(map(float, lg)),
                        config=cfg.to_dict()))


def fit_dtpp(pattern: PointPattern, cfg: ContrastConfig | None = None, r_grid=None, **kw) -> ContrastFit:
    """Minimum-contrast DTPP fit from a planar (or projected) pattern via the pcf."""
    from .summaries import pcf_est, default_rmax

    planar = pattern if pattern.dim == 2 else PointPattern(pattern.points[:, :2], pattern.window.xy)
    cfg = cfg or ContrastConfig(target="pcf")
    r_max = cfg.r_max or default_rmax(planar.window)
    grid = np.linspace(0.0, r_max, cfg.n_grid + 1)[1:] if r_grid is None else r_grid
    g = pcf_est(planar, grid)
    return min_contrast_fit(g, "dtpp_pcf", cfg, intensity=planar.intensity, **kw)


def fit_thomas(pattern: PointPattern, cfg: ContrastConfig | None = None, r_grid=None, **kw) -> ContrastFit:
    """Minimum-contrast Thomas fit from a planar (or projected) pattern via K."""
    from .summaries import k_est, default_rmax

    planar = pattern if pattern.dim == 2 else PointPattern(pattern.points[:, :2], pattern.window.xy)
    cfg = cfg or ContrastConfig(target="K")
    r_max = cfg.r_max or default_rmax(planar.window)
    grid = np.linspace(0.0, r_max, cfg.n_grid + 1)[1:] if r_grid is None else r_grid
    K = k_est(planar, grid)
    return min_contrast_fit(K, "thomas_K", cfg, intensity=planar.intensity, **kw)
