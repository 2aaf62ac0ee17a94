"""Simulators for the planar cluster models and their columnar 3D versions.

All simulators take an ``rng`` argument which may be a
:class:`numpy.random.Generator`, an :class:`~columnar.core.RngStream` or an
integer seed. Count draws use :meth:`numpy.random.Generator.poisson`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .core import PointPattern, Window, as_generator, GeometryError

#: Cluster dispersion margin, in units of sigma.
CLUSTER_MARGIN_SIGMAS = 6.0


class DppConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModelParams:
    """Parameters of a projected-cluster model.

    kappa is the centre intensity (per square micrometre), alpha_a the
    expected projected cluster size and sigma the Gaussian dispersion.
    """

    kappa: float
    alpha_a: float
    sigma: float
    centre_kind: str = "poisson"

    def __post_init__(self):
        for name in ("kappa", "alpha_a", "sigma"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.centre_kind not in ("poisson", "jinc_dpp"):
            raise ValueError(f"unknown centre kind {self.centre_kind!r}")

    @property
    def intensity(self) -> float:
        """Planar intensity of the projected process."""
        return self.kappa * self.alpha_a

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DppSpectralConfig:
    """Settings for the spectral jinc-DPP sampler.

    truncation
        Maximum Fourier index per axis; ``None`` keeps every frequency inside
        the spectral disc.
    extension_margin
        Micrometres added on each side of the target window; ``None`` uses
        at least ``3 / sqrt(kappa)`` (three interaction ranges), widened
        slightly so the number of lattice frequencies in the spectral disc
        matches ``kappa`` times the extended area (see :func:`dpp_extension`).
    min_mass_fraction
        Smallest share of the in-disc frequencies a truncation may keep.
    """

    truncation: int | None = None
    extension_margin: float | None = None
    min_mass_fraction: float = 0.99


# -- Poisson / binomial ----------------------------------------------------

def simulate_csr(window: Window, lam: float, rng) -> PointPattern:
    """Homogeneous Poisson process with intensity ``lam`` on ``window``."""
    if not lam > 0:
        raise ValueError("intensity must be positive")
    gen = as_generator(rng)
    n = gen.poisson(lam * window.volume)
    pts = window.lo + gen.random((n, window.dim)) * window.sides
    return PointPattern(pts, window)


def simulate_binomial_z(n: int, window_z, rng) -> np.ndarray:
    lo, hi = window_z
    gen = as_generator(rng)
    return gen.uniform(lo, hi, size=int(n))


def _scatter_offspring(parents, alpha_a, sigma, window_xy, gen):
    counts = gen.poisson(alpha_a, size=len(parents))
    centres = np.repeat(parents, counts, axis=0)
    pts = centres + gen.normal(0.0, sigma, size=centres.shape)
    return pts[window_xy.contains(pts)] if len(pts) else pts.reshape(0, 2)


def simulate_thomas(window_xy: Window, params: ClusterModelParams, rng) -> PointPattern:
    """Thomas process restricted to ``window_xy``.

    Parents live on the window dilated by ``6 sigma``.
    """
    window_xy = window_xy.xy if window_xy.dim == 3 else window_xy
    gen = as_generator(rng)
    ext = window_xy.expand(CLUSTER_MARGIN_SIGMAS * params.sigma)
    parents = simulate_csr(ext, params.kappa, gen).points
    pts = _scatter_offspring(parents, params.alpha_a, params.sigma, window_xy, gen)
    return PointPattern(pts, window_xy)


# -- jinc-like DPP ---------------------------------------------------------

def jinc_kernel(kappa: float, r) -> np.ndarray:
    """Jinc-like DPP kernel ``C(r)``; ``C(0) = kappa``."""
    from scipy.special import j1

    r = np.asarray(r, dtype=float)
    a = 2.0 * math.sqrt(math.pi * kappa)
    out = np.empty_like(r)
    small = r * a < 1e-8
    out[small] = kappa
    rs = r[~small]
    out[~small] = math.sqrt(kappa / math.pi) * j1(a * rs) / rs
    return out


def jinc_spectral_radius(kappa: float) -> float:
    """Radius of the disc carrying the (binary) spectral density."""
    return math.sqrt(kappa / math.pi)


def _spectral_frequencies(kappa, sides, truncation):
    rho = jinc_spectral_radius(kappa)
    lx, ly = sides
    full_kx = int(math.floor(rho * lx))
    full_ly = int(math.floor(rho * ly))
    kmax = full_kx + 1 if truncation is None else int(truncation)
    lmax = full_ly + 1 if truncation is None else int(truncation)
    k = np.arange(-kmax, kmax + 1)
    l = np.arange(-lmax, lmax + 1)
    kk, ll = np.meshgrid(k, l, indexing="ij")
    inside = (kk / lx) ** 2 + (ll / ly) ** 2 <= rho ** 2
    return kk[inside], ll[inside], max(full_kx, full_ly)


COUNT_MATCH_STEPS = 200


@lru_cache(maxsize=256)
def _count_matched_margin(kappa, lx, ly, m0):
    # the periodic approximation has exactly N points on the extended rectangle, so its
    # intensity is N / area; scan margins in [m0, m0 + 1/sqrt(kappa)] for N ~ kappa * area
    step = 1.0 / (math.sqrt(kappa) * COUNT_MATCH_STEPS)
    best, best_err = m0, math.inf
    for j in range(COUNT_MATCH_STEPS + 1):
        m = m0 + j * step
        sides = (lx + 2 * m, ly + 2 * m)
        err = abs(_spectral_frequencies(kappa, sides, None)[0].size - kappa * sides[0] * sides[1])
        if err <= 0.5:
            return m
        if err < best_err:
            best, best_err = m, err
    return best


def dpp_extension(window_xy: Window, kappa: float, cfg: "DppSpectralConfig | None" = None,
                  min_margin: float = 0.0) -> Window:
    """Rectangle on which the periodic DPP approximation is simulated."""
    cfg = cfg or DppSpectralConfig()
    if cfg.extension_margin is not None:
        return window_xy.expand(max(float(cfg.extension_margin), min_margin))
    m0 = max(3.0 / math.sqrt(kappa), min_margin)
    lx, ly = (float(v) for v in window_xy.sides)
    return window_xy.expand(_count_matched_margin(float(kappa), lx, ly, float(m0)))


def _householder_drop(Q, c):
    """Rows spanning the part of ``span(Q)`` orthogonal to ``c @ Q``."""
    u = c / np.linalg.norm(c)
    w = u.copy()
    w[0] += 1.0 if u[0] >= 0 else -1.0
    return Q[1:] - (2.0 / (w @ w)) * np.outer(w[1:], w @ Q)


def _projection_dpp_sample(basis, n, lo, sides, gen):
    """Sequentially sample a projection DPP with real orthonormal features.

    ``basis(pts)`` returns feature vectors of squared norm ``n``. During the
    first half of the run the span of the accepted features is kept as rows
    of ``E``; afterwards its orthogonal complement ``Q`` is kept instead and
    shrunk by Householder reflections, so each proposal costs
    ``O(n * min(i, n - i))``.
    """
    out = np.empty((n, 2))
    E = np.empty((n, n))
    Q = None
    for i in range(n):
        m = n - i
        if Q is None and i >= n // 2 and i > 0:
            full, _ = np.linalg.qr(E[:i].T, mode="complete")
            Q = np.ascontiguousarray(full[:, i:].T)
        while True:
            batch = int(min(4096, math.ceil(1.5 * n / m)))
            prop = lo + gen.random((batch, 2)) * sides
            V = basis(prop)
            if Q is None:
                P = V @ E[:i].T
                accept = 1.0 - np.einsum("ij,ij->i", P, P) / n
            else:
                P = V @ Q.T
                accept = np.einsum("ij,ij->i", P, P) / n
            hit = np.flatnonzero(gen.random(batch) < accept)
            if hit.size:
                j = hit[0]
                break
        out[i] = prop[j]
        if Q is None:
            w = V[j] - P[j] @ E[:i]
            w -= (E[:i] @ w) @ E[:i]
            E[i] = w / np.linalg.norm(w)
        elif m > 1:
            Q = _householder_drop(Q, P[j])
    return out


def simulate_jinc_dpp(window_xy: Window, kappa: float, cfg: DppSpectralConfig | None = None,
                      rng=None, *, sample_window: Window | None = None) -> PointPattern:
    """Jinc-like determinantal point process on ``window_xy``.

    The DPP is approximated by its periodic version on the dilated window
    from :func:`dpp_extension`. There the Fourier eigenvalues are the disc
    indicator, so the process is a projection DPP with one point per retained
    frequency; it is sampled sequentially with uniform proposals accepted in
    proportion to the conditional density. ``sample_window`` overrides the
    dilated window (the result is then returned on it, unclipped).
    """
    cfg = cfg or DppSpectralConfig()
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    window_xy = window_xy.xy if window_xy.dim == 3 else window_xy
    gen = as_generator(rng)
    S = sample_window or dpp_extension(window_xy, kappa, cfg)
    sides = S.sides
    kk, ll, needed = _spectral_frequencies(kappa, sides, cfg.truncation)
    n = kk.size
    if cfg.truncation is not None:
        full = _spectral_frequencies(kappa, sides, None)[0].size
        if n < cfg.min_mass_fraction * full:
            raise DppConfigError(
                f"truncation {cfg.truncation} keeps {n} of {full} spectral frequencies; "
                f"truncation must be at least {needed}")

    # real features: constant, then sqrt(2) cos / sin for one of each +-frequency pair;
    # built from per-axis phases by the angle-addition formulas
    half = (kk > 0) | ((kk == 0) & (ll > 0))
    ku, kinv = np.unique(kk[half], return_inverse=True)
    lu, linv = np.unique(ll[half], return_inverse=True)
    root2 = math.sqrt(2.0)

    def basis(pts):
        ax = 2.0 * np.pi * np.outer(pts[:, 0] - S.x[0], ku / sides[0])
        ay = 2.0 * np.pi * np.outer(pts[:, 1] - S.y[0], lu / sides[1])
        cx, sx = np.cos(ax)[:, kinv], np.sin(ax)[:, kinv]
        cy, sy = np.cos(ay)[:, linv], np.sin(ay)[:, linv]
        out = np.empty((len(pts), n))
        out[:, 0] = 1.0
        np.multiply(root2, cx * cy - sx * sy, out=out[:, 1:1 + len(kinv)])
        np.multiply(root2, sx * cy + cx * sy, out=out[:, 1 + len(kinv):])
        return out

    out = _projection_dpp_sample(basis, n, S.lo, sides, gen)
    if sample_window is not None:
        return PointPattern(out, S)
    keep = window_xy.contains(out)
    return PointPattern(out[keep], window_xy)


def _dpp_parents(window_xy, params, cfg, gen):
    S = dpp_extension(window_xy, params.kappa, cfg, CLUSTER_MARGIN_SIGMAS * params.sigma)
    return simulate_jinc_dpp(window_xy, params.kappa, cfg, gen, sample_window=S).points


def simulate_dtpp(window_xy: Window, params: ClusterModelParams,
                  cfg: DppSpectralConfig | None = None, rng=None) -> PointPattern:
    """Determinantal Thomas process: jinc-DPP parents, Poisson Gaussian clusters."""
    window_xy = window_xy.xy if window_xy.dim == 3 else window_xy
    gen = as_generator(rng)
    parents = _dpp_parents(window_xy, params, cfg, gen)
    pts = _scatter_offspring(parents, params.alpha_a, params.sigma, window_xy, gen)
    return PointPattern(pts, window_xy)


def _attach_uniform_z(planar: PointPattern, window: Window, gen) -> PointPattern:
    z = simulate_binomial_z(planar.n, window.z, gen)
    return planar.with_z(z, window)


def simulate_plcpp(window: Window, params: ClusterModelParams, rng) -> PointPattern:
    """Degenerate Poisson line cluster process: Thomas xy plus uniform z."""
    if window.dim != 3:
        raise GeometryError("PLCPP needs a 3D window")
    gen = as_generator(rng)
    return _attach_uniform_z(simulate_thomas(window.xy, params, gen), window, gen)


def simulate_dlcpp(window: Window, params: ClusterModelParams,
                   cfg: DppSpectralConfig | None = None, rng=None) -> PointPattern:
    """Determinantal line cluster process: DTPP xy plus uniform z."""
    if window.dim != 3:
        raise GeometryError("DLCPP needs a 3D window")
    gen = as_generator(rng)
    return _attach_uniform_z(simulate_dtpp(window.xy, params, cfg, gen), window, gen)
