"""Nonparametric functional summaries of point patterns in box windows.

K, L, the pair correlation function and the cylindrical K-function use the
translation edge correction ``w(u, v) = |W| / |W ∩ (W + v - u)|``. F and G use
the reduced-sample (border) correction. Every estimator is an exact step
function of the pairwise distances, so all grids are evaluated with
``searchsorted`` and cumulative sums rather than per-argument loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import PointPattern, Window, GeometryError, format_float

#: Arguments per summary in the concatenated envelope vector.
GERL_ARGS = 4096
CYLK_GRID = 64
CONCAT_ORDER = ("L", "G", "F", "J", "cylK")


class SummaryRangeError(ValueError):
    """Argument grid exceeds what the edge correction supports."""


class UndefinedSummaryError(ValueError):
    pass


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True, eq=False)
class SummaryFunction1D:
    name: str
    args: np.ndarray
    values: np.ndarray
    defined: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.args.ndim != 1 or np.any(np.diff(self.args) <= 0):
            raise ValueError("arguments must be strictly increasing")

    def to_rows(self):
        for r, v, ok in zip(self.args, self.values, self.defined):
            yield [self.name, format_float(r), format_float(v) if ok else "nan", int(ok)]


@dataclass(frozen=True, eq=False)
class SummaryFunction2D:
    name: str
    r_args: np.ndarray
    t_args: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_rows(self):
        for i, r in enumerate(self.r_args):
            for j, t in enumerate(self.t_args):
                yield [self.name, format_float(r), format_float(t), format_float(self.values[i, j])]


@dataclass(frozen=True, eq=False)
class ConcatenatedSummary:
    """Summaries flattened into one vector, with a per-argument validity mask."""

    values: np.ndarray
    mask: np.ndarray
    segments: tuple[tuple[str, int, int], ...]
    components: tuple = ()

    def segment(self, name: str) -> slice:
        for nm, a, b in self.segments:
            if nm == name:
                return slice(a, b)
        raise KeyError(name)


# -- grids and helpers ------------------------------------------------------

def _grid(values) -> np.ndarray:
    g = np.asarray(values, dtype=float).ravel()
    if g.size == 0 or np.any(np.diff(g) <= 0) or g[0] < 0:
        raise ValueError("grid must be non-empty, nonnegative and strictly increasing")
    return g


def default_rmax(window: Window) -> float:
    """A quarter of the shortest window side."""
    return float(window.sides.min()) / 4.0


def default_r_grid(window: Window, n: int = GERL_ARGS) -> np.ndarray:
    return np.linspace(0.0, default_rmax(window), n + 1)[1:]


def default_cylk_grids(window: Window, n: int = CYLK_GRID):
    if window.dim != 3:
        raise GeometryError("cylindrical K needs a 3D window")
    rcap = float(window.sides[:2].min()) / 4.0
    tcap = window.z_length / 4.0
    return np.linspace(0.0, rcap, n + 1)[1:], np.linspace(0.0, tcap, n + 1)[1:]


def _check_translation_range(window: Window, caps) -> None:
    caps = np.asarray(caps, dtype=float)
    lim = window.sides[: caps.size] / 2.0
    if np.any(caps > lim):
        raise SummaryRangeError(
            f"argument caps {caps.tolist()} exceed half the window sides {lim.tolist()}")


def close_pairs(points: np.ndarray, radius: float) -> np.ndarray:
    """Unordered pairs ``(i, j)``, ``i < j``, within ``radius``, in sorted order."""
    if len(points) < 2:
        return np.empty((0, 2), dtype=np.intp)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def translation_weights(window: Window, diffs: np.ndarray) -> np.ndarray:
    """``|W| / |W ∩ (W + h)|`` for displacement rows ``h``."""
    overlap = np.prod(window.sides - np.abs(diffs), axis=1)
    return window.volume / overlap


def _step_cumsum(grid, x, weights, side="left"):
    """``sum(weights[x <= g])`` for each ``g`` in grid (``x < g`` with side='right')."""
    idx = np.searchsorted(grid, x, side=side)
    acc = np.bincount(idx, weights=weights, minlength=grid.size + 1)[: grid.size]
    return np.cumsum(acc)


def _pattern_ratio(pattern: PointPattern) -> float:
    if pattern.n < 2:
        raise UndefinedSummaryError("need at least two points")
    return pattern.window.volume / pattern.n ** 2


# -- second-order summaries ------------------------------------------------

def k_est(pattern: PointPattern, r_grid) -> SummaryFunction1D:
    """Translation-corrected Ripley K-function.

    ``K(r) = |W| / n**2 * sum_{u != v} 1(|u - v| <= r) w(u, v)``.
    """
    r = _grid(r_grid)
    W = pattern.window
    _check_translation_range(W, [r[-1]] * W.dim)
    scale = _pattern_ratio(pattern)
    pts = pattern.points
    pairs = close_pairs(pts, r[-1])
    diffs = pts[pairs[:, 1]] - pts[pairs[:, 0]]
    dist = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    w = translation_weights(W, diffs)
    values = 2.0 * scale * _step_cumsum(r, dist, w)
    return SummaryFunction1D("K", r, values, np.ones(r.size, bool),
                             {"estimator": "ratio n^2", "edge": "translation"})


def l_est(pattern: PointPattern, r_grid, centred: bool = False) -> SummaryFunction1D:
    K = k_est(pattern, r_grid)
    d = pattern.dim
    L = (K.values / unit_ball_volume(d)) ** (1.0 / d)
    if centred:
        return SummaryFunction1D("Lcentred", K.args, L - K.args, K.defined, dict(K.meta))
    return SummaryFunction1D("L", K.args, L, K.defined, dict(K.meta))


def default_pcf_bandwidth(pattern: PointPattern) -> float:
    """``0.15 / lambda**(1/d)``, Stoyan's rule of thumb scaled to intensity."""
    return 0.15 / pattern.intensity ** (1.0 / pattern.dim)


def epanechnikov(x, bandwidth):
    u = np.asarray(x, dtype=float) / bandwidth
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u ** 2) / bandwidth, 0.0)


def pcf_est(pattern: PointPattern, r_grid, bandwidth: float | None = None) -> SummaryFunction1D:
    """Translation-corrected Epanechnikov kernel estimate of the pair correlation.

    Zero is dropped from the grid since the estimator is singular there.
    """
    r = np.asarray(r_grid, dtype=float).ravel()
    r = _grid(r[r > 0])
    W = pattern.window
    scale = _pattern_ratio(pattern)
    b = default_pcf_bandwidth(pattern) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ValueError("bandwidth must be positive")
    _check_translation_range(W, [r[-1] + b] * W.dim)
    pts = pattern.points
    pairs = close_pairs(pts, r[-1] + b)
    diffs = pts[pairs[:, 1]] - pts[pairs[:, 0]]
    dist = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    w = translation_weights(W, diffs)
    surface = pattern.dim * unit_ball_volume(pattern.dim) * r ** (pattern.dim - 1)
    values = np.empty(r.size)
    order = np.argsort(dist, kind="stable")
    dist, w = dist[order], w[order]
    lo = np.searchsorted(dist, r - b, side="left")
    hi = np.searchsorted(dist, r + b, side="right")
    for k in range(r.size):
        sl = slice(lo[k], hi[k])
        values[k] = np.sum(epanechnikov(r[k] - dist[sl], b) * w[sl])
    values = 2.0 * scale * values / surface
    return SummaryFunction1D("pcf", r, values, np.ones(r.size, bool),
                             {"estimator": "epanechnikov", "bandwidth": b, "edge": "translation"})


def cylk_est(pattern: PointPattern, r_grid, t_grid) -> SummaryFunction2D:
    """Cylindrical K-function with z-aligned cylinders of radius r and height 2t."""
    if pattern.dim != 3:
        raise GeometryError("cylindrical K needs a 3D pattern")
    r = _grid(r_grid)
    t = _grid(t_grid)
    W = pattern.window
    _check_translation_range(W, [r[-1], r[-1], t[-1]])
    scale = _pattern_ratio(pattern)
    pts = pattern.points
    pairs = close_pairs(pts, math.hypot(r[-1], t[-1]))
    diffs = pts[pairs[:, 1]] - pts[pairs[:, 0]]
    rho = np.hypot(diffs[:, 0], diffs[:, 1])
    adz = np.abs(diffs[:, 2])
    keep = (rho <= r[-1]) & (adz <= t[-1])
    diffs, rho, adz = diffs[keep], rho[keep], adz[keep]
    w = translation_weights(W, diffs)
    ir = np.searchsorted(r, rho, side="left")
    it = np.searchsorted(t, adz, side="left")
    acc = np.bincount(ir * t.size + it, weights=w, minlength=r.size * t.size)
    values = 2.0 * scale * np.cumsum(np.cumsum(acc.reshape(r.size, t.size), axis=0), axis=1)
    return SummaryFunction2D("cylK", r, t, values, {"estimator": "ratio n^2", "edge": "translation"})


# -- nearest-neighbour summaries --------------------------------------------

def _border_ratio(grid, dist, border):
    """Reduced-sample estimate ``#{d <= r <= b} / #{b >= r}`` on a grid."""
    start = np.searchsorted(grid, dist, side="left")
    stop = np.searchsorted(grid, border, side="right")
    m = grid.size
    num = np.zeros(m + 1)
    ok = start < stop
    np.add.at(num, start[ok], 1.0)
    np.add.at(num, stop[ok], -1.0)
    num = np.cumsum(num)[:m]
    den = _count_at_least(grid, border)
    defined = den > 0
    vals = np.zeros(m)
    vals[defined] = num[defined] / den[defined]
    return vals, defined


def _count_at_least(grid, x):
    """``#{x >= g}`` for each ``g`` in grid."""
    xs = np.sort(x)
    return (xs.size - np.searchsorted(xs, grid, side="left")).astype(float)


def nn_distances(pattern: PointPattern) -> np.ndarray:
    d, _ = cKDTree(pattern.points).query(pattern.points, k=2)
    return d[:, 1]


def g_nn_est(pattern: PointPattern, r_grid) -> SummaryFunction1D:
    """Border-corrected nearest-neighbour distance distribution G."""
    r = _grid(r_grid)
    if pattern.n == 0:
        raise UndefinedSummaryError("G is undefined for an empty pattern")
    if pattern.n == 1:
        return SummaryFunction1D("G", r, np.full(r.size, np.nan), np.zeros(r.size, bool),
                                 {"edge": "border"})
    d = nn_distances(pattern)
    b = pattern.window.boundary_distance(pattern.points)
    vals, defined = _border_ratio(r, d, b)
    vals[~defined] = np.nan
    return SummaryFunction1D("G", r, vals, defined, {"edge": "border"})


def f_test_locations(window: Window, n_points: int, seed: int = 0, min_count: int = 4096) -> np.ndarray:
    """Stratified jittered lattice with at least ``max(8 n, min_count)`` cells."""
    target = max(8 * n_points, min_count)
    cell = (window.volume / target) ** (1.0 / window.dim)
    counts = np.maximum(np.ceil(window.sides / cell).astype(int), 1)
    while np.prod(counts) < target:
        counts[np.argmax(window.sides / counts)] += 1
    axes = [np.arange(c) for c in counts]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, window.dim)
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0xF,))))
    jitter = gen.random(mesh.shape)
    return window.lo + (mesh + jitter) * (window.sides / counts)


def f_est(pattern: PointPattern, r_grid, locations: np.ndarray | None = None) -> SummaryFunction1D:
    """Border-corrected empty-space function F on a stratified lattice."""
    r = _grid(r_grid)
    W = pattern.window
    if locations is None:
        locations = f_test_locations(W, pattern.n)
    if pattern.n == 0:
        d = np.full(len(locations), np.inf)
    else:
        d, _ = cKDTree(pattern.points).query(locations, k=1)
    b = W.boundary_distance(locations)
    vals, defined = _border_ratio(r, d, b)
    vals[~defined] = np.nan
    return SummaryFunction1D("F", r, vals, defined, {"edge": "border", "locations": len(locations)})


def j_from(F: SummaryFunction1D, G: SummaryFunction1D) -> SummaryFunction1D:
    defined = F.defined & G.defined & (F.values < 1.0)
    vals = np.full(F.args.size, np.nan)
    vals[defined] = (1.0 - G.values[defined]) / (1.0 - F.values[defined])
    return SummaryFunction1D("J", F.args, vals, defined, {"edge": "border"})


def j_est(pattern: PointPattern, r_grid) -> SummaryFunction1D:
    return j_from(f_est(pattern, r_grid), g_nn_est(pattern, r_grid))


# -- concatenation ------------------------------------------------------------

def concat_for_gerl(pattern: PointPattern, r_grid=None, cylk_grids=None,
                    segments=None) -> ConcatenatedSummary:
    """Concatenate centred L, G, F, J and cylindrical K for envelope tests.

    Each 1D summary uses the same r-grid (4096 values by default) and the
    cylindrical K uses a 64 x 64 grid, so every summary contributes the same
    number of arguments. Planar patterns omit the cylindrical K segment.
    """
    W = pattern.window
    if segments is None:
        segments = CONCAT_ORDER if pattern.dim == 3 else CONCAT_ORDER[:4]
    r = default_r_grid(W) if r_grid is None else _grid(r_grid)
    parts = {}
    if "L" in segments:
        parts["L"] = l_est(pattern, r, centred=True)
    if {"G", "F", "J"} & set(segments):
        F = f_est(pattern, r)
        G = g_nn_est(pattern, r)
        parts.update(G=G, F=F, J=j_from(F, G))
    if "cylK" in segments:
        rg, tg = default_cylk_grids(W) if cylk_grids is None else cylk_grids
        parts["cylK"] = cylk_est(pattern, rg, tg)
    vals, masks, segs, comps = [], [], [], []
    pos = 0
    for name in segments:
        s = parts[name]
        if isinstance(s, SummaryFunction2D):
            v = s.values.ravel()
            m = np.ones(v.size, bool)
        else:
            v, m = s.values, s.defined
        vals.append(np.where(m, v, 0.0))
        masks.append(m)
        segs.append((name, pos, pos + v.size))
        comps.append(s)
        pos += v.size
    return ConcatenatedSummary(np.concatenate(vals), np.concatenate(masks), tuple(segs), tuple(comps))


def write_summaries_csv(summaries, path) -> None:
    """Write 1D summaries as ``name,r,value,defined`` and 2D as ``name,r,t,value``."""
    import csv

    one = [s for s in summaries if isinstance(s, SummaryFunction1D)]
    two = [s for s in summaries if isinstance(s, SummaryFunction2D)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if one:
            w.writerow(["name", "r", "value", "defined"])
            for s in one:
                w.writerows(s.to_rows())
        if two:
            w.writerow(["name", "r", "t", "value"])
            for s in two:
                w.writerows(s.to_rows())
