"""Pairwise-interaction Markov random field for z-coordinates given xy.

Given planar sites ``(x_i, y_i)`` the z-vector has unnormalised density

    prod_{i<j} 1(|p_i - p_j| > h) * gamma1**s1 * gamma2**s2

on ``W_z**n``, where ``s_k`` counts pairs whose displacement lies in the
interaction region ``B_k``. The five model variants differ only in their
regions; see :data:`MODEL_REGIONS`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .core import InteractionRegion, GeometryError, as_generator


class MrfSpecError(ValueError):
    pass


class DegenerateConditionalError(ValueError):
    """Every z in the window is forbidden for some site."""


class InitializationError(RuntimeError):
    pass


#: Region kinds per model id: (B1, B2). Model 1 has none.
MODEL_REGIONS = {
    1: (None, None),
    2: ("ball", None),
    3: ("cylinder", None),
    4: ("cylinder_minus_cone", None),
    5: ("cylinder", "cylinder_shell"),
}
_KIND_CODES = {None: K.NONE, "ball": K.BALL, "cylinder": K.CYLINDER,
               "cylinder_minus_cone": K.CYL_MINUS_CONE, "cylinder_shell": K.SHELL}


@dataclass(frozen=True)
class MrfModelSpec:
    """One of the five conditional z-models with its parameters.

    ``theta1`` is ``(r,)`` for model 2 and ``(r, t)`` for models 3-5;
    ``theta2 = (r2, t2)`` is used by model 5 only.
    """

    model_id: int
    gamma1: float = 1.0
    gamma2: float = 1.0
    h: float = 0.0
    theta1: tuple = ()
    theta2: tuple = ()

    def __post_init__(self):
        if self.model_id not in MODEL_REGIONS:
            raise MrfSpecError(f"model_id must be 1..5, got {self.model_id}")
        object.__setattr__(self, "theta1", tuple(float(v) for v in self.theta1))
        object.__setattr__(self, "theta2", tuple(float(v) for v in self.theta2))
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise MrfSpecError("interaction parameters must be positive")
        if self.h < 0:
            raise MrfSpecError("hard core distance must be nonnegative")
        m = self.model_id
        if m == 1 and (self.gamma1 != 1 or self.gamma2 != 1):
            raise MrfSpecError("model 1 has gamma1 = gamma2 = 1")
        if m in (2, 3, 4) and self.gamma2 != 1:
            raise MrfSpecError(f"model {m} has gamma2 = 1")
        need1 = {1: 0, 2: 1, 3: 2, 4: 2, 5: 2}[m]
        need2 = 2 if m == 5 else 0
        if len(self.theta1) != need1 or len(self.theta2) != need2:
            raise MrfSpecError(f"model {m} needs theta1 of length {need1} and theta2 of length {need2}")
        if any(v <= 0 for v in self.theta1 + self.theta2):
            raise MrfSpecError("region parameters must be positive")
        if m == 2 and not self.theta1[0] > self.h:
            raise MrfSpecError("model 2 needs r > h")
        if m in (3, 4, 5) and not math.hypot(*self.theta1) > self.h:
            raise MrfSpecError("B1 must not be contained in the hard-core ball")
        if m == 5:
            r1, t1 = self.theta1
            r2, t2 = self.theta2
            if not (r1 >= r2 and t2 > t1):
                raise MrfSpecError("model 5 needs r1 >= r2 > 0 and t2 > t1 > 0")
            if not math.hypot(r2, t2) > self.h:
                raise MrfSpecError("B2 must not be contained in the hard-core ball")

    @property
    def regions(self) -> tuple[InteractionRegion | None, InteractionRegion | None]:
        k1, k2 = MODEL_REGIONS[self.model_id]
        b1 = InteractionRegion(k1, self.theta1) if k1 else None
        b2 = InteractionRegion(k2, self.theta1 + self.theta2) if k2 else None
        return b1, b2

    @property
    def interaction_radius(self) -> float:
        """Planar range beyond which two sites never interact."""
        radii = [self.h] + [b.radius for b in self.regions if b is not None]
        return max(radii)

    def kernel_args(self):
        b1, b2 = self.regions
        out = []
        for kind, b in zip(MODEL_REGIONS[self.model_id], (b1, b2)):
            p = np.zeros(4)
            if b is not None:
                p[: len(b.params)] = b.params
            out += [_KIND_CODES[kind], p]
        return tuple(out)

    @property
    def log_gammas(self) -> tuple[float, float]:
        return math.log(self.gamma1), math.log(self.gamma2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta1"] = list(self.theta1)
        d["theta2"] = list(self.theta2)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MrfModelSpec":
        keys = ("model_id", "gamma1", "gamma2", "h", "theta1", "theta2")
        return cls(**{k: d[k] for k in keys if k in d})


#: Fitted final models for the two reference datasets.
FITTED_L3 = MrfModelSpec(5, 0.41, 1.78, 6.25, (20.0, 11.5), (11.0, 35.5))
FITTED_L5 = MrfModelSpec(5, 0.51, 1.68, 6.77, (24.25, 15.5), (14.75, 37.25))


def neighbour_lists(xy: np.ndarray, radius: float):
    """Symmetric CSR neighbour lists of sites within planar ``radius``."""
    n = len(xy)
    if n < 2 or radius <= 0:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0)
    pairs = cKDTree(xy).query_pairs(radius, output_type="ndarray")
    both = np.concatenate([pairs, pairs[:, ::-1]]) if pairs.size else np.zeros((0, 2), np.intp)
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    ptr = np.zeros(n + 1, np.int64)
    np.add.at(ptr, both[:, 0] + 1, 1)
    ptr = np.cumsum(ptr)
    idx = both[:, 1].astype(np.int64)
    d = xy[both[:, 0]] - xy[both[:, 1]]
    rho = np.hypot(d[:, 0], d[:, 1])
    return ptr, idx, rho


@dataclass(eq=False)
class ConditionalState:
    """Planar sites, their current z-values and the model.

    The neighbour cache keeps every pair that can ever interact, i.e. pairs
    within the spec's interaction radius in the plane.
    """

    xy: np.ndarray
    z: np.ndarray
    window_z: tuple[float, float]
    spec: MrfModelSpec
    cache_radius: float | None = None
    _nbrs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.xy = np.ascontiguousarray(self.xy, dtype=float).reshape(-1, 2)
        self.z = np.array(self.z, dtype=float).ravel()
        if self.z.size != len(self.xy):
            raise GeometryError("xy and z lengths differ")
        lo, hi = (float(v) for v in self.window_z)
        if not hi > lo:
            raise GeometryError("empty z-window")
        self.window_z = (lo, hi)
        if not self.spec.h < hi - lo:
            raise MrfSpecError("hard core distance must be smaller than the z-window length")
        if np.any((self.z < lo) | (self.z > hi)):
            raise GeometryError("z-values outside the z-window")
        radius = self.spec.interaction_radius
        if self.cache_radius is not None:
            if self.cache_radius < radius:
                raise ValueError("cache radius below the interaction radius")
            radius = self.cache_radius
        self._nbrs = neighbour_lists(self.xy, radius)

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def a(self) -> float:
        return self.window_z[1] - self.window_z[0]

    def with_spec(self, spec: MrfModelSpec) -> "ConditionalState":
        """Same data under another spec, reusing the neighbour cache if it suffices."""
        if spec.interaction_radius <= max(self.spec.interaction_radius, self.cache_radius or 0):
            new = object.__new__(ConditionalState)
            new.xy, new.z, new.window_z, new.spec = self.xy, self.z, self.window_z, spec
            new.cache_radius, new._nbrs = self.cache_radius, self._nbrs
            if not spec.h < self.a:
                raise MrfSpecError("hard core distance must be smaller than the z-window length")
            return new
        return ConditionalState(self.xy, self.z, self.window_z, spec, self.cache_radius)

    def _args(self):
        ptr, idx, rho = self._nbrs
        k1, p1, k2, p2 = self.spec.kernel_args()
        return ptr, idx, rho, float(self.spec.h), k1, p1, k2, p2

    def site_counts(self, z=None):
        """Per-site ``(s1_i, s2_i, hard-core violations_i)`` arrays."""
        z = self.z if z is None else np.asarray(z, float)
        return K.all_site_counts(z, *self._args())

    def pair_counts(self) -> tuple[int, int]:
        s1, s2, _ = self.site_counts()
        return int(s1.sum()) // 2, int(s2.sum()) // 2

    def hard_core_ok(self, z=None) -> bool:
        return not np.any(self.site_counts(z)[2])

    def unnorm_logdensity(self, z=None) -> float:
        s1, s2, bad = self.site_counts(z)
        if np.any(bad):
            return -math.inf
        lg1, lg2 = self.spec.log_gammas
        out = 0.0
        if s1.sum():
            out += (int(s1.sum()) // 2) * lg1
        if s2.sum():
            out += (int(s2.sum()) // 2) * lg2
        return out

    def local_log_ratio(self, i: int, z_new: float) -> float:
        """Log density ratio for moving site i to ``z_new``, from local terms only."""
        ptr, idx, rho, h, k1, p1, k2, p2 = self._args()
        a1, a2, bad = K.site_counts(i, float(z_new), self.z, ptr, idx, rho, h, k1, p1, k2, p2)
        if bad:
            return -math.inf
        b1, b2, _ = K.site_counts(i, self.z[i], self.z, ptr, idx, rho, h, k1, p1, k2, p2)
        lg1, lg2 = self.spec.log_gammas
        out = 0.0
        if a1 != b1:
            out += (a1 - b1) * lg1
        if a2 != b2:
            out += (a2 - b2) * lg2
        return out

    def site_pieces(self, i: int):
        """``(k, l, length)`` arrays describing site i's conditional on ``W_z``."""
        lo, hi = self.window_z
        ptr, idx, rho, h, k1, p1, k2, p2 = self._args()
        cap = 10 * (ptr[i + 1] - ptr[i]) + 2
        ok = np.empty(cap, np.int64)
        ol = np.empty(cap, np.int64)
        ln = np.empty(cap)
        m = K.site_pieces(i, self.z, ptr, idx, rho, h, k1, p1, k2, p2, lo, hi, ok, ol, ln, 0)
        return ok[:m], ol[:m], ln[:m]

    def all_pieces(self, z=None):
        z = self.z if z is None else np.asarray(z, float)
        lo, hi = self.window_z
        return K.all_site_pieces(z, *self._args(), lo, hi)

    def full_conditional_lognorm(self, i: int) -> float:
        """Exact ``log c_i`` by summing the piecewise-constant integrand."""
        k, l, ln = self.site_pieces(i)
        if ln.size == 0:
            raise DegenerateConditionalError(f"site {i}: the whole z-window is forbidden")
        lg1, lg2 = self.spec.log_gammas
        return float(_logsumexp(np.log(ln) + k * lg1 + l * lg2))

    def full_conditional_logdensity(self, i: int, z_candidate: float) -> float:
        ptr, idx, rho, h, k1, p1, k2, p2 = self._args()
        s1, s2, bad = K.site_counts(i, float(z_candidate), self.z, ptr, idx, rho, h, k1, p1, k2, p2)
        lognorm = self.full_conditional_lognorm(i)
        if bad:
            return -math.inf
        lg1, lg2 = self.spec.log_gammas
        return (s1 * lg1 if s1 else 0.0) + (s2 * lg2 if s2 else 0.0) - lognorm


def _logsumexp(a):
    m = np.max(a)
    return m + math.log(np.sum(np.exp(a - m)))


# -- sampler ------------------------------------------------------------------

def _expected_violations(xy, window_z, h, nbrs):
    if h <= 0:
        return 0.0
    ptr, idx, rho = nbrs
    a = window_z[1] - window_z[0]
    close = rho < h
    half = np.sqrt(h * h - rho[close] ** 2)
    return float(np.sum(np.minimum(2 * half / a, 1.0))) / 2.0


def initial_z(xy, window_z, spec: MrfModelSpec, rng, max_attempts: int = 10_000,
              max_expected_violations: float = 2.0) -> np.ndarray:
    """A hard-core-feasible starting z-vector.

    Tries i.i.d. uniform vectors first (up to ``max_attempts``) when the
    expected number of violating pairs is at most ``max_expected_violations``,
    so that a success is likely within a handful of draws. Otherwise, or if
    all attempts fail, points are placed sequentially with per-point rejection.
    """
    gen = as_generator(rng)
    lo, hi = window_z
    n = len(xy)
    if spec.h <= 0 or n < 2:
        return gen.uniform(lo, hi, n)
    state = ConditionalState(xy, np.full(n, lo), window_z, MrfModelSpec(1, h=spec.h))
    ptr, idx, rho = state._nbrs
    if _expected_violations(xy, window_z, spec.h, state._nbrs) <= max_expected_violations:
        for _ in range(max_attempts):
            z = gen.uniform(lo, hi, n)
            if state.hard_core_ok(z):
                return z
    z = np.full(n, np.nan)
    h2 = spec.h ** 2
    for i in range(n):
        nb = slice(ptr[i], ptr[i + 1])
        placed = ~np.isnan(z[idx[nb]])
        zj = z[idx[nb]][placed]
        r2 = rho[nb][placed] ** 2
        for _ in range(max_attempts):
            c = gen.uniform(lo, hi)
            if not np.any(r2 + (c - zj) ** 2 <= h2):
                z[i] = c
                break
        else:
            raise InitializationError(f"could not place site {i} under the hard core")
    return z


@dataclass
class MhResult:
    z: np.ndarray
    accepted: int
    proposals: int
    trace: np.ndarray | None = None

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")


def mh_sample_z(xy, spec: MrfModelSpec, window_z, n_sweeps: int = 100, init=None, rng=None,
                trace_every: int = 0) -> MhResult:
    """Systematic-scan Metropolis-Hastings for the conditional z-model.

    Each sweep visits sites 1..n in order, proposes a uniform z on the
    window and accepts with the full-conditional ratio.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be at least 1")
    gen = as_generator(rng)
    xy = np.ascontiguousarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    z0 = initial_z(xy, window_z, spec, gen) if init is None else np.array(init, float)
    state = ConditionalState(xy, z0, window_z, spec)
    if not state.hard_core_ok():
        raise InitializationError("initial z-vector violates the hard core")
    u_prop = gen.random((n_sweeps, n))
    u_acc = gen.random((n_sweeps, n))
    trace = np.empty((n_sweeps // trace_every if trace_every else 0, n))
    z = state.z.copy()
    lg1, lg2 = spec.log_gammas
    ptr, idx, rho, h, k1, p1, k2, p2 = state._args()
    lo, hi = state.window_z
    acc = K.mh_sweeps(z, ptr, idx, rho, h, k1, p1, k2, p2, lg1, lg2, lo, hi,
                      u_prop, u_acc, int(trace_every), trace)
    return MhResult(z, int(acc), n_sweeps * n, trace if trace_every else None)


def pair_counts(state: ConditionalState) -> tuple[int, int]:
    return state.pair_counts()


def unnorm_logdensity(state: ConditionalState) -> float:
    return state.unnorm_logdensity()


def full_conditional_lognorm(state: ConditionalState, i: int) -> float:
    return state.full_conditional_lognorm(i)


def full_conditional_logdensity(state: ConditionalState, i: int, z_candidate: float) -> float:
    return state.full_conditional_logdensity(i, z_candidate)
