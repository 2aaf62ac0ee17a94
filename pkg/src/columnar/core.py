"""Geometry primitives shared by the rest of the package.

Windows are axis-aligned boxes in micrometres. Point patterns are immutable
``(n, d)`` arrays bound to a window. Interaction regions are the symmetric
neighbourhoods used by the conditional z-models.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Raised for invalid windows, regions or patterns."""


class InsufficientPointsError(GeometryError):
    pass


def _interval(bounds) -> tuple[float, float]:
    lo, hi = (float(b) for b in bounds)
    if not hi - lo > 0:
        raise GeometryError(f"interval {bounds!r} must have positive length")
    return lo, hi


@dataclass(frozen=True)
class Window:
    """Axis-aligned box window, planar (``z=None``) or three-dimensional."""

    x: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", _interval(self.x))
        object.__setattr__(self, "y", _interval(self.y))
        if self.z is not None:
            object.__setattr__(self, "z", _interval(self.z))

    @property
    def dim(self) -> int:
        return 2 if self.z is None else 3

    @property
    def bounds(self) -> np.ndarray:
        rows = [self.x, self.y] + ([self.z] if self.z is not None else [])
        return np.array(rows, dtype=float)

    @property
    def lo(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def sides(self) -> np.ndarray:
        b = self.bounds
        return b[:, 1] - b[:, 0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def xy(self) -> "Window":
        """Planar face ``W_xy``."""
        return Window(self.x, self.y)

    @property
    def z_length(self) -> float:
        if self.z is None:
            raise GeometryError("planar window has no z-interval")
        return self.z[1] - self.z[0]

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        b = self.bounds
        return np.all((pts >= b[:, 0]) & (pts <= b[:, 1]), axis=1)

    def expand(self, margin: float) -> "Window":
        m = float(margin)
        z = None if self.z is None else (self.z[0] - m, self.z[1] + m)
        return Window((self.x[0] - m, self.x[1] + m), (self.y[0] - m, self.y[1] + m), z)

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from each point to the window boundary (0 outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        b = self.bounds
        d = np.minimum(pts - b[:, 0], b[:, 1] - pts)
        return np.clip(d.min(axis=1), 0.0, None)

    def to_dict(self) -> dict:
        out = {"x": list(self.x), "y": list(self.y)}
        if self.z is not None:
            out["z"] = list(self.z)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        try:
            return cls(d["x"], d["y"], d.get("z"))
        except KeyError as exc:
            raise GeometryError(f"window descriptor missing key {exc}") from None

    @classmethod
    def from_sides(cls, *sides: float) -> "Window":
        """Window anchored at the origin with the given side lengths."""
        if len(sides) not in (2, 3):
            raise GeometryError("need 2 or 3 side lengths")
        return cls(*[(0.0, s) for s in sides])


#: Windows with the side lengths of the two reference datasets (micrometres).
L3_WINDOW = Window.from_sides(492.70, 132.03, 407.70)
L5_WINDOW = Window.from_sides(488.40, 138.33, 495.40)


@dataclass(frozen=True, eq=False)
class PointPattern:
    points: np.ndarray
    window: Window

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, self.window.dim)
        if pts.ndim != 2 or pts.shape[1] != self.window.dim:
            raise GeometryError(
                f"points of shape {pts.shape} do not match a {self.window.dim}D window")
        if not np.all(self.window.contains(pts)):
            raise GeometryError("pattern has points outside its window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def intensity(self) -> float:
        return self.n / self.window.volume

    @property
    def xy(self) -> "PointPattern":
        return PointPattern(self.points[:, :2], self.window.xy)

    @property
    def z(self) -> np.ndarray:
        if self.dim != 3:
            raise GeometryError("planar pattern has no z-coordinates")
        return self.points[:, 2]

    def with_z(self, z, window: Window) -> "PointPattern":
        """Attach z-coordinates to a planar pattern."""
        z = np.asarray(z, dtype=float).reshape(-1, 1)
        return PointPattern(np.hstack([self.points[:, :2], z]), window)

    def __eq__(self, other):
        if not isinstance(other, PointPattern):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.points, other.points)


# -- interaction regions ---------------------------------------------------

REGION_KINDS = ("ball", "cylinder", "cylinder_minus_cone", "cylinder_shell")


@dataclass(frozen=True)
class InteractionRegion:
    """Symmetric interaction region centred at the origin.

    ``params`` is ``(r,)`` for a ball, ``(r, t)`` for a cylinder or a cylinder
    minus the hourglass double cone, and ``(r1, t1, r2, t2)`` for the shell
    ``{|dxy| <= r2, t1 < |dz| <= t2}`` left by removing the inner cylinder
    ``c(r1, t1)`` from ``c(r2, t2)`` when ``r2 <= r1``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise GeometryError(f"unknown region kind {self.kind!r}")
        need = {"ball": 1, "cylinder": 2, "cylinder_minus_cone": 2, "cylinder_shell": 4}[self.kind]
        params = tuple(float(p) for p in self.params)
        if len(params) != need:
            raise GeometryError(f"{self.kind} takes {need} parameters, got {len(params)}")
        if not all(p > 0 and math.isfinite(p) for p in params):
            raise GeometryError(f"region parameters must be positive, got {params}")
        if self.kind == "cylinder_shell" and not (params[3] > params[1] and params[2] <= params[0]):
            raise GeometryError("cylinder_shell needs t2 > t1 and r2 <= r1")
        object.__setattr__(self, "params", params)

    @classmethod
    def ball(cls, r):
        return cls("ball", (r,))

    @classmethod
    def cylinder(cls, r, t):
        return cls("cylinder", (r, t))

    @classmethod
    def cylinder_minus_cone(cls, r, t):
        return cls("cylinder_minus_cone", (r, t))

    @classmethod
    def cylinder_shell(cls, r1, t1, r2, t2):
        return cls("cylinder_shell", (r1, t1, r2, t2))

    @property
    def radius(self) -> float:
        """Largest planar offset at which the region is non-empty."""
        if self.kind == "cylinder_shell":
            return self.params[2]
        return self.params[0]

    @property
    def volume(self) -> float:
        p = self.params
        if self.kind == "ball":
            return 4.0 / 3.0 * math.pi * p[0] ** 3
        if self.kind == "cylinder":
            return 2.0 * math.pi * p[0] ** 2 * p[1]
        if self.kind == "cylinder_minus_cone":
            return 4.0 / 3.0 * math.pi * p[0] ** 2 * p[1]
        r1, t1, r2, t2 = p
        return 2.0 * math.pi * r2 ** 2 * (t2 - t1)

    def contains(self, delta) -> np.ndarray | bool:
        """Membership of displacement(s) ``delta`` (shape ``(3,)`` or ``(m, 3)``)."""
        d = np.asarray(delta, dtype=float)
        scalar = d.ndim == 1
        d = np.atleast_2d(d)
        rho = np.hypot(d[:, 0], d[:, 1])
        adz = np.abs(d[:, 2])
        p = self.params
        if self.kind == "ball":
            inside = rho ** 2 + adz ** 2 <= p[0] ** 2
        elif self.kind == "cylinder":
            inside = (rho <= p[0]) & (adz <= p[1])
        elif self.kind == "cylinder_minus_cone":
            r, t = p
            inside = (rho <= r) & (adz <= t) & (rho * t > r * adz)
        else:
            r1, t1, r2, t2 = p
            inside = (rho <= r2) & (adz > t1) & (adz <= t2)
        return bool(inside[0]) if scalar else inside

    def dz_bounds(self, rho: float) -> list[tuple[float, float]]:
        """Sets of ``|dz|`` values in the region at planar offset ``rho``.

        Returned as ``(lo, hi)`` pairs of absolute vertical offsets; endpoint
        openness is ignored since only lengths are used downstream.
        """
        p = self.params
        if self.kind == "ball":
            if rho > p[0]:
                return []
            return [(0.0, math.sqrt(p[0] ** 2 - rho ** 2))]
        if self.kind == "cylinder":
            return [(0.0, p[1])] if rho <= p[0] else []
        if self.kind == "cylinder_minus_cone":
            r, t = p
            return [(0.0, t * rho / r)] if 0 < rho <= r else []
        r1, t1, r2, t2 = p
        return [(t1, t2)] if rho <= r2 else []


def region_contains(region: InteractionRegion, delta) -> bool:
    return region.contains(delta)


def pairwise_min_distance(pattern: PointPattern | np.ndarray) -> float:
    """Smallest distance between two distinct points."""
    pts = pattern.points if isinstance(pattern, PointPattern) else np.asarray(pattern, float)
    if pts.shape[0] < 2:
        raise InsufficientPointsError("need at least two points")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


# -- random streams --------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Streams with different ids are spawned children of the same
    :class:`numpy.random.SeedSequence` and are independent.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()


# -- file formats ----------------------------------------------------------

def format_float(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else str(v)


def write_window(window: Window, path) -> None:
    Path(path).write_text(json.dumps(window.to_dict()) + "\n")


def read_window(path) -> Window:
    with open(path) as fh:
        return Window.from_dict(json.load(fh))


def write_pattern(pattern: PointPattern, path, window_path=None) -> None:
    cols = ["x", "y", "z"][: pattern.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in pattern.points:
            w.writerow([format_float(v) for v in row])
    if window_path is not None:
        write_window(pattern.window, window_path)


def read_pattern(path, window: Window | str | Path) -> PointPattern:
    if not isinstance(window, Window):
        window = read_window(window)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GeometryError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expect = ["x", "y", "z"][: window.dim]
    if header != expect:
        raise GeometryError(f"{path}: header {header} does not match {expect}")
    pts = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return PointPattern(pts.reshape(-1, window.dim), window)


def pattern_from_array(points: Sequence, window: Window) -> PointPattern:
    return PointPattern(np.asarray(points, dtype=float), window)
