"""Global extreme rank length (ERL) envelope tests.

Curves are concatenated summary vectors. At every argument each of the
``s + 1`` curves gets the two-sided rank ``min(1 + #below, 1 + #above)``
(ties share the smallest rank). A curve's ERL key is its rank vector sorted
ascending; a lexicographically smaller key is more extreme. Comparing sorted
rank vectors lexicographically is the same as comparing the vectors of
rank counts ``(#rank 1, #rank 2, ...)`` in reverse lexicographic order,
which is how keys are ordered here.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .core import PointPattern, Window, RngStream, format_float
from .models import (ClusterModelParams, DppSpectralConfig, simulate_csr, simulate_thomas,
                     simulate_dtpp, simulate_plcpp, simulate_dlcpp)
from .mrf import MrfModelSpec, mh_sample_z
from .summaries import ConcatenatedSummary, SummaryFunction2D, concat_for_gerl


class CurveStructureError(ValueError):
    pass


class SimulationFailure(RuntimeError):
    def __init__(self, index: int, seed: int, cause: Exception):
        super().__init__(f"replicate {index} (seed {seed}, stream {index}) failed: {cause!r}")
        self.index, self.seed, self.cause = index, seed, cause


@dataclass(eq=False)
class CurveSet:
    """Data curve plus ``s`` simulated curves sharing one argument layout.

    ``mask`` marks arguments used in the ranking; it is the intersection of
    the validity masks of all curves.
    """

    data_curve: np.ndarray
    sim_curves: np.ndarray
    mask: np.ndarray
    segments: tuple = ()

    def __post_init__(self):
        self.data_curve = np.asarray(self.data_curve, float).ravel()
        self.sim_curves = np.atleast_2d(np.asarray(self.sim_curves, float))
        self.mask = np.asarray(self.mask, bool).ravel()
        m = self.data_curve.size
        if self.sim_curves.shape[1] != m or self.mask.size != m:
            raise CurveStructureError("curves and mask must have equal length")
        if self.sim_curves.shape[0] < 1:
            raise CurveStructureError("need at least one simulated curve")
        if not self.mask.any():
            raise CurveStructureError("no argument is defined for every curve")

    @property
    def s(self) -> int:
        return self.sim_curves.shape[0]

    @classmethod
    def from_summaries(cls, data: ConcatenatedSummary, sims) -> "CurveSet":
        sims = list(sims)
        mask = data.mask.copy()
        for c in sims:
            if c.segments != data.segments:
                raise CurveStructureError("simulated summaries have a different segment layout")
            mask &= c.mask
        return cls(data.values, np.stack([c.values for c in sims]), mask, data.segments)

    def matrix(self) -> np.ndarray:
        """All curves restricted to the mask, data first."""
        return np.vstack([self.data_curve[self.mask], self.sim_curves[:, self.mask]])


def pointwise_ranks(values: np.ndarray) -> np.ndarray:
    """Two-sided ranks of each row among all rows, per column."""
    lo = rankdata(values, method="min", axis=0)
    hi = rankdata(-values, method="min", axis=0)
    return np.minimum(lo, hi).astype(np.int64)


def _rank_counts(ranks: np.ndarray) -> np.ndarray:
    n, m = ranks.shape
    kmax = int(ranks.max())
    flat = (np.arange(n)[:, None] * (kmax + 1) + ranks).ravel()
    return np.bincount(flat, minlength=n * (kmax + 1)).reshape(n, kmax + 1)[:, 1:]


def erl_measure(curves: CurveSet) -> np.ndarray:
    """Extremeness position of every curve (data first).

    Returns ``e`` with ``e[i] = 1 + #{curves strictly more extreme than i}``;
    equal keys share a position.
    """
    counts = _rank_counts(pointwise_ranks(curves.matrix()))
    order = np.lexsort((-counts).T[::-1])
    sc = counts[order]
    new = np.ones(len(order), bool)
    new[1:] = np.any(sc[1:] != sc[:-1], axis=1)
    start = np.maximum.accumulate(np.where(new, np.arange(len(order)), 0))
    pos = np.empty(len(order), np.int64)
    pos[order] = start + 1
    return pos


def erl_sorted_keys(curves: CurveSet) -> np.ndarray:
    """The ERL keys themselves: each curve's pointwise ranks sorted ascending."""
    return np.sort(pointwise_ranks(curves.matrix()), axis=1)


@dataclass
class EnvelopeResult:
    lower: np.ndarray
    upper: np.ndarray
    data: np.ndarray
    mask: np.ndarray
    p_value: float
    alpha: float
    s: int
    above: np.ndarray
    below: np.ndarray
    segments: tuple = ()
    args: dict = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.p_value <= self.alpha

    def segment_flags(self) -> dict:
        out = {}
        for name, a, b in self.segments:
            out[name] = dict(above=int(self.above[a:b].sum()), below=int(self.below[a:b].sum()))
        return out

    def to_dict(self) -> dict:
        return dict(p_value=self.p_value, alpha=self.alpha, s=self.s, rejected=self.rejected,
                    n_args=int(self.mask.size), n_used=int(self.mask.sum()),
                    segments=[list(s) for s in self.segments], deviations=self.segment_flags())

    def write(self, out_dir) -> list[Path]:
        """``envelope.json`` plus one ``envelope_<segment>.csv`` per segment."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = [out_dir / "envelope.json"]
        files[0].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        for name, a, b in self.segments:
            path = out_dir / f"envelope_{name}.csv"
            args = self.args.get(name)
            two_d = args is not None and len(args) == 2
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow((["r", "t"] if two_d else ["r"]) + ["data", "lower", "upper", "flag"])
                if two_d:
                    rr, tt = np.meshgrid(args[0], args[1], indexing="ij")
                    coords = np.column_stack([rr.ravel(), tt.ravel()])
                elif args is not None:
                    coords = np.asarray(args[0], float)[:, None]
                else:
                    coords = np.arange(b - a, dtype=float)[:, None]
                for k, j in enumerate(range(a, b)):
                    flag = 1 if self.above[j] else (-1 if self.below[j] else 0)
                    vals = [self.data[j], self.lower[j], self.upper[j]]
                    w.writerow([format_float(c) for c in coords[k]] + [format_float(v) for v in vals] + [flag])
            files.append(path)
        return files


def gerl_test(curves: CurveSet, alpha: float = 0.05) -> EnvelopeResult:
    """GERL p-value and envelope.

    ``p = #{curves at least as extreme as the data} / (s + 1)``. The envelope
    is the pointwise range of the curves left after removing the
    ``floor(alpha (s + 1))`` most extreme ones; curves tied with the last
    removed one are kept.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    pos = erl_measure(curves)
    n = pos.size
    p = float(np.sum(pos <= pos[0])) / n
    k = int(math.floor(alpha * n))
    crit = np.sort(pos)[k] if k < n else n + 1
    keep = pos >= crit
    allc = np.vstack([curves.data_curve, curves.sim_curves])[keep]
    lower = np.full(curves.data_curve.size, np.nan)
    upper = np.full(curves.data_curve.size, np.nan)
    if keep.any():
        lower[curves.mask] = allc[:, curves.mask].min(axis=0)
        upper[curves.mask] = allc[:, curves.mask].max(axis=0)
    data = curves.data_curve
    above = curves.mask & (data > upper)
    below = curves.mask & (data < lower)
    return EnvelopeResult(lower, upper, data.copy(), curves.mask.copy(), p, alpha, curves.s,
                          above, below, tuple(curves.segments))


# -- fitted model handles and the simulation driver -----------------------------

HANDLE_KINDS = ("csr", "thomas", "dtpp", "plcpp", "dlcpp", "mrf")


@dataclass(frozen=True)
class ModelHandle:
    """A fitted model that can simulate replicates on a window.

    ``csr`` takes ``lam``; cluster kinds take ``kappa``, ``alpha_a`` and
    ``sigma``; ``mrf`` takes a planar cluster model under ``planar`` (with
    ``kind`` ``thomas`` or ``dtpp``), an MRF spec under ``spec`` and
    ``sweeps``.
    """

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in HANDLE_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "mrf":
            MrfModelSpec.from_dict(self.params["spec"])
            if self.params["planar"]["kind"] not in ("thomas", "dtpp"):
                raise ValueError("planar model must be thomas or dtpp")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelHandle":
        return cls(d["kind"], d["params"])

    @staticmethod
    def _cluster(p, kind):
        return ClusterModelParams(p["kappa"], p["alpha_a"], p["sigma"],
                                  "jinc_dpp" if kind in ("dtpp", "dlcpp") else "poisson")

    def simulate(self, window: Window, rng) -> PointPattern:
        from .core import as_generator

        gen = as_generator(rng)
        k, p = self.kind, self.params
        if k == "csr":
            return simulate_csr(window, p["lam"], gen)
        if k == "thomas":
            return simulate_thomas(window.xy if window.dim == 3 else window, self._cluster(p, k), gen)
        if k == "dtpp":
            return simulate_dtpp(window.xy if window.dim == 3 else window, self._cluster(p, k),
                                 DppSpectralConfig(), gen)
        if k == "plcpp":
            return simulate_plcpp(window, self._cluster(p, k), gen)
        if k == "dlcpp":
            return simulate_dlcpp(window, self._cluster(p, k), DppSpectralConfig(), gen)
        planar = ModelHandle(p["planar"]["kind"], p["planar"]).simulate(window.xy, gen)
        spec = MrfModelSpec.from_dict(p["spec"])
        res = mh_sample_z(planar.points, spec, window.z, int(p.get("sweeps", 100)), rng=gen)
        return PointPattern(np.column_stack([planar.points, res.z]), window)


def _replicate(args):
    model, window, seed, index, r_grid, cylk_grids = args
    try:
        pat = model.simulate(window, RngStream(seed, index))
        return concat_for_gerl(pat, r_grid, cylk_grids)
    except Exception as exc:  # noqa: BLE001 - re-raised with replay info
        raise SimulationFailure(index, seed, exc) from exc


def simulate_curves(model: ModelHandle, window: Window, s: int, seed: int, r_grid=None,
                    cylk_grids=None, workers: int = 1):
    """Concatenated summaries of ``s`` replicates; replicate i uses stream i."""
    jobs = [(model, window, int(seed), i, r_grid, cylk_grids) for i in range(s)]
    if workers <= 1:
        return [_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_replicate, jobs, chunksize=max(1, s // (4 * workers))))


def _segment_args(summary: ConcatenatedSummary) -> dict:
    out = {}
    for (name, _, _), comp in zip(summary.segments, summary.components):
        if isinstance(comp, SummaryFunction2D):
            out[name] = (comp.r_args, comp.t_args)
        else:
            out[name] = (comp.args,)
    return out


def run_envelope_pipeline(data: PointPattern, model: ModelHandle, s: int, seed: int,
                          alpha: float = 0.05, r_grid=None, cylk_grids=None,
                          workers: int = 1) -> EnvelopeResult:
    """Simulate ``s`` replicates from ``model`` and run the GERL test on the data."""
    if s < 1:
        raise ValueError("need at least one simulation")
    data_curve = concat_for_gerl(data, r_grid, cylk_grids)
    sims = simulate_curves(model, data.window, s, seed, r_grid, cylk_grids, workers)
    res = gerl_test(CurveSet.from_summaries(data_curve, sims), alpha)
    res.args = _segment_args(data_curve)
    return res
