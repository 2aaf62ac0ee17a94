"""End-to-end analysis: CSR, then Thomas/PLCPP, DTPP/DLCPP and the z-models.

Every stage writes its fits and envelope files into its own directory and
records them, with a content hash, in ``manifest.json``. Stage seeds are
derived from the master seed as the first 8 bytes (big endian) of
``sha256(f"{seed}:{stage}")`` so each stage can be replayed alone.
"""
from __future__ import annotations

import hashlib
import json
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import PointPattern, read_pattern, read_window
from .envelopes import ModelHandle, run_envelope_pipeline
from .fitting import (ContrastConfig, MpleFitConfig, fit_dtpp, fit_thomas, mple_fit)

STAGES = ("csr", "plcpp", "dlcpp", "mrf")


class ConfigError(ValueError):
    pass


def stage_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


@dataclass
class PipelineConfig:
    """Inputs, stage list and per-stage settings.

    ``mple_models`` lists the z-models to fit; ``theta_grids`` maps a model
    id (as a string) to its grid dict. ``mrf_envelopes`` is ``"best"`` (only
    the LP-best model) or ``"all"``.
    """

    data: str
    window: str
    out_dir: str
    seed: int = 0
    stages: tuple = STAGES
    sims: int = 499
    alpha: float = 0.05
    sweeps: int = 100
    contrast: dict = field(default_factory=dict)
    mple_models: tuple = (1, 2, 3, 4, 5)
    theta_grids: dict = field(default_factory=dict)
    gamma_bounds: tuple = ((-12.0, 12.0), (-12.0, 12.0))
    mrf_envelopes: str = "best"
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        missing = {"data", "window", "out_dir"} - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        d = dict(d)
        if base is not None:
            for k in ("data", "window", "out_dir"):
                if not Path(d[k]).is_absolute():
                    d[k] = str(base / d[k])
        for k in ("stages", "mple_models"):
            if k in d:
                d[k] = tuple(d[k])
        if "gamma_bounds" in d:
            d["gamma_bounds"] = tuple(tuple(b) for b in d["gamma_bounds"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=_json_default))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def contrast_config(self, target: str) -> ContrastConfig:
        return ContrastConfig(**{**self.contrast, "target": target})

    def mple_config(self, model_id: int) -> MpleFitConfig:
        grids = self.theta_grids.get(str(model_id), self.theta_grids.get(model_id, {}))
        return MpleFitConfig(theta_grids=grids, gamma_bounds=self.gamma_bounds)

    def validate(self) -> None:
        for k in ("data", "window"):
            if not Path(getattr(self, k)).is_file():
                raise ConfigError(f"{k} file not found: {getattr(self, k)}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad or not self.stages:
            raise ConfigError(f"stages must be a non-empty subset of {STAGES}, got {self.stages}")
        if int(self.sims) < 1:
            raise ConfigError("sims must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if int(self.sweeps) < 1:
            raise ConfigError("sweeps must be positive")
        if self.mrf_envelopes not in ("best", "all"):
            raise ConfigError("mrf_envelopes must be 'best' or 'all'")
        if any(m not in (1, 2, 3, 4, 5) for m in self.mple_models) or not self.mple_models:
            raise ConfigError("mple_models must be a non-empty subset of 1..5")
        try:
            self.contrast_config("K")
            for m in self.mple_models:
                self.mple_config(m)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid stage config: {exc}") from exc


@dataclass
class PipelineOutcome:
    status: int
    out_dir: Path
    summary: dict
    manifest: dict


class _Recorder:
    def __init__(self, root: Path, cfg_hash: str):
        self.root = root
        self.cfg_hash = cfg_hash
        self.entries = []

    def add(self, path: Path, stage: str, seed):
        self.entries.append(dict(path=str(path.relative_to(self.root)), stage=stage, seed=seed,
                                 config_hash=self.cfg_hash))

    def manifest(self) -> dict:
        files = [dict(e, sha256=sha256_file(self.root / e["path"])) for e in self.entries]
        return dict(config_hash=self.cfg_hash, files=files)


def _envelope(stage_dir, data, handle, cfg, seed, rec, stage):
    res = run_envelope_pipeline(data, handle, cfg.sims, seed, cfg.alpha, workers=cfg.threads)
    for p in res.write(stage_dir):
        rec.add(p, stage, seed)
    rec.add(_dump(handle.to_dict(), stage_dir / "model.json"), stage, seed)
    return res


def _planar(data: PointPattern) -> PointPattern:
    return PointPattern(data.points[:, :2], data.window.xy)


def cmd_pipeline(cfg: PipelineConfig) -> PipelineOutcome:
    """Run the configured stages in order.

    Raises :class:`ConfigError` before writing anything if the input is
    unusable. A failing stage leaves its partial outputs, a ``FAILED`` marker
    naming the stage, and re-raises.
    """
    cfg.validate()
    window = read_window(cfg.window)
    data = read_pattern(cfg.data, window)
    if data.n < 2:
        raise ConfigError(f"{cfg.data}: need at least two points, found {data.n}")
    if ("mrf" in cfg.stages or "plcpp" in cfg.stages or "dlcpp" in cfg.stages) and data.dim != 3:
        raise ConfigError("cluster and z-model stages need 3D data")

    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "FAILED").unlink(missing_ok=True)
    rec = _Recorder(root, cfg.hash())
    rec.add(_dump(cfg.to_dict(), root / "config.json"), "config", cfg.seed)
    summary = dict(stages={}, config_hash=rec.cfg_hash)
    dtpp_fit = None
    stage = None
    try:
        for stage in cfg.stages:
            seed = stage_seed(cfg.seed, stage)
            sdir = root / stage
            sdir.mkdir(exist_ok=True)
            info = dict(seed=seed)
            if stage == "csr":
                lam = data.n / window.volume
                handle = ModelHandle("csr", {"lam": lam})
                info["intensity"] = lam
                res = _envelope(sdir, data, handle, cfg, seed, rec, stage)
                info.update(p_value=res.p_value, rejected=res.rejected)
            elif stage == "plcpp":
                fit = fit_thomas(_planar(data), cfg.contrast_config("K"))
                rec.add(_dump(fit.to_dict(), sdir / "fit.json"), stage, seed)
                handle = ModelHandle("plcpp", dict(kappa=fit.kappa, alpha_a=fit.alpha_a, sigma=fit.sigma))
                res = _envelope(sdir, data, handle, cfg, seed, rec, stage)
                info.update(fit=handle.params, p_value=res.p_value, rejected=res.rejected)
            elif stage == "dlcpp":
                dtpp_fit = fit_dtpp(_planar(data), cfg.contrast_config("pcf"))
                rec.add(_dump(dtpp_fit.to_dict(), sdir / "fit.json"), stage, seed)
                handle = ModelHandle("dlcpp", dict(kappa=dtpp_fit.kappa, alpha_a=dtpp_fit.alpha_a,
                                                   sigma=dtpp_fit.sigma))
                res = _envelope(sdir, data, handle, cfg, seed, rec, stage)
                info.update(fit=handle.params, p_value=res.p_value, rejected=res.rejected)
            elif stage == "mrf":
                if dtpp_fit is None:
                    dtpp_fit = fit_dtpp(_planar(data), cfg.contrast_config("pcf"))
                    rec.add(_dump(dtpp_fit.to_dict(), sdir / "planar_fit.json"), stage, seed)
                planar = dict(kind="dtpp", kappa=dtpp_fit.kappa, alpha_a=dtpp_fit.alpha_a,
                              sigma=dtpp_fit.sigma)
                fits = {}
                for m in cfg.mple_models:
                    f = mple_fit(data.points[:, :2], data.points[:, 2], window.z, m, cfg.mple_config(m))
                    fits[m] = f
                    rec.add(_dump(f.to_dict(), sdir / f"mple_model{m}.json"), stage, seed)
                # highest LP; ties go to the smaller model id
                best = max(sorted(fits), key=lambda m: (fits[m].lp, -m))
                info.update(lp={str(m): fits[m].lp for m in fits}, best_model=best, envelopes={})
                chosen = [best] if cfg.mrf_envelopes == "best" else sorted(fits)
                for m in chosen:
                    handle = ModelHandle("mrf", dict(planar=planar, spec=fits[m].spec.to_dict(),
                                                     sweeps=cfg.sweeps))
                    res = _envelope(sdir / f"model{m}", data, handle, cfg, seed, rec, stage)
                    info["envelopes"][str(m)] = dict(p_value=res.p_value, rejected=res.rejected)
                info.update(p_value=info["envelopes"][str(best)]["p_value"],
                            rejected=info["envelopes"][str(best)]["rejected"])
            summary["stages"][stage] = info
    except Exception:
        (root / "FAILED").write_text(f"stage: {stage}\n{traceback.format_exc(limit=3)}")
        _dump(rec.manifest(), root / "manifest.json")
        raise
    rec.add(_dump(summary, root / "summary.json"), "summary", cfg.seed)
    manifest = rec.manifest()
    _dump(manifest, root / "manifest.json")
    final = summary["stages"][cfg.stages[-1]]
    return PipelineOutcome(4 if final.get("rejected") else 0, root, summary, manifest)
