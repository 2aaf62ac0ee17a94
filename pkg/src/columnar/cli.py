"""Command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 envelope rejection (``pipeline --fail-on-reject`` only).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import (GeometryError, PointPattern, Window, read_pattern, read_window,
                   write_pattern, RngStream, format_float)
from .envelopes import ModelHandle, SimulationFailure, CurveStructureError, run_envelope_pipeline
from .fitting import (ContrastConfig, DataRangeError, MpleFitConfig, NoMpleError, NumericalError,
                      fit_dtpp, fit_thomas, mple_fit)
from .models import DppConfigError
from .mrf import (DegenerateConditionalError, InitializationError, MrfModelSpec, MrfSpecError,
                  mh_sample_z)
from .pipeline import ConfigError, PipelineConfig, cmd_pipeline, _dump
from .summaries import (SummaryRangeError, UndefinedSummaryError, default_r_grid,
                        default_cylk_grids, k_est, l_est, pcf_est, g_nn_est, f_est, j_from,
                        cylk_est, write_summaries_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REJECT = 0, 2, 3, 4

NUMERIC_ERRORS = (NumericalError, DataRangeError, NoMpleError, DegenerateConditionalError,
                  InitializationError, SimulationFailure, DppConfigError, UndefinedSummaryError,
                  np.linalg.LinAlgError, FloatingPointError)
CONFIG_ERRORS = (ConfigError, GeometryError, MrfSpecError, SummaryRangeError, CurveStructureError,
                 OSError, json.JSONDecodeError, KeyError, ValueError, TypeError)


def _load_json(arg: str):
    """Inline JSON or a path to a JSON file."""
    p = Path(arg)
    if p.is_file():
        return json.loads(p.read_text())
    try:
        return json.loads(arg)
    except json.JSONDecodeError:
        raise ConfigError(f"{arg}: neither a JSON file nor inline JSON") from None


def _window(arg) -> Window:
    if not Path(arg).is_file():
        raise ConfigError(f"window file not found: {arg}")
    return read_window(arg)


def _pattern(path, window) -> PointPattern:
    if not Path(path).is_file():
        raise ConfigError(f"data file not found: {path}")
    return read_pattern(path, window)


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(a) -> int:
    window = _window(a.window)
    handle = ModelHandle.from_dict(_load_json(a.model))
    pat = handle.simulate(window, RngStream(a.seed, 0))
    write_pattern(pat, a.out)
    return EXIT_OK


def cmd_summaries(a) -> int:
    window = _window(a.window)
    pat = _pattern(a.data, window)
    if pat.n < 2:
        raise ConfigError(f"{a.data}: need at least two points")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    r = default_r_grid(window, a.n_args)
    F, G = f_est(pat, r), g_nn_est(pat, r)
    one = [k_est(pat, r), l_est(pat, r), l_est(pat, r, centred=True), pcf_est(pat, r), G, F,
           j_from(F, G)]
    write_summaries_csv(one, out / "summaries_1d.csv")
    if pat.dim == 3:
        rg, tg = default_cylk_grids(window, a.n_cylk)
        write_summaries_csv([cylk_est(pat, rg, tg)], out / "cylk.csv")
    return EXIT_OK


def cmd_fit(a) -> int:
    window = _window(a.window)
    pat = _pattern(a.data, window)
    cfg = _load_json(a.config) if a.config else {}
    if a.method == "mincon":
        if a.model not in ("thomas", "dtpp"):
            raise ConfigError("mincon fits take --model thomas or dtpp")
        target = "K" if a.model == "thomas" else "pcf"
        ccfg = ContrastConfig(**{**cfg, "target": target})
        planar = pat if pat.dim == 2 else PointPattern(pat.points[:, :2], window.xy)
        fit = fit_thomas(planar, ccfg) if a.model == "thomas" else fit_dtpp(planar, ccfg)
        out = dict(method="mincon", model=a.model, estimates=dict(kappa=fit.kappa, sigma=fit.sigma,
                   alpha_a=fit.alpha_a), objective=fit.contrast, at_bound=fit.at_bound,
                   diagnostics=fit.diagnostics, config=ccfg.to_dict())
    else:
        try:
            model_id = int(a.model)
        except ValueError:
            raise ConfigError("mple fits take --model 1..5") from None
        if pat.dim != 3:
            raise ConfigError("mple fits need 3D data")
        mcfg = MpleFitConfig(**cfg)
        fit = mple_fit(pat.points[:, :2], pat.points[:, 2], window.z, model_id, mcfg)
        out = dict(method="mple", model=model_id, estimates=fit.spec.to_dict(), objective=fit.lp,
                   at_bound=fit.at_bound, diagnostics=fit.diagnostics, config=mcfg.to_dict())
    _dump(out, a.out)
    return EXIT_OK


def cmd_mrf_sample(a) -> int:
    window = _window(a.window)
    xy = _pattern(a.xy, window.xy).points
    spec = MrfModelSpec.from_dict(_load_json(a.spec))
    res = mh_sample_z(xy, spec, window.z, a.sweeps, rng=RngStream(a.seed, 0))
    write_pattern(PointPattern(np.column_stack([xy, res.z]), window), a.out)
    return EXIT_OK


def cmd_envelope(a) -> int:
    window = _window(a.window)
    pat = _pattern(a.data, window)
    d = _load_json(a.model)
    handle = ModelHandle.from_dict(d.get("handle", d))
    res = run_envelope_pipeline(pat, handle, a.sims, a.seed, a.alpha, workers=a.threads or 1)
    res.write(a.out)
    return EXIT_OK


def cmd_pipeline_cli(a) -> int:
    cfg = PipelineConfig.load(a.config)
    if a.threads is not None:
        cfg.threads = a.threads
    outcome = cmd_pipeline(cfg)
    for name, info in outcome.summary["stages"].items():
        extra = f" best_model={info['best_model']}" if "best_model" in info else ""
        print(f"{name}: p={format_float(info['p_value'])}{extra}")
    if a.fail_on_reject and outcome.status == EXIT_REJECT:
        return EXIT_REJECT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="columnar", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes for replicate simulation (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a pattern from a model handle")
    s.add_argument("--model", required=True,
                   help='model handle JSON (file or inline), e.g. {"kind": "csr", "params": {"lam": 2e-5}}')
    s.add_argument("--window", required=True, help="window JSON file")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("summaries", help="write K, L, pcf, G, F, J and cylindrical K estimates")
    s.add_argument("--data", required=True, help="pattern CSV with header x,y[,z]")
    s.add_argument("--window", required=True, help="window JSON file")
    s.add_argument("--n-args", type=int, default=4096, help="arguments per 1D summary")
    s.add_argument("--n-cylk", type=int, default=64, help="r and t grid size for cylindrical K")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_summaries)

    s = sub.add_parser("fit", help="minimum-contrast or pseudo-likelihood fit")
    s.add_argument("--method", choices=("mincon", "mple"), required=True)
    s.add_argument("--model", required=True, help="thomas or dtpp (mincon); 1..5 (mple)")
    s.add_argument("--data", required=True, help="pattern CSV")
    s.add_argument("--window", required=True, help="window JSON file")
    s.add_argument("--config", help="ContrastConfig or MpleFitConfig fields as JSON")
    s.add_argument("--out", required=True, help="output JSON")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("mrf-sample", help="sample z given xy by Metropolis-Hastings")
    s.add_argument("--xy", required=True, help="planar CSV with header x,y")
    s.add_argument("--window", required=True, help="3D window JSON (supplies the z-range)")
    s.add_argument("--spec", required=True, help="MrfModelSpec JSON (file or inline)")
    s.add_argument("--sweeps", type=int, default=100, help="systematic sweeps (default 100)")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="output CSV with header x,y,z")
    s.set_defaults(func=cmd_mrf_sample)

    s = sub.add_parser("envelope", help="GERL envelope test against a fitted model",
                       description="Memory use is about (sims + 1) x 20480 doubles.")
    s.add_argument("--data", required=True, help="pattern CSV")
    s.add_argument("--window", required=True, help="window JSON file")
    s.add_argument("--model", required=True, help="model handle JSON (file or inline)")
    s.add_argument("--sims", type=int, default=499, help="number of simulations (9999 for final runs)")
    s.add_argument("--alpha", type=float, default=0.05, help="envelope level")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_envelope)

    s = sub.add_parser("pipeline", help="run the staged analysis from a JSON config")
    s.add_argument("--config", required=True, help="PipelineConfig JSON file")
    s.add_argument("--fail-on-reject", action="store_true",
                   help="exit with status 4 if the final stage's envelope rejects")
    s.set_defaults(func=cmd_pipeline_cli)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    if a.threads is not None and a.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return a.func(a)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
