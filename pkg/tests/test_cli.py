import json

import numpy as np
import pytest

from columnar.cli import main
from columnar.core import PointPattern, Window, read_pattern, write_pattern, write_window
from columnar.mrf import FITTED_L3
from columnar.pipeline import ConfigError, PipelineConfig, cmd_pipeline, sha256_file, stage_seed

W = Window.from_sides(90.0, 80.0, 100.0)


@pytest.fixture
def ws(tmp_path):
    write_window(W, tmp_path / "w.json")
    rc = main(["simulate", "--model", '{"kind": "csr", "params": {"lam": 1e-4}}',
               "--window", str(tmp_path / "w.json"), "--seed", "5", "--out", str(tmp_path / "d.csv")])
    assert rc == 0
    return tmp_path


def _config(ws, out="out", **kw):
    d = dict(data="d.csv", window="w.json", out_dir=out, seed=7, stages=["csr"], sims=9)
    d.update(kw)
    (ws / "cfg.json").write_text(json.dumps(d))
    return ws / "cfg.json"


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "summaries", "fit", "mrf-sample", "envelope", "pipeline"):
        assert cmd in out


def test_simulate_is_reproducible(ws):
    rc = main(["simulate", "--model", '{"kind": "csr", "params": {"lam": 1e-4}}',
               "--window", str(ws / "w.json"), "--seed", "5", "--out", str(ws / "d2.csv")])
    assert rc == 0
    assert (ws / "d.csv").read_bytes() == (ws / "d2.csv").read_bytes()


def test_summaries_command(ws):
    rc = main(["summaries", "--data", str(ws / "d.csv"), "--window", str(ws / "w.json"),
               "--n-args", "32", "--n-cylk", "8", "--out", str(ws / "s")])
    assert rc == 0
    assert (ws / "s" / "summaries_1d.csv").read_text().startswith("name,r,value,defined")
    assert len((ws / "s" / "cylk.csv").read_text().splitlines()) == 1 + 64


def test_fit_commands(ws):
    rc = main(["fit", "--method", "mincon", "--model", "thomas", "--data", str(ws / "d.csv"),
               "--window", str(ws / "w.json"), "--config", '{"n_grid": 64}', "--out", str(ws / "f.json")])
    assert rc == 0
    fit = json.loads((ws / "f.json").read_text())
    assert set(fit["estimates"]) == {"kappa", "sigma", "alpha_a"}
    rc = main(["fit", "--method", "mple", "--model", "3", "--data", str(ws / "d.csv"),
               "--window", str(ws / "w.json"), "--config",
               '{"theta_grids": {"r": [20.0, 30.0], "t": [10.0, 20.0]}}', "--out", str(ws / "m.json")])
    assert rc == 0
    assert json.loads((ws / "m.json").read_text())["estimates"]["model_id"] == 3


def test_mrf_sample_command(ws):
    pat = read_pattern(ws / "d.csv", W)
    xy = ws / "xy.csv"
    write_pattern(PointPattern(pat.points[:, :2], W.xy), xy)
    spec = ws / "spec.json"
    spec.write_text(json.dumps(FITTED_L3.to_dict()))
    args = ["mrf-sample", "--xy", str(xy), "--window", str(ws / "w.json"), "--spec", str(spec),
            "--sweeps", "5", "--seed", "1", "--out"]
    assert main(args + [str(ws / "z1.csv")]) == 0
    assert main(args + [str(ws / "z2.csv")]) == 0
    assert (ws / "z1.csv").read_bytes() == (ws / "z2.csv").read_bytes()
    z = read_pattern(ws / "z1.csv", W)
    np.testing.assert_array_equal(z.points[:, :2], pat.points[:, :2])


def test_envelope_command(ws):
    rc = main(["envelope", "--data", str(ws / "d.csv"), "--window", str(ws / "w.json"),
               "--model", '{"kind": "csr", "params": {"lam": 1e-4}}', "--sims", "4",
               "--seed", "2", "--out", str(ws / "env")])
    assert rc == 0
    res = json.loads((ws / "env" / "envelope.json").read_text())
    assert res["p_value"] in [k / 5 for k in range(1, 6)]
    assert sorted(p.name for p in (ws / "env").iterdir()) == [
        "envelope.json", "envelope_F.csv", "envelope_G.csv", "envelope_J.csv",
        "envelope_L.csv", "envelope_cylK.csv"]


def test_empty_input_is_clean_error(ws):
    (ws / "empty.csv").write_text("")
    cfg = _config(ws, data="empty.csv")
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert not (ws / "out").exists()
    (ws / "header.csv").write_text("x,y,z\n")
    cfg = _config(ws, data="header.csv")
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert not (ws / "out").exists()


def test_missing_files_are_config_errors(ws):
    cfg = _config(ws, window="nope.json")
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert main(["envelope", "--data", str(ws / "d.csv"), "--window", str(ws / "nope.json"),
                 "--model", '{"kind": "csr", "params": {"lam": 1e-4}}', "--out", str(ws / "e")]) == 2
    with pytest.raises(ConfigError):
        PipelineConfig.load(_config(ws, stages=["bogus"]))
    with pytest.raises(ConfigError):
        PipelineConfig.load(_config(ws, sims=0))


def test_pipeline_manifest_and_replay(ws):
    cfg = _config(ws)
    assert main(["pipeline", "--config", str(cfg)]) == 0
    root = ws / "out"
    manifest = json.loads((root / "manifest.json").read_text())
    listed = {f["path"] for f in manifest["files"]}
    on_disk = {str(p.relative_to(root)) for p in root.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk
    for f in manifest["files"]:
        assert f["sha256"] == sha256_file(root / f["path"])
    assert {f["seed"] for f in manifest["files"] if f["stage"] == "csr"} == {stage_seed(7, "csr")}
    first = {p: (root / p).read_bytes() for p in listed}
    assert main(["pipeline", "--config", str(cfg)]) == 0
    assert {p: (root / p).read_bytes() for p in listed} == first


def test_stage_failure_leaves_marker(ws):
    cfg = PipelineConfig.load(_config(ws, stages=["csr", "mrf"], mple_models=[2],
                                      theta_grids={"2": {"r": [1e-3]}}))
    with pytest.raises(Exception):
        cmd_pipeline(cfg)
    root = ws / "out"
    assert (root / "FAILED").read_text().startswith("stage: mrf")
    assert (root / "csr" / "envelope.json").is_file()
    assert (root / "manifest.json").is_file()
    cfg_path = _config(ws, out="out2", stages=["mrf"], mple_models=[2], theta_grids={"2": {"r": [1e-3]}})
    assert main(["pipeline", "--config", str(cfg_path)]) == 3


def test_fail_on_reject_exit_code(ws):
    # clustered data tested against CSR
    rc = main(["simulate", "--model", '{"kind": "plcpp", "params": {"kappa": 0.002, "alpha_a": 8, "sigma": 1.5}}',
               "--window", str(ws / "w.json"), "--seed", "3", "--out", str(ws / "c.csv")])
    assert rc == 0
    cfg = _config(ws, data="c.csv", out="rej", sims=19)
    assert main(["pipeline", "--config", str(cfg), "--fail-on-reject"]) == 4
    assert main(["pipeline", "--config", str(cfg)]) == 0
