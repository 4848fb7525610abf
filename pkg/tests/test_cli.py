import csv
import json

import numpy as np
import pytest

from erdm.cli import main
from erdm.config_io import RunConfig, read_array
from erdm.schedule import NoiseSchedule

TINY = ['system.kind="ou"', "system.dim=2", "system.dt=0.3", "system.stride=1", "system.burn_in=5",
        "data.n_train_traj=2", "data.train_length=300", "data.n_test_traj=3", "data.test_length=9",
        "model.hidden=[8]", "training.steps=20", "training.batch_size=16", "training.warmup_steps=2",
        'init.kind="persistence"', "baseline.n_steps=3"]


def run(*args, extra=()):
    argv = list(args)
    for s in list(TINY) + list(extra):
        argv += ["--set", s]
    return main(argv)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", "--out", str(root / "data")) == 0
    assert run("train", "--data", str(root / "data"), "--out", str(root / "erdm")) == 0
    assert run("train", "--data", str(root / "data"), "--out", str(root / "edm"), extra=['model.kind="edm"']) == 0
    return root


def _forecast(root, out, *flags, extra=()):
    return run("forecast", "--data", str(root / "data"), "--checkpoint", str(root / "erdm" / "checkpoint.bin"),
               "--out", str(out), "--members", "4", "--horizon", "8", *flags, extra=extra)


def test_generate_outputs(workdir):
    header, train = read_array(workdir / "data" / "train.bin")
    assert train.shape == (2, 300, 2) and header["channels"] == ["x0", "x1"]
    saved = json.loads((workdir / "data" / "config.json").read_text())
    assert RunConfig.from_dict(saved).hash == header["config_hash"]


def test_train_outputs(workdir):
    lines = (workdir / "erdm" / "train_log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr,grad_norm"
    assert (workdir / "edm" / "checkpoint.bin").exists()


def test_forecast_is_bit_reproducible(workdir, tmp_path):
    assert _forecast(workdir, tmp_path / "a", "--seed", "7") == 0
    assert _forecast(workdir, tmp_path / "b", "--seed", "7") == 0
    a = (tmp_path / "a" / "forecast.bin").read_bytes()
    assert a == (tmp_path / "b" / "forecast.bin").read_bytes()
    header, fc = read_array(tmp_path / "a" / "forecast.bin")
    assert fc.shape == (3, 4, 8, 2) and np.all(np.isfinite(fc))
    assert header["member_seeds"][2] == [7, 2]
    assert _forecast(workdir, tmp_path / "c", "--seed", "8") == 0
    assert (tmp_path / "c" / "forecast.bin").read_bytes() != a


def test_trace_rows(workdir, tmp_path):
    assert _forecast(workdir, tmp_path / "t", "--trace") == 0
    with open(tmp_path / "t" / "forecast_trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["iteration", "t_cur", "n_clean"] and len(rows[0]) == 9
    body = rows[1:]
    assert len(body) > 8
    for r in body:
        sig = [float(x) for x in r[3:]]
        assert sig == sorted(sig)
        np.testing.assert_allclose(sig, NoiseSchedule().sigma_vec(float(r[1])), rtol=1e-12)


def test_baseline_forecast_and_evaluate(workdir, tmp_path):
    out = tmp_path / "f"
    assert _forecast(workdir, out) == 0
    assert run("forecast", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "edm" / "checkpoint.bin"),
               "--out", str(out), "--members", "4", "--horizon", "8", "--name", "base",
               extra=['model.kind="edm"']) == 0
    assert run("evaluate", str(out / "forecast.bin"), str(out / "base.bin"), "--data", str(workdir / "data"),
               "--baseline", "base", "--out", str(tmp_path / "ev")) == 0
    with open(tmp_path / "ev" / "forecast_metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["lead", "crps", "rmse", "spread", "ssr", "crpss_vs_base"]
    assert [int(r["lead"]) for r in rows] == list(range(1, 9))
    with open(tmp_path / "ev" / "base_metrics.csv") as fh:
        assert all(float(r["crpss_vs_base"]) == 0 for r in csv.DictReader(fh))


def test_bad_config_exit_code_and_field(tmp_path, capsys):
    code = main(["schedule-dump", "--out", str(tmp_path / "x"), "--set", "schedule.sigma_min=-1"])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["field"] == "schedule.sigma_min"
    assert not (tmp_path / "x").exists()


def test_failure_leaves_no_partial_outputs(workdir, tmp_path, capsys):
    out = tmp_path / "bad"
    code = run("forecast", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "missing.bin"),
               "--out", str(out), "--horizon", "8")
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "FileNotFoundError"
    assert not out.exists()


def test_wrong_checkpoint_kind(workdir, tmp_path):
    code = run("forecast", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "edm" / "checkpoint.bin"),
               "--out", str(tmp_path / "w"), "--horizon", "8")
    assert code == 2


def test_schedule_dump(tmp_path):
    assert main(["schedule-dump", "--out", str(tmp_path), "--points", "3"]) == 0
    with open(tmp_path / "schedule.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 6 * 3
    first = [r for r in rows if float(r["rho"]) == -10.0 and r["w"] == "3" and r["t"] == "0"][0]
    assert float(first["sigma"]) == pytest.approx(0.13122587329709006424, rel=1e-15)
