from __future__ import annotations

import json
import shutil
import subprocess
import sys as _sys

import numpy as np
import pytest

from evs import cli
from evs.errors import StepError
from evs.snapshot import read_csv, read_snapshot, sha256_file, write_snapshot


def evs(*args) -> int:
    return cli.main([str(a) for a in args])


def _rehash(run_dir, name):
    man = json.loads((run_dir / "manifest.json").read_text())
    man["files"][name] = sha256_file(run_dir / name)
    (run_dir / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=2) + "\n")


@pytest.fixture(scope="module")
def burgers_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "burgers"
    code = evs("run", "--system", "burgers", "--grid", 64, "--tsteps", 24, "--tfinal", 0.12,
               "--init", "sine:amp=1", "--out", out)
    assert code == 0
    return out


# {{{ run

@pytest.mark.parametrize("name, grid", [("burgers", 16), ("euler", 16), ("mhd", 16),
                                        ("compressible", 16)])
def test_zero_initial_data(tmp_path, name, grid):
    out = tmp_path / name
    assert evs("run", "--system", name, "--grid", grid, "--tsteps", 3, "--tfinal", 0.1,
               "--init", "zero", "--out", out) == 0
    header, rows = read_csv(out / "timeseries.csv")
    assert header == list(cli.TIMESERIES_HEADER)
    assert len(rows) == 4
    for row in rows:
        assert [float(v) for v in row[1:]] == [0.0] * 5


def test_run_artifacts(burgers_run):
    man = json.loads((burgers_run / "manifest.json").read_text())
    assert man["complete"] and man["N"] == 24 and man["system"]["name"] == "burgers"
    for name, digest in man["files"].items():
        assert sha256_file(burgers_run / name) == digest
    assert len([n for n in man["files"] if n.startswith("field_")]) == 25
    g, U = read_snapshot(burgers_run / "field_000024.bin")
    assert g.n == (64,) and U.shape == (64, 1)
    header, rows = read_csv(burgers_run / "timeseries.csv")
    E = [float(r[1]) for r in rows]
    mech = [float(r[2]) for r in rows]
    assert all(b <= a + man["tolerances"]["tol_step"] for a, b in zip(E, E[1:]))
    assert all(float(r[3]) == e - m for r, e, m in zip(rows, E, mech))


def test_rerun_is_byte_identical(tmp_path, burgers_run, monkeypatch):
    out = tmp_path / "again"
    monkeypatch.setenv("EVS_THREADS", "4")
    assert evs("run", "--system", "burgers", "--grid", 64, "--tsteps", 24, "--tfinal", 0.12,
               "--init", "sine:amp=1", "--out", out) == 0
    for f in burgers_run.iterdir():
        if f.name.endswith(".bin") or f.name == "timeseries.csv":
            assert (out / f.name).read_bytes() == f.read_bytes()
    a = json.loads((burgers_run / "manifest.json").read_text())
    b = json.loads((out / "manifest.json").read_text())
    a.pop("wall_clock")
    b.pop("wall_clock")
    assert a == b


def test_stride_and_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nsystem = burgers\ngrid = 32\ntsteps = 10\ntfinal = 0.05\n"
                   "init = sine:amp=0.5\nstride = 4\n")
    out = tmp_path / "strided"
    assert evs("run", "--config", cfg, "--stride", 5, "--out", out) == 0
    names = sorted(p.name for p in out.glob("field_*.bin"))
    assert names == ["field_000000.bin", "field_000005.bin", "field_000010.bin"]
    # verification needs every step
    assert evs("verify", out) == 2


@pytest.mark.parametrize("args", [
    ["run", "--system", "burgers", "--grid", 7, "--tsteps", 2, "--tfinal", 0.1],
    ["run", "--system", "burgers", "--tsteps", 2, "--tfinal", 0.1],
    ["run", "--system", "burgers", "--grid", 16, "--tsteps", 0, "--tfinal", 0.1],
    ["run", "--system", "euler", "--grid", 16, "--tsteps", 2, "--tfinal", 0.1, "--init", "bogus"],
    ["run", "--system", "plasma"],
    ["run", "--config", "/nonexistent/file.cfg"],
    ["frobnicate"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert evs(*args, *(["--out", tmp_path / "x"] if args[0] == "run" and len(args) > 2 else [])) == 2


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert evs("run", "--config", cfg) == 2


def test_step_failure_exit_3(tmp_path, monkeypatch):
    real = cli.run

    def failing(sys, grid, U0, T, N, cfg, tables, progress):
        tr = real(sys, grid, U0, T / N * 2, 2, cfg, tables)
        tr.T, tr.N, tr.complete = T, N, False
        exc = StepError("forced failure")
        exc.trajectory = tr
        raise exc

    monkeypatch.setattr(cli, "run", failing)
    out = tmp_path / "fail"
    assert evs("run", "--system", "burgers", "--grid", 16, "--tsteps", 5, "--tfinal", 0.1,
               "--init", "sine:amp=0.5", "--out", out) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["complete"] is False and man["failed_step"] == 3
    assert "forced failure" in man["message"]
    assert (out / "field_000002.bin").exists()
    monkeypatch.setattr(cli, "run", real)
    assert evs("verify", out) == 5

# }}}


# {{{ verify

def test_verify_fresh_run(burgers_run, capsys):
    assert evs("verify", burgers_run) == 0
    header, rows = read_csv(burgers_run / "report.csv")
    assert header == list(cli.REPORT_HEADER)
    assert {r[0] for r in rows} == {"step", "energy", "window"}
    assert all(r[6] == "1" for r in rows)


def test_verify_flipped_byte(tmp_path, burgers_run):
    run_dir = tmp_path / "flipped"
    shutil.copytree(burgers_run, run_dir)
    f = run_dir / "field_000010.bin"
    blob = bytearray(f.read_bytes())
    blob[-3] ^= 0x10
    f.write_bytes(bytes(blob))
    assert evs("verify", run_dir) == 4


def test_verify_missing_file(tmp_path, burgers_run):
    run_dir = tmp_path / "missing"
    shutil.copytree(burgers_run, run_dir)
    (run_dir / "field_000003.bin").unlink()
    assert evs("verify", run_dir) == 4


def test_verify_perturbed_state(tmp_path, burgers_run, capsys):
    run_dir = tmp_path / "perturbed"
    shutil.copytree(burgers_run, run_dir)
    name = "field_000012.bin"
    g, U = read_snapshot(run_dir / name)
    (x,) = g.coords()
    write_snapshot(run_dir / name, g, U + 0.05 * np.sin(4 * np.pi * x)[:, None])
    _rehash(run_dir, name)
    assert evs("verify", run_dir) == 5
    err = capsys.readouterr().err
    assert "over budget" in err and "0.06" in err
    header, rows = read_csv(run_dir / "report.csv")
    assert any(r[6] == "0" for r in rows)


def test_verify_edited_energy(tmp_path, burgers_run):
    run_dir = tmp_path / "energy"
    shutil.copytree(burgers_run, run_dir)
    ts = run_dir / "timeseries.csv"
    lines = ts.read_text().splitlines()
    parts = lines[10].split(",")
    parts[1] = repr(float(parts[1]) + 1e-3)
    lines[10] = ",".join(parts)
    ts.write_text("\n".join(lines) + "\n")
    _rehash(run_dir, "timeseries.csv")
    assert evs("verify", run_dir) == 5

# }}}


# {{{ compare and check-hypothesis

def test_compare_exit_6_without_oracle(tmp_path):
    out = tmp_path / "mhd"
    assert evs("run", "--system", "mhd", "--grid", 16, "--tsteps", 2, "--tfinal", 0.02,
               "--init", "orszag-tang", "--out", out) == 0
    assert evs("compare", out) == 6


def test_compare_integrity(tmp_path, burgers_run):
    run_dir = tmp_path / "c"
    shutil.copytree(burgers_run, run_dir)
    (run_dir / "timeseries.csv").write_text("t\n")
    assert evs("compare", run_dir) == 4


def test_compare_taylor_green(tmp_path, capsys):
    out = tmp_path / "tg"
    assert evs("run", "--system", "euler", "--grid", 16, "--tsteps", 8, "--tfinal", 0.1,
               "--init", "taylor-green", "--out", out) == 0
    assert evs("compare", out) == 0
    header, rows = read_csv(out / "weak_strong.csv")
    assert header == ["t", "R", "W", "gap", "bound"]
    assert len(rows) == 9
    assert all(float(r[4]) >= float(r[1]) for r in rows)


def test_compare_burgers_family(tmp_path, capsys):
    dirs = []
    for N in (8, 16, 32):
        d = tmp_path / f"b{N}"
        assert evs("run", "--system", "burgers", "--grid", 128, "--tsteps", N, "--tfinal", 0.1,
                   "--init", "sine:amp=1", "--out", d) == 0
        dirs.append(d)
    assert evs("compare", dirs[-1], "--family", *dirs) == 0
    out = capsys.readouterr().out
    assert "fitted order" in out
    header, rows = read_csv(dirs[-1] / "convergence.csv")
    assert [int(r[0]) for r in rows] == [8, 16, 32]
    errs = [float(r[1]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert cli.fitted_order([8, 16, 32], errs) >= 0.8


def test_check_hypothesis(capsys):
    assert evs("check-hypothesis", "--system", "burgers", "--samples", 2000) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)
    assert evs("check-hypothesis", "--system", "compressible", "--gamma", 1) == 2
    assert evs("check-hypothesis", "--system", "mhd", "--mu", 0) == 2
    assert evs("check-hypothesis", "--system", "mhd", "--mu", -1) == 2


def test_check_hypothesis_reports_failure(monkeypatch, capsys):
    from evs import checks
    monkeypatch.setattr(checks, "run_all", lambda *a, **k: [
        checks.BatteryResult("flux-bound", False, 3.0, 1.0, 10)])
    assert evs("check-hypothesis", "--system", "burgers") == 1
    assert "flux-bound" in capsys.readouterr().err


def test_console_script():
    res = subprocess.run([_sys.executable, "-m", "evs.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "evs" in res.stdout

# }}}
