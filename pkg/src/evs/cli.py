"""Command-line front end: ``evs run | verify | check-hypothesis | compare``.

Exit codes: 0 success, 1 hypothesis battery failure, 2 configuration error,
3 step failure (partial artifacts written), 4 integrity failure, 5 budget
violation, 6 no oracle for the system.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys as _sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from evs import __version__
from evs.entropy import energy
from evs.errors import ConfigError, ContractError, DomainError, StepError
from evs.snapshot import (
    csv_text, read_csv, read_manifest, read_snapshot, sha256_file, write_manifest,
    write_snapshot,
)
from evs.stepper import StepConfig, Trajectory, full_certificate, prepare, run
from evs.systems import SystemSpec, make_system
from evs.torus import Grid, make_grid

logger = logging.getLogger("evs")

EXIT_OK = 0
EXIT_HYPOTHESIS = 1
EXIT_CONFIG = 2
EXIT_STEP = 3
EXIT_INTEGRITY = 4
EXIT_BUDGET = 5
EXIT_NO_ORACLE = 6

CONFIG_KEYS = ("system", "grid", "grid-y", "tsteps", "tfinal", "gamma", "a", "mu",
               "dict-modes", "tol", "init", "out", "stride", "windows")
TIMESERIES_HEADER = ("t", "E", "mechE", "gap", "worst_residual", "iterations")


def _snapshot_name(n: int) -> str:
    return f"field_{n:06d}.bin"


# {{{ configuration

def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: expected one of {CONFIG_KEYS} as key=value")
        out[key] = val.strip()
    return out


def _merged(args: argparse.Namespace) -> dict[str, str]:
    cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def _get(cfg: dict, key: str, conv, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required setting --{key}")
        return default
    try:
        return conv(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"invalid value for --{key}: {cfg[key]!r}") from exc


def system_from_settings(cfg: dict) -> tuple[SystemSpec, Grid]:
    name = _get(cfg, "system", str)
    n = _get(cfg, "grid", int)
    ny = _get(cfg, "grid-y", int, 0)
    if name in ("euler", "mhd") and not ny:
        ny = n
    d = 2 if ny else 1
    sys = make_system(name, d, gamma=_get(cfg, "gamma", float, 1.4),
                      a=_get(cfg, "a", float, 1.0), mu=_get(cfg, "mu", float, 1.0))
    grid = make_grid(d, [n, ny] if ny else [n])
    return sys, grid


def _system_from_manifest(man: dict) -> tuple[SystemSpec, Grid]:
    s = man["system"]
    p = s.get("params", {})
    sys = make_system(s["name"], s["d"], gamma=p.get("gamma", 1.4), a=p.get("a", 1.0),
                      mu=p.get("mu", 1.0))
    return sys, make_grid(man["grid"]["d"], man["grid"]["n"])

# }}}


# {{{ run

def _timeseries_rows(traj: Trajectory, mech: Sequence[float]):
    for n in range(len(traj.states)):
        cert = traj.certificates[n - 1] if n > 0 else None
        yield (traj.time(n), traj.energies[n], mech[n], traj.energies[n] - mech[n],
               cert.worst if cert else 0.0, cert.iterations if cert else 0)


def write_run(out: Path, traj: Trajectory, man: dict, stride: int,
              failed: StepError | None = None) -> dict:
    """Write snapshots, time series and manifest; return the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("field_*.bin"):
        old.unlink()
    files = {}
    last = len(traj.states) - 1
    for n, U in enumerate(traj.states):
        if n % stride == 0 or n == last:
            name = _snapshot_name(n)
            write_snapshot(out / name, traj.grid, U)
            files[name] = sha256_file(out / name)
    mech = [energy(traj.sys.pair, traj.grid, U) for U in traj.states]
    (out / "timeseries.csv").write_text(csv_text(TIMESERIES_HEADER, _timeseries_rows(traj, mech)))
    files["timeseries.csv"] = sha256_file(out / "timeseries.csv")
    man = dict(man)
    man["files"] = files
    man["complete"] = failed is None
    man["steps_completed"] = last
    if failed is not None:
        man["failed_step"] = last + 1
        man["message"] = str(failed)
    write_manifest(out / "manifest.json", man)
    return man


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    sys, grid = system_from_settings(cfg)
    T = _get(cfg, "tfinal", float)
    N = _get(cfg, "tsteps", int)
    stride = _get(cfg, "stride", int, 1)
    dict_modes = _get(cfg, "dict-modes", int, 2)
    tol = _get(cfg, "tol", float, 0.0) or None
    init = _get(cfg, "init", str, "zero")
    out = Path(_get(cfg, "out", str, "evs-run"))
    if not (T > 0 and math.isfinite(T)) or N < 1 or stride < 1:
        raise ConfigError("need --tfinal > 0, --tsteps >= 1 and --stride >= 1")
    U0 = make_initial_checked(sys, grid, init)
    step_cfg = StepConfig(tau=T / N, dict_modes=dict_modes, tol_step=tol)
    tables = prepare(sys, grid, dict_modes)

    man = {
        "tool": "evs",
        "version": __version__,
        "system": {"name": sys.name, "d": sys.d, "params": dict(sys.params)},
        "grid": {"d": grid.d, "n": list(grid.n)},
        "T": T,
        "N": N,
        "tau": T / N,
        "dictionary": {"modes": dict_modes, "size": len(tables)},
        "svv_coef": step_cfg.svv_coef,
        "init": init,
        "stride": stride,
    }
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()

    def progress(n, traj):
        if n % max(1, N // 10) == 0:
            logger.info("step %d/%d  E = %.12g", n, N, traj.energies[n])

    failed = None
    try:
        traj = run(sys, grid, U0, T, N, step_cfg, tables, progress)
    except StepError as exc:
        failed = exc
        traj = exc.trajectory
    man["tolerances"] = {"tol_step": traj.tol}
    man["wall_clock"] = {"started": started.isoformat(timespec="seconds"),
                         "seconds": round(time.perf_counter() - t0, 3)}
    write_run(out, traj, man, stride, failed)
    if failed is not None:
        print(f"evs run: step {len(traj.states)} failed: {failed}", file=_sys.stderr)
        return EXIT_STEP
    bad = [n + 1 for n, c in enumerate(traj.certificates) if not c.ok]
    if bad:
        print(f"evs run: certificates failed at steps {bad[:10]}", file=_sys.stderr)
        return EXIT_STEP
    print(f"evs run: {N} steps certified, E(T) = {traj.energies[-1]!r}, output in {out}")
    return EXIT_OK


def make_initial_checked(sys: SystemSpec, grid: Grid, desc: str) -> np.ndarray:
    from evs.initdata import make_initial
    U0 = make_initial(sys, grid, desc)
    if not math.isfinite(energy(sys.pair, grid, U0)):
        raise ConfigError("initial data has infinite entropy")
    return U0

# }}}


# {{{ loading stored runs

class IntegrityError(Exception):
    pass


def load_run(path: str | Path, require_all: bool = True) -> tuple[dict, SystemSpec, Trajectory]:
    """Read a run directory after checking every recorded hash.

    With ``require_all`` every step must have a snapshot (stride 1).
    """
    path = Path(path)
    try:
        man = read_manifest(path / "manifest.json")
    except (OSError, ValueError) as exc:
        raise IntegrityError(f"cannot read manifest: {exc}") from exc
    for name, digest in sorted(man.get("files", {}).items()):
        f = path / name
        if not f.is_file():
            raise IntegrityError(f"missing file {name}")
        if sha256_file(f) != digest:
            raise IntegrityError(f"hash mismatch for {name}")
    sys, grid = _system_from_manifest(man)
    header, rows = read_csv(path / "timeseries.csv")
    if tuple(header) != TIMESERIES_HEADER:
        raise IntegrityError("unexpected time-series header")
    energies = [float(r[1]) for r in rows]
    steps = man["steps_completed"]
    snaps = {}
    for name in man["files"]:
        if name.startswith("field_"):
            snaps[int(name[6:12])] = name
    if require_all and sorted(snaps) != list(range(steps + 1)):
        raise ConfigError("run was written with stride > 1; every step snapshot is needed")
    states = []
    for n in sorted(snaps):
        g, U = read_snapshot(path / snaps[n])
        if g != grid or U.shape[-1] != sys.m:
            raise IntegrityError(f"{snaps[n]} does not match the manifest grid")
        states.append(U)
    if not require_all:
        energies = [energies[n] for n in sorted(snaps)]
    cfg = StepConfig(tau=man["tau"], dict_modes=man["dictionary"]["modes"],
                     tol_step=man["tolerances"]["tol_step"], svv_coef=man.get("svv_coef", 1.0))
    traj = Trajectory(sys, grid, man["T"], man["N"], states, energies, [],
                      cfg.tol_step, cfg, cfg.fingerprint(), man.get("complete", True),
                      meta={"indices": sorted(snaps)})
    return man, sys, traj

# }}}


# {{{ verify

REPORT_HEADER = ("kind", "t_start", "t_end", "index", "value", "budget", "ok")


def cmd_verify(args: argparse.Namespace) -> int:
    from evs.diagnostics import mechanical_energies, window_battery
    try:
        man, sys, traj = load_run(args.dir)
    except IntegrityError as exc:
        print(f"evs verify: integrity failure: {exc}", file=_sys.stderr)
        return EXIT_INTEGRITY
    grid = traj.grid
    tables = prepare(sys, grid, traj.cfg.dict_modes)
    tol = traj.tol
    tau = traj.tau
    mech = mechanical_energies(traj)
    entries = []
    for n in range(1, len(traj.states)):
        cert = full_certificate(sys, grid, traj.states[n], traj.states[n - 1], tau, tables,
                                tol, traj.cfg, 0, 0, False)
        value = max(cert.worst, cert.slack)
        entries.append(("step", traj.time(n - 1), traj.time(n), cert.worst_index, value, tol))
        # stored auxiliary energy: E_n >= E(U_n) and E_n <= E_{n-1}
        entries.append(("energy", traj.time(n - 1), traj.time(n), -1,
                         max(mech[n] - traj.energies[n],
                             traj.energies[n] - traj.energies[n - 1]), tol))
    report = window_battery(sys, traj, tables, points=args.windows or 16,
                            mech=mech)
    for t_s, t_e, k, val, budget in report.entries:
        entries.append(("window", t_s, t_e, k, val, budget))
    rows = [e + ("1" if e[4] <= e[5] else "0",) for e in entries]
    Path(args.dir, "report.csv").write_text(csv_text(REPORT_HEADER, rows))
    bad = [e for e in entries if not e[4] <= e[5]]
    if not man.get("complete", True):
        print(f"evs verify: run is incomplete (failed at step {man.get('failed_step')})",
              file=_sys.stderr)
        return EXIT_BUDGET
    if bad:
        bad.sort(key=lambda e: e[4] - e[5], reverse=True)
        print(f"evs verify: {len(bad)} entries over budget; worst:", file=_sys.stderr)
        for kind, t_s, t_e, k, val, budget in bad[:5]:
            label = tables.dictionary[k].label if k >= 0 else "-"
            print(f"  {kind} [{t_s!r}, {t_e!r}] member {k} ({label}): "
                  f"{val:.6e} > {budget:.6e}", file=_sys.stderr)
        return EXIT_BUDGET
    print(f"evs verify: {len(entries)} entries within budget")
    return EXIT_OK

# }}}


# {{{ check-hypothesis

def cmd_check_hypothesis(args: argparse.Namespace) -> int:
    from evs.checks import run_all
    cfg = _merged(args)
    cfg.setdefault("grid", "32")
    sys, _ = system_from_settings(cfg)
    results = run_all(sys, seed=args.seed, fenchel_samples=args.samples)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"evs check-hypothesis: {sys.name} fails {', '.join(failed)}", file=_sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK

# }}}


# {{{ compare

def _burgers_amp(man: dict) -> float:
    from evs.initdata import parse_descriptor
    name, opts = parse_descriptor(man["init"])
    if name != "sine":
        raise ConfigError("Burgers comparison needs sine initial data")
    return float(opts.get("amp", 1.0))


def burgers_l1_error(man: dict, traj: Trajectory) -> float:
    from evs.oracles import burgers_exact
    from evs.torus import integrate
    amp = _burgers_amp(man)
    (x,) = traj.grid.coords()
    u, _, _ = burgers_exact(amp, man["T"], x)
    return integrate(traj.grid, np.abs(traj.states[-1][..., 0] - u))


def fitted_order(ns: Sequence[float], errs: Sequence[float]) -> float:
    """Least-squares slope of ``-log(err)`` against ``log(N)``."""
    slope = np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(errs, float)), 1)[0]
    return float(-slope)


def _euler_oracle(traj: Trajectory):
    from evs.oracles import classical_euler2d
    U0 = traj.states[0]
    vmax = float(np.max(np.abs(U0)))
    sub = max(1, math.ceil(vmax * traj.tau * max(traj.grid.n) / 0.4))
    ref = classical_euler2d(traj.grid, U0, traj.T, traj.N * sub)
    return ref.at


def cmd_compare(args: argparse.Namespace) -> int:
    from evs.diagnostics import weak_strong_report
    from evs.oracles import burgers_exact, burgers_shock_time
    from evs.torus import integrate
    try:
        man, sys, traj = load_run(args.dir)
    except IntegrityError as exc:
        print(f"evs compare: integrity failure: {exc}", file=_sys.stderr)
        return EXIT_INTEGRITY
    if sys.name not in ("euler", "burgers"):
        print(f"evs compare: no classical oracle for {sys.name}", file=_sys.stderr)
        return EXIT_NO_ORACLE
    out = Path(args.dir)
    summary = []
    if sys.name == "euler":
        oracle = _euler_oracle(traj)
        Ut = oracle(traj.T)
        err = math.sqrt(integrate(traj.grid, np.sum((traj.states[-1] - Ut) ** 2, axis=-1)))
        ref = math.sqrt(integrate(traj.grid, np.sum(Ut ** 2, axis=-1)))
        summary.append(("l2_error", err))
        summary.append(("l2_relative", err / ref if ref > 0 else err))
        used = traj
    else:
        amp = _burgers_amp(man)
        ts = burgers_shock_time(amp)
        (x,) = traj.grid.coords()

        def oracle(t):
            return burgers_exact(amp, t, x)[0][..., None]

        keep = [n for n in range(len(traj.states)) if traj.time(n) < ts]
        used = replace(traj, states=traj.states[:len(keep)], energies=traj.energies[:len(keep)])
        summary.append(("l1_error", burgers_l1_error(man, traj)))
        summary.append(("shock_time", ts))
    trace = weak_strong_report(sys, used, oracle)
    (out / "weak_strong.csv").write_text(csv_text(("t", "R", "W", "gap", "bound"), trace.rows()))
    summary.append(("K_tilde", trace.K_tilde))

    if args.family:
        if sys.name != "burgers":
            raise ConfigError("refinement families are supported for Burgers")
        table = []
        for d in args.family:
            m2, s2, t2 = load_run(d)
            if s2.name != "burgers":
                raise ConfigError(f"{d} is not a Burgers run")
            table.append((m2["N"], burgers_l1_error(m2, t2)))
        table.sort()
        (out / "convergence.csv").write_text(csv_text(("N", "l1_error"), table))
        order = fitted_order([r[0] for r in table], [r[1] for r in table])
        for N, e in table:
            print(f"N = {N:5d}  L1 error = {e:.6e}")
        print(f"fitted order: {order:.4f}")
        summary.append(("fitted_order", order))

    violated = [k for k, ok in enumerate(trace.satisfied) if not ok]
    summary.append(("bound_violations", len(violated)))
    (out / "compare.csv").write_text(csv_text(("quantity", "value"), summary))
    for key, val in summary:
        print(f"{key}: {val!r}")
    if violated:
        # the Gronwall bound only accounts for certified slack, not time-discretization error
        print(f"evs compare: warning: Gronwall bound exceeded at {len(violated)} of "
              f"{len(trace.times)} samples (first t = {float(trace.times[violated[0]])!r})",
              file=_sys.stderr)
    return EXIT_OK

# }}}


# {{{ argument parsing

def _add_physics(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (flags win)")
    p.add_argument("--system", choices=("burgers", "euler", "mhd", "compressible"))
    p.add_argument("--grid", type=int, help="nodes along x")
    p.add_argument("--grid-y", type=int, help="nodes along y (selects a 2-d grid)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--mu", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"evs {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate and certify a trajectory")
    _add_physics(p)
    p.add_argument("--tsteps", type=int)
    p.add_argument("--tfinal", type=float)
    p.add_argument("--dict-modes", type=int)
    p.add_argument("--tol", type=float, help="per-step tolerance (default 1e-8 (1 + E0))")
    p.add_argument("--init")
    p.add_argument("--out")
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="re-certify a stored run")
    p.add_argument("dir")
    p.add_argument("--windows", type=int, default=16, help="decimation points for windows")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check-hypothesis", help="run the structural batteries")
    _add_physics(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_hypothesis)

    p = sub.add_parser("compare", help="compare a stored run with a classical solution")
    p.add_argument("dir")
    p.add_argument("--family", nargs="+", help="run directories of a refinement family")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"evs {args.command}: configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    _sys.exit(main())

# }}}
