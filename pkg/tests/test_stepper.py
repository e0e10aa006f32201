from __future__ import annotations

import math

import numpy as np
import pytest

from evs import stepper
from evs.entropy import energy
from evs.errors import ContractError, StepError
from evs.initdata import make_initial
from evs.oracles import burgers_exact
from evs.stepper import (
    StepConfig, certify, default_tol, f_tau, prepare, prolongate, prolongation_gap, run, step,
)
from evs.systems import flux_pairing, make_system
from evs.torus import build_dictionary, integrate, make_grid, trig_test, zero_test

TWOPI = 2.0 * math.pi


@pytest.fixture(scope="module")
def burgers_traj():
    sys = make_system("burgers")
    g = make_grid(1, [64])
    U0 = make_initial(sys, g, "sine:amp=0.5")
    return run(sys, g, U0, 0.2, 16)


# {{{ f_tau and certify

def test_f_tau_examples(rng):
    sys = make_system("burgers")
    g = make_grid(1, [32])
    (x,) = g.coords()
    U_prev = (0.5 * np.sin(TWOPI * x))[:, None]
    U = (0.4 * np.sin(TWOPI * x) + 0.1 * np.cos(TWOPI * x))[:, None]
    dE = energy(sys.pair, g, U) - energy(sys.pair, g, U_prev)
    assert f_tau(sys, g, U, zero_test(1, 1, "burgers"), U_prev, 0.01) == pytest.approx(dE, abs=1e-16)
    phi = trig_test([[2]], [[0.3]], [[-1.0]], tag="burgers")
    assert f_tau(sys, g, U_prev, phi, U_prev, 0.01) == pytest.approx(
        0.01 * flux_pairing(sys, g, U_prev, phi), abs=1e-17)
    c = np.full((32, 1), 0.7)
    assert abs(f_tau(sys, g, c, phi, c, 0.01)) <= 1e-16


def test_f_tau_rejects_infinite_entropy():
    sys = make_system("compressible", 1)
    g = make_grid(1, [8])
    bad = np.zeros((8, 2))
    bad[0, 1] = 1.0
    with pytest.raises(ContractError):
        f_tau(sys, g, bad, zero_test(2, 1, "compressible"), np.ones((8, 2)), 0.1)


def test_certify_examples(rng):
    sys = make_system("euler")
    g = make_grid(2, [16, 16])
    c = np.zeros(g.shape + (2,)) + [0.2, -0.1]
    cert = certify(sys, g, c, c, 0.01, 2)
    assert abs(cert.worst) <= 1e-12 and cert.ok
    U0 = make_initial(sys, g, "sine:amp=0.5")
    cfg = StepConfig(tau=0.01)
    U1, cert = step(sys, g, U0, cfg)
    assert cert.ok
    bad = sys.project(g, U1 + 0.1 * rng.standard_normal(U1.shape))
    assert certify(sys, g, bad, U0, 0.01, 2).worst > cert.tol


def test_certificate_recomputation_is_bit_exact(burgers_traj):
    tr = burgers_traj
    tables = prepare(tr.sys, tr.grid, tr.cfg.dict_modes)
    for n in range(1, len(tr.states)):
        cert = stepper.full_certificate(tr.sys, tr.grid, tr.states[n], tr.states[n - 1], tr.tau,
                                        tables, tr.tol, tr.cfg, 0, 0, False)
        assert cert.worst == tr.certificates[n - 1].worst
        assert cert.worst_index == tr.certificates[n - 1].worst_index

# }}}


# {{{ single steps

@pytest.mark.parametrize("name", ["burgers", "euler", "mhd", "compressible"])
def test_zero_and_constant_are_fixed_points(name):
    sys = make_system(name)
    g = make_grid(sys.d, [16] * sys.d)
    cfg = StepConfig(tau=0.05)
    Z = make_initial(sys, g, "zero")
    U, cert = step(sys, g, Z, cfg)
    assert np.all(U == 0) and cert.ok
    consts = ",".join(f"c{i}={0.3 + 0.2 * i}" for i in range(sys.m))
    C = make_initial(sys, g, f"constant:{consts}")
    U, cert = step(sys, g, C, cfg)
    assert np.max(np.abs(U - C)) <= 1e-12 and cert.ok


def test_burgers_single_step_matches_characteristics():
    sys = make_system("burgers")
    g = make_grid(1, [64])
    (x,) = g.coords()
    U0 = (0.1 * np.sin(TWOPI * x))[:, None]
    U1, cert = step(sys, g, U0, StepConfig(tau=1e-3))
    exact, _, _ = burgers_exact(0.1, 1e-3, x)
    assert cert.ok
    assert integrate(g, np.abs(U1[:, 0] - exact)) <= 1e-4


def test_step_rejects_bad_input():
    sys = make_system("burgers")
    g = make_grid(1, [16])
    with pytest.raises(ContractError):
        step(sys, g, np.zeros((8, 1)), StepConfig(tau=0.1))
    with pytest.raises(ContractError):
        StepConfig(tau=0.0)
    with pytest.raises(ContractError):
        StepConfig(tau=0.1, tol_step=-1.0)


def test_step_error_when_nothing_certifies(monkeypatch):
    sys = make_system("burgers")
    g = make_grid(1, [16])
    (x,) = g.coords()
    U0 = (0.5 * np.sin(TWOPI * x))[:, None]

    def fail(self, *args, **kwargs):
        raise StepError("forced")

    monkeypatch.setattr(stepper._Predictor, "solve", fail)
    monkeypatch.setattr(stepper, "polyak",
                        lambda sys, grid, U, U_prev, *a: (U_prev + 0.1 * np.cos(TWOPI * x)[:, None], 1))
    monkeypatch.setattr(stepper, "_restore_feasibility", lambda sys, grid, U, *a: U)
    with pytest.raises(StepError) as info:
        step(sys, g, U0, StepConfig(tau=0.01))
    assert info.value.certificate is not None and not info.value.certificate.ok
    assert info.value.state is not None

# }}}


# {{{ trajectories

def test_zero_trajectory():
    sys = make_system("mhd")
    g = make_grid(2, [16, 16])
    tr = run(sys, g, make_initial(sys, g, "zero"), 0.1, 4)
    assert all(np.all(U == 0) for U in tr.states)
    assert tr.energies == [0.0] * 5


def test_trajectory_contract(burgers_traj):
    tr = burgers_traj
    assert tr.complete and len(tr.states) == 17 and len(tr.certificates) == 16
    assert tr.energies[0] == energy(tr.sys.pair, tr.grid, tr.states[0])
    assert tr.tol == default_tol(tr.energies[0])
    for n in range(1, 17):
        assert tr.energies[n] <= tr.energies[n - 1] + tr.tol
        assert tr.certificates[n - 1].ok
        assert tr.times[n] == n * 0.2 / 16


def test_semi_flow(burgers_traj):
    tr = burgers_traj
    first = run(tr.sys, tr.grid, tr.states[0], 0.1, 8)
    second = run(tr.sys, tr.grid, first.states[-1], 0.1, 8)
    states = first.states + second.states[1:]
    for a, b in zip(states, tr.states):
        assert np.max(np.abs(a - b)) <= 1e-9


def test_run_keeps_partial_trajectory(monkeypatch):
    sys = make_system("burgers")
    g = make_grid(1, [16])
    U0 = make_initial(sys, g, "sine:amp=0.3")
    real = stepper.step
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise StepError("forced")
        return real(*args, **kwargs)

    monkeypatch.setattr(stepper, "step", flaky)
    with pytest.raises(StepError) as info:
        run(sys, g, U0, 0.1, 5)
    tr = info.value.trajectory
    assert not tr.complete and len(tr.states) == 3


def test_thread_count_does_not_change_results(monkeypatch):
    sys = make_system("euler")
    g = make_grid(2, [16, 16])
    U0 = make_initial(sys, g, "sine:amp=0.5")
    out = []
    for threads in ("1", "4"):
        monkeypatch.setenv("EVS_THREADS", threads)
        tr = run(sys, g, U0, 0.05, 4)
        out.append((tr.states, tr.energies, [c.worst for c in tr.certificates]))
    for a, b in zip(out[0][0], out[1][0]):
        assert np.array_equal(a, b)
    assert out[0][1] == out[1][1] and out[0][2] == out[1][2]


@pytest.mark.parametrize("name, init, blocks", [
    ("compressible", "gauss-density:amp=0.5", [0]),
    ("euler", "sine:amp=0.5", [0, 1]),
])
def test_conservation_by_certification(name, init, blocks):
    sys = make_system(name)
    g = make_grid(sys.d, [32] * sys.d)
    tr = run(sys, g, make_initial(sys, g, init), 0.1, 10)
    for c in blocks:
        totals = [integrate(g, U[..., c]) for U in tr.states]
        assert max(abs(t - totals[0]) for t in totals) <= tr.N * tr.tol

# }}}


# {{{ prolongations

def test_prolongation_conventions(burgers_traj):
    tr = burgers_traj
    U, Eo, Eu = prolongate(tr, 0.0)
    assert np.array_equal(U, tr.states[0]) and Eo == Eu == tr.energies[0]
    for n in (1, 5, 16):
        t = tr.time(n)
        U, Eo, Eu = prolongate(tr, t)
        assert np.array_equal(U, tr.states[n]) and Eo == tr.energies[n]
        # lower interpolant is right-continuous: E^n on [t^n, t^{n+1}), E^N at T
        assert Eu == tr.energies[n]
        U, Eo, Eu = prolongate(tr, t - 0.5 * tr.tau)
        assert np.array_equal(U, tr.states[n]) and Eo == tr.energies[n]
        assert Eu == tr.energies[n - 1]
    with pytest.raises(ContractError):
        prolongate(tr, 0.3)


def test_prolongation_gap_identity(burgers_traj):
    tr = burgers_traj
    expected = tr.tau * (tr.energies[0] - tr.energies[-1])
    assert abs(prolongation_gap(tr) - expected) <= 1e-12
    assert prolongation_gap(tr) <= tr.tau * tr.energies[0]
    # brute-force midpoint integration of |E_over - E_under| agrees
    mids = [(n - 0.5) * tr.tau for n in range(1, tr.N + 1)]
    brute = math.fsum(tr.tau * abs(prolongate(tr, t)[1] - prolongate(tr, t)[2]) for t in mids)
    assert abs(brute - prolongation_gap(tr)) <= 1e-15

# }}}
