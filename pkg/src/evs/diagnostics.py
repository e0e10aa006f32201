"""Residuals of the energy-variational inequality, relative entropy and weak-strong checks.

Time integrals use the piecewise-constant prolongations of a trajectory: on
``(t_{n-1}, t_n]`` the state is ``U_n``, the upper energy ``E_n`` and the lower
energy ``E_{n-1}``; test functions are piecewise linear in time with the
lower (left) value entering the flux and weight terms. With this structure a
step-aligned window telescopes exactly into the per-step discrete inequalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from evs.entropy import CompressiblePair, energy
from evs.errors import ContractError
from evs.stepper import DictTables, Trajectory, _fsum_rows, prepare
from evs.systems import SystemSpec
from evs.torus import Grid, TestFunction, derivative, eval_test, gradient, integrate

H_MIN = 1e-6


# {{{ energy-variational residual

@dataclass
class _PhiPath:
    vals: list[np.ndarray]
    grads: list[np.ndarray]
    weights: list[float]
    constant: bool


def _phi_path(sys: SystemSpec, traj: Trajectory, phi) -> _PhiPath:
    grid = traj.grid
    if isinstance(phi, TestFunction):
        v, g = eval_test(phi, grid)
        K = sys.weight_from_grads(g)
        n = len(traj.states)
        return _PhiPath([v] * n, [g] * n, [K] * n, True)
    phis = list(phi)
    if len(phis) != len(traj.states):
        raise ContractError("test-function path must be sampled at every trajectory time")
    vs, gs, ks = [], [], []
    for p in phis:
        v, g = eval_test(p, grid)
        vs.append(v)
        gs.append(g)
        ks.append(sys.weight_from_grads(g))
    return _PhiPath(vs, gs, ks, False)


def _locate(traj: Trajectory, t: float) -> tuple[int, float]:
    """Step index ``n`` with ``t`` in ``(t_{n-1}, t_n]`` and fraction ``theta``."""
    if t == 0.0:
        return 0, 1.0
    n = int(np.searchsorted(traj.times, t, side="left"))
    t0 = traj.time(n - 1)
    return n, (t - t0) / traj.tau


def mechanical_energies(traj: Trajectory) -> list[float]:
    return [energy(traj.sys.pair, traj.grid, U) for U in traj.states]


def envar_residual(sys: SystemSpec, traj: Trajectory, phi, window: tuple[float, float],
                   mech: Sequence[float] | None = None, e_free: bool = False) -> float:
    """Left side of the energy-variational inequality on ``[s, t]``.

    ``phi`` is a :class:`TestFunction` (constant in time) or a sequence sampled at
    every trajectory time. With ``e_free`` the auxiliary-energy boundary term is
    dropped (the ``E``-free half of the split for 1-homogeneous weights).
    """
    s, t = window
    T = traj.time(len(traj.states) - 1)
    if not (0.0 <= s <= t <= T):
        raise ContractError(f"window [{s}, {t}] outside [0, {T}]")
    if s == t:
        return 0.0
    grid = traj.grid
    path = _phi_path(sys, traj, phi)
    if mech is None:
        mech = mechanical_energies(traj)
    E = traj.energies
    tau = traj.tau

    def phi_hat(n, theta):
        if path.constant or theta == 1.0:
            return path.vals[n]
        return (1.0 - theta) * path.vals[n - 1] + theta * path.vals[n]

    def boundary(time):
        n, theta = _locate(traj, time)
        e = 0.0 if e_free else E[n]
        return e - integrate(grid, np.sum(traj.states[n] * phi_hat(n, theta), axis=-1))

    ns, ths = _locate(traj, s)
    nt, tht = _locate(traj, t)
    terms = [boundary(t), -boundary(s)]
    first = ns if s > 0 else 1
    for n in range(first, nt + 1):
        lo = traj.time(n - 1)
        hi = traj.time(n)
        a = max(lo, s)
        b = min(hi, t)
        if b <= a:
            continue
        length = b - a
        U = traj.states[n]
        F = sys.flux(U)
        flux = integrate(grid, np.sum(F * path.grads[n - 1], axis=(-2, -1)))
        kterm = path.weights[n - 1] * (mech[n] - E[n - 1])
        dphi = 0.0
        if not path.constant:
            dphi = integrate(grid, np.sum(U * (path.vals[n] - path.vals[n - 1]), axis=-1)) / tau
        terms.append(length * (dphi + flux + kterm))
    return math.fsum(terms)


@dataclass
class ResidualReport:
    entries: list[tuple[float, float, int, float, float]] = field(default_factory=list)
    tol: float = 0.0

    @property
    def max(self) -> float:
        return max((e[3] for e in self.entries), default=-math.inf)

    @property
    def worst(self) -> tuple | None:
        if not self.entries:
            return None
        return max(self.entries, key=lambda e: e[3] - e[4])

    def violations(self) -> list[tuple]:
        return [e for e in self.entries if e[3] > e[4]]


def decimation(N: int, points: int = 16) -> list[int]:
    return sorted(set(int(round(x)) for x in np.linspace(0, N, points)))


def window_battery(sys: SystemSpec, traj: Trajectory, tables: DictTables | None = None,
                   points: int = 16, energies: Sequence[float] | None = None,
                   mech: Sequence[float] | None = None,
                   budget: Callable[[int, int], float] | None = None) -> ResidualReport:
    """Residuals for every step-aligned window on a decimation and every dictionary member.

    Test functions are constant in time, so the residual of window ``[t_i, t_j]``
    for member ``k`` is assembled from per-step pairings without re-evaluation.
    """
    grid = traj.grid
    if tables is None:
        tables = prepare(sys, grid, traj.cfg.dict_modes)
    E = list(traj.energies if energies is None else energies)
    if mech is None:
        mech = mechanical_energies(traj)
    N = len(traj.states) - 1
    tau = traj.tau
    M = len(tables)
    # b[n, k] = <U_n, phi_k>, a[n, k] = int F(U_n) : grad phi_k
    b = np.empty((N + 1, M))
    a = np.empty((N + 1, M))
    for n, U in enumerate(traj.states):
        b[n] = _fsum_rows(grid, np.einsum("...i,k...i->k...", U, tables.values))
        a[n] = _fsum_rows(grid, np.einsum("...id,k...id->k...", sys.flux(U), tables.grads))
    scale = 1.0 + abs(E[0])
    if budget is None:
        def budget(i, j):
            return (j - i) * traj.tol + 1e-9 * scale
    report = ResidualReport(tol=traj.tol)
    idx = decimation(N, points)
    for ii, i in enumerate(idx):
        for j in idx[ii + 1:]:
            lim = budget(i, j)
            for k in range(M):
                Kk = tables.weights[k]
                terms = [E[j], -E[i], -b[j, k], b[i, k]]
                terms.extend(tau * (a[n, k] + Kk * (mech[n] - E[n - 1]))
                             for n in range(i + 1, j + 1))
                report.entries.append((traj.time(i), traj.time(j), k, math.fsum(terms), lim))
    return report


def alpha_scaling(sys: SystemSpec, traj: Trajectory, phi: TestFunction,
                  window: tuple[float, float], alphas=(1.0, 10.0, 100.0)) -> tuple[list[float], float]:
    """``residual(alpha phi) / alpha`` for each alpha and the ``E``-free limit value."""
    mech = mechanical_energies(traj)
    scaled = [envar_residual(sys, traj, phi.scaled(a), window, mech) / a for a in alphas]
    limit = envar_residual(sys, traj, phi, window, mech, e_free=True)
    return scaled, limit

# }}}


# {{{ relative entropy

def _check_interior(sys: SystemSpec, Ut: np.ndarray) -> None:
    if isinstance(sys.pair, CompressiblePair) and np.min(Ut[..., 0]) < H_MIN:
        raise ContractError(f"comparison density below the floor {H_MIN}")


def relative_entropy(sys: SystemSpec, grid: Grid, U: np.ndarray, Ut: np.ndarray) -> float:
    """Bregman distance ``E(U) - E(Ut) - <DE(Ut), U - Ut>`` (pointwise, then integrated)."""
    _check_interior(sys, Ut)
    pair = sys.pair
    if isinstance(pair, CompressiblePair):
        return relative_entropy_compressible(sys, grid, U, Ut)
    dens = pair.eta(U) - pair.eta(Ut) - np.sum(pair.d_eta(Ut) * (U - Ut), axis=-1)
    return integrate(grid, dens)


def relative_entropy_generic(sys: SystemSpec, grid: Grid, U: np.ndarray, Ut: np.ndarray) -> float:
    """Same functional assembled from total entropies (second evaluation route)."""
    _check_interior(sys, Ut)
    pair = sys.pair
    return (energy(pair, grid, U) - energy(pair, grid, Ut)
            - integrate(grid, np.sum(pair.d_eta(Ut) * (U - Ut), axis=-1)))


def relative_entropy_compressible(sys: SystemSpec, grid: Grid, U: np.ndarray,
                                  Ut: np.ndarray) -> float:
    """``int h/2 |u - ut|^2 + P(h) - P(ht) - P'(ht)(h - ht)``."""
    _check_interior(sys, Ut)
    law = sys.pair.law
    h = U[..., 0]
    ht = Ut[..., 0]
    pos = h > 0
    u = np.where(pos[..., None], U[..., 1:] / np.where(pos, h, 1.0)[..., None], 0.0)
    ut = Ut[..., 1:] / ht[..., None]
    kin = 0.5 * h * np.sum((u - ut) ** 2, axis=-1)
    pot = law.P(np.maximum(h, 0.0)) - law.P(ht) - law.Q(ht) * (h - ht)
    return integrate(grid, kin + pot)


def relative_form(sys: SystemSpec, grid: Grid, U: np.ndarray, Ut: np.ndarray) -> float:
    """``int grad(D eta(Ut)) : (F(U) - F(Ut) - DF(Ut)(U - Ut)) + K(D eta(Ut)) R``."""
    _check_interior(sys, Ut)
    Z = sys.pair.d_eta(Ut)
    gZ = gradient(grid, Z)
    rem = sys.flux(U) - sys.flux(Ut) - sys.flux_jvp(Ut, U - Ut)
    K = sys.weight_from_grads(gZ)
    return integrate(grid, np.sum(gZ * rem, axis=(-2, -1))) + K * relative_entropy(sys, grid, U, Ut)


def relative_form_compressible(sys: SystemSpec, grid: Grid, U: np.ndarray, Ut: np.ndarray) -> float:
    """Closed form ``int [h (u-ut)(x)(u-ut) + p-Bregman I] : sym(grad ut) + K(ut) R``."""
    _check_interior(sys, Ut)
    law = sys.pair.law
    h = U[..., 0]
    ht = Ut[..., 0]
    pos = h > 0
    u = np.where(pos[..., None], U[..., 1:] / np.where(pos, h, 1.0)[..., None], 0.0)
    ut = Ut[..., 1:] / ht[..., None]
    w = u - ut
    gu = gradient(grid, ut)
    S = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    hh = np.maximum(h, 0.0)
    pb = law.p(hh) - law.p(ht) - law.dQ(ht) * ht * (h - ht)
    dens = h * np.einsum("...i,...ij,...j->...", w, S, w) + pb * np.trace(S, axis1=-2, axis2=-1)
    Z = sys.pair.d_eta(Ut)
    K = sys.weight_from_grads(gradient(grid, Z))
    return integrate(grid, dens) + K * relative_entropy_compressible(sys, grid, U, Ut)


def pde_operator(sys: SystemSpec, grid: Grid, Ut: np.ndarray, dUt: np.ndarray) -> np.ndarray:
    """``d_t Ut + div F(Ut)`` with spectral divergence (pressure removed on solenoidal blocks)."""
    F = sys.flux(Ut)
    div = np.zeros_like(Ut)
    for j in range(grid.d):
        div += derivative(grid, F[..., j], j)
    return sys.project(grid, dUt + div) if sys.solenoidal_blocks else dUt + div


def relent_residual(sys: SystemSpec, traj: Trajectory, Ut_path: Callable,
                    window: tuple[float, float], dUt_path: Callable | None = None) -> float:
    """Left side of the relative entropy inequality on a step-aligned window.

    ``Ut_path(t)`` returns the comparison state and ``dUt_path(t)`` its time
    derivative (zero if omitted). Integrands are sampled at the right end of
    each step, consistent with the prolongation of the trajectory.
    """
    s, t = window
    if s == t:
        return 0.0
    grid = traj.grid
    pair = sys.pair
    i, _ = _locate(traj, s)
    j, _ = _locate(traj, t)
    mech = mechanical_energies(traj)
    E = traj.energies

    def lyap(n, time):
        return relative_entropy(sys, grid, traj.states[n], Ut_path(time)) + E[n] - mech[n]

    terms = [lyap(j, t), -lyap(i, s)]
    for n in range(i + 1, j + 1):
        tn = traj.time(n)
        U = traj.states[n]
        Ut = Ut_path(tn)
        Kt = sys.weight_from_grads(gradient(grid, pair.d_eta(Ut)))
        R = relative_entropy(sys, grid, U, Ut)
        W = relative_form(sys, grid, U, Ut)
        dUt = np.zeros_like(Ut) if dUt_path is None else dUt_path(tn)
        A = pde_operator(sys, grid, Ut, dUt)
        pairing = integrate(grid, np.sum(A * pair.d2_eta(Ut, U - Ut), axis=-1))
        terms.append(traj.tau * (-Kt * (R + E[n - 1] - mech[n]) + W + pairing))
    return math.fsum(terms)

# }}}


# {{{ weak-strong

@dataclass
class RelativeEntropyTrace:
    times: np.ndarray
    R: np.ndarray
    W: np.ndarray
    gap: np.ndarray
    K_tilde: float
    slack: np.ndarray
    bound: np.ndarray

    @property
    def satisfied(self) -> np.ndarray:
        return self.R + self.gap <= self.bound

    def rows(self):
        for k in range(len(self.times)):
            yield (self.times[k], self.R[k], self.W[k], self.gap[k], self.bound[k])


def weak_strong_report(sys: SystemSpec, traj: Trajectory,
                       oracle: Callable[[float], np.ndarray]) -> RelativeEntropyTrace:
    """Compare a trajectory with a classical solution through the Gronwall bound.

    ``oracle(t)`` returns the classical state at time ``t`` on the same grid.
    """
    grid = traj.grid
    pair = sys.pair
    times = traj.times
    mech = mechanical_energies(traj)
    R, W, gap, Ks = [], [], [], []
    for n, U in enumerate(traj.states):
        Ut = oracle(times[n])
        if Ut.shape != U.shape:
            raise ContractError("oracle state does not match the trajectory grid")
        R.append(relative_entropy(sys, grid, U, Ut))
        W.append(relative_form(sys, grid, U, Ut))
        gap.append(traj.energies[n] - mech[n])
        Ks.append(sys.weight_from_grads(gradient(grid, pair.d_eta(Ut))))
    R = np.array(R)
    gap = np.array(gap)
    K_tilde = float(max(Ks))
    slack = np.arange(len(times)) * traj.tol
    bound = (R[0] + gap[0] + slack) * np.exp(K_tilde * times)
    return RelativeEntropyTrace(times, R, np.array(W), gap, K_tilde, slack, bound)

# }}}


# {{{ solution set

def mix_trajectories(traj1: Trajectory, traj2: Trajectory, lam: float) -> Trajectory:
    if traj1.grid != traj2.grid or traj1.N != traj2.N or traj1.T != traj2.T:
        raise ContractError("trajectories must share grid and time steps")
    if not np.array_equal(traj1.states[0], traj2.states[0]):
        raise ContractError("trajectories must share the initial state")
    states = [lam * a + (1.0 - lam) * b for a, b in zip(traj1.states, traj2.states)]
    energies = [lam * a + (1.0 - lam) * b for a, b in zip(traj1.energies, traj2.energies)]
    return Trajectory(traj1.sys, traj1.grid, traj1.T, traj1.N, states, energies, [],
                            max(traj1.tol, traj2.tol), traj1.cfg)


def solution_set_probe(sys: SystemSpec, traj1: Trajectory, traj2: Trajectory, lam: float,
                       tables: DictTables | None = None, points: int = 16) -> ResidualReport:
    """Window battery on the convex combination of two trajectories.

    The budget of each window is the same combination of the two input
    trajectories' certificate sums.
    """
    mixed = mix_trajectories(traj1, traj2, lam)
    c1 = np.concatenate([[0.0], np.cumsum([c.worst for c in traj1.certificates])])
    c2 = np.concatenate([[0.0], np.cumsum([c.worst for c in traj2.certificates])])
    scale = 1.0 + abs(mixed.energies[0])

    def budget(i, j):
        return lam * (c1[j] - c1[i]) + (1.0 - lam) * (c2[j] - c2[i]) + 1e-9 * scale

    return window_battery(sys, mixed, tables, points, budget=budget)

# }}}
