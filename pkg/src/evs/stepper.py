"""Constrained min-max time stepping with certified discrete inequalities.

Each step looks for ``U`` with ``E(U) <= E(U_prev)`` such that, for every test
function ``phi`` of a finite dictionary,

    f_tau(U | phi) = (1 + tau K(phi)) (E(U) - E(U_prev)) - <U - U_prev, phi>
                     + tau int F(U) : grad(phi) <= tol.

The step is produced by an implicit conservative predictor that satisfies the
weak equations exactly on the dictionary modes, followed by an independent
certification pass. A subgradient (Polyak) correction on
``H(U) = max_k f_tau(U | phi_k)`` and a feasibility bisection serve as fallback.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from evs.entropy import energy
from evs.errors import ContractError, StepError
from evs.systems import CompressibleEuler, SystemSpec
from evs.torus import (
    Dictionary, Grid, TestFunction, build_dictionary, eval_test, fft, ifft,
    integrate, leray_hat, tabulate, wavenumbers,
)

logger = logging.getLogger(__name__)

ASCENT_RADIUS = 10.0
ASCENT_HALVINGS = 12


# {{{ configuration and certificates

@dataclass(frozen=True)
class StepConfig:
    tau: float
    dict_modes: int = 2
    tol_step: float | None = None
    max_outer: int = 5000
    bisect_tol: float = 1e-12
    warm_start: bool = True
    svv_coef: float = 1.0
    svv_escalations: int = 3
    newton_rtol: float = 1e-12
    max_newton: int = 60
    ascent: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ContractError("time step must be positive")
        if self.tol_step is not None and not self.tol_step > 0:
            raise ContractError("tol_step must be positive")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_tol(E0: float) -> float:
    return 1e-8 * (1.0 + E0)


@dataclass(frozen=True)
class StepCertificate:
    worst: float
    worst_index: int
    dict_residual: float
    ascent_residual: float
    iterations: int
    E_prev: float
    E_next: float
    slack: float
    tol: float
    svv_level: int = 0
    fallback: bool = False

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol and self.slack <= self.tol

# }}}


# {{{ dictionary tables

@dataclass(frozen=True)
class DictTables:
    """Nodal values, gradients and regularity weights of every dictionary member."""

    dictionary: Dictionary
    grid: Grid
    values: np.ndarray
    grads: np.ndarray
    weights: np.ndarray
    basis: tuple[int, ...]

    def __len__(self) -> int:
        return self.values.shape[0]


def prepare(sys: SystemSpec, grid: Grid, dictionary: Dictionary | int) -> DictTables:
    if isinstance(dictionary, int):
        dictionary = build_dictionary(sys, dictionary)
    vals, grads = tabulate(dictionary, grid)
    weights = sys.weight_from_grads(grads, batch_ndim=1)
    # one representative per +/- pair forms the ascent basis
    basis = tuple(i for i, phi in enumerate(dictionary)
                  if phi.label != "zero" and not _is_negative(phi))
    return DictTables(dictionary, grid, vals, grads, np.asarray(weights), basis)


def _is_negative(phi: TestFunction) -> bool:
    if phi.label.startswith("-"):
        return True
    if phi.label == "const":
        return float(np.sum(phi.const)) < 0
    return False


def _threads() -> int:
    """Worker count from ``EVS_THREADS`` (default: all cores)."""
    try:
        n = int(os.environ.get("EVS_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(n: int) -> ThreadPoolExecutor:
    if n not in _POOLS:
        _POOLS[n] = ThreadPoolExecutor(n)
    return _POOLS[n]


def _fsum_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    """Exactly rounded quadrature of each row; the result does not depend on worker count."""
    vol = grid.cell_volume
    flat = rows.reshape(rows.shape[0], -1)

    def one(i):
        return math.fsum(flat[i].tolist()) * vol

    nthreads = _threads()
    if nthreads > 1 and flat.shape[0] > 1:
        out = list(_pool(nthreads).map(one, range(flat.shape[0])))
    else:
        out = [one(i) for i in range(flat.shape[0])]
    return np.array(out)

# }}}


# {{{ discrete inequality

def f_tau(sys: SystemSpec, grid: Grid, U: np.ndarray, phi: TestFunction,
          U_prev: np.ndarray, tau: float) -> float:
    E = energy(sys.pair, grid, U)
    E_prev = energy(sys.pair, grid, U_prev)
    if not (math.isfinite(E) and math.isfinite(E_prev)):
        raise ContractError("states must have finite entropy")
    vals, grads = eval_test(phi, grid)
    K = sys.weight_from_grads(grads)
    pair_term = integrate(grid, np.sum((U - U_prev) * vals, axis=-1))
    flux_term = integrate(grid, np.sum(sys.flux(U) * grads, axis=(-2, -1)))
    return (1.0 + tau * K) * (E - E_prev) - pair_term + tau * flux_term


def residuals(sys: SystemSpec, U: np.ndarray, U_prev: np.ndarray, tau: float,
              tables: DictTables, E: float | None = None,
              E_prev: float | None = None) -> np.ndarray:
    """``f_tau(U | phi_k)`` for every dictionary member, in dictionary order."""
    grid = tables.grid
    if E is None:
        E = energy(sys.pair, grid, U)
    if E_prev is None:
        E_prev = energy(sys.pair, grid, U_prev)
    if not (math.isfinite(E) and math.isfinite(E_prev)):
        raise ContractError("states must have finite entropy")
    dU = U - U_prev
    F = sys.flux(U)
    rows = tau * np.einsum("...id,k...id->k...", F, tables.grads) \
        - np.einsum("...i,k...i->k...", dU, tables.values)
    lin = _fsum_rows(grid, rows)
    return (1.0 + tau * tables.weights) * (E - E_prev) + lin


def certify(sys: SystemSpec, grid: Grid, U_next: np.ndarray, U_prev: np.ndarray,
            tau: float, tables: DictTables | Dictionary | int,
            tol: float | None = None) -> StepCertificate:
    if not isinstance(tables, DictTables):
        tables = prepare(sys, grid, tables)
    E = energy(sys.pair, grid, U_next)
    E_prev = energy(sys.pair, grid, U_prev)
    if tol is None:
        tol = default_tol(E_prev)
    if not math.isfinite(E):
        return StepCertificate(math.inf, -1, math.inf, -math.inf, 0, E_prev, E,
                               math.inf, tol)
    r = residuals(sys, U_next, U_prev, tau, tables, E, E_prev)
    k = int(np.argmax(r))
    return StepCertificate(float(r[k]), k, float(r[k]), -math.inf, 0, E_prev, E,
                           E - E_prev, tol)


def ascent_residual(sys: SystemSpec, U: np.ndarray, U_prev: np.ndarray, tau: float,
                    tables: DictTables, E: float, E_prev: float) -> float:
    """Largest ``f_tau`` over sign/scale probes of dictionary combinations.

    ``f_tau`` is ``(1 + tau K(c)) dE + sum_b c_b l_b`` in the basis coefficients;
    the linear part is maximized on the box of radius 10 by ``c = 10 sign(l)``,
    and dyadic shrinkings of that corner trade it against the weight term.
    """
    if not tables.basis:
        return -math.inf
    idx = np.array(tables.basis)
    dU = U - U_prev
    F = sys.flux(U)
    rows = tau * np.einsum("...id,k...id->k...", F, tables.grads[idx]) \
        - np.einsum("...i,k...i->k...", dU, tables.values[idx])
    ell = _fsum_rows(tables.grid, rows)
    c = ASCENT_RADIUS * np.sign(ell)
    if not np.any(c):
        return E - E_prev
    G = np.tensordot(c, tables.grads[idx], axes=1)
    K1 = sys.weight_from_grads(G)
    lin1 = math.fsum((c * ell).tolist())
    best = -math.inf
    for j in range(ASCENT_HALVINGS + 1):
        s = 0.5 ** j
        best = max(best, (1.0 + tau * s * K1) * (E - E_prev) + s * lin1)
    return best

# }}}


# {{{ implicit predictor

class _Predictor:
    """Residual ``U - U_prev + tau (P div F(U) + eps S(D eta(U)))`` and its derivative.

    ``S`` is a spectral vanishing viscosity acting on entropy variables: it is
    zero on all wavenumbers ``|k| <= k_c`` (which include every dictionary
    mode) and positive semidefinite above, so it leaves the weak equations for
    dictionary members untouched and only removes entropy.
    """

    def __init__(self, sys: SystemSpec, grid: Grid, tau: float, dict_modes: int,
                 svv_coef: float):
        self.sys = sys
        self.grid = grid
        self.tau = tau
        self.m = sys.m
        ks = wavenumbers(grid)
        self.ks = [k.reshape(k.shape + (1,)) for k in ks]
        # true |k| (Nyquist kept) for the viscosity symbol
        true_ks = []
        for axis, ni in enumerate(grid.n):
            if axis == grid.d - 1:
                k = np.fft.rfftfreq(ni, 1.0 / ni)
            else:
                k = np.abs(np.fft.fftfreq(ni, 1.0 / ni))
            shape = [1] * grid.d
            shape[axis] = k.size
            true_ks.append(k.reshape(shape))
        kabs = np.sqrt(sum(k * k for k in true_ks))
        kmax = min(grid.n) / 2.0
        kc = max(kmax / 2.0, dict_modes * math.sqrt(grid.d) + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(kabs > kc, np.exp(-((kabs - kmax) / (kabs - kc)) ** 2), 0.0)
        self.sigma = ((2.0 * np.pi * kabs) ** 2 * q)[..., None]
        self.eps = svv_coef / kmax
        self.kc = kc
        self.solenoidal = sys.solenoidal_blocks
        self._precond_weights = None

    def _div_hat(self, F):
        Fh = fft(self.grid, F)
        acc = 0
        for j, k in enumerate(self.ks):
            acc = acc + 2j * np.pi * k * Fh[..., j]
        return acc

    def _project_hat(self, vh):
        d = self.grid.d
        for s in self.solenoidal:
            vh[..., s:s + d] = leray_hat(self.grid, vh[..., s:s + d])
        return vh

    def operator(self, U):
        sys = self.sys
        rh = self._project_hat(self._div_hat(sys.flux(U)))
        rh = rh + self.eps * self.sigma * fft(self.grid, sys.pair.d_eta(U))
        return ifft(self.grid, rh)

    def residual(self, U, U_prev):
        return U - U_prev + self.tau * self.operator(U)

    def jvp(self, U, dU):
        sys = self.sys
        rh = self._project_hat(self._div_hat(sys.flux_jvp(U, dU)))
        rh = rh + self.eps * self.sigma * fft(self.grid, sys.pair.d2_eta(U, dU))
        return dU + self.tau * ifft(self.grid, rh)

    def precond(self, U, R):
        w = np.mean(self.sys.pair.d2_eta(U, np.ones_like(U)).reshape(-1, self.m), axis=0)
        w = np.maximum(w, 0.0)
        Rh = fft(self.grid, R)
        return ifft(self.grid, Rh / (1.0 + self.tau * self.eps * self.sigma * w))

    def solve(self, U_prev, max_newton: int, rtol: float) -> tuple[np.ndarray, int]:
        shape = U_prev.shape
        size = U_prev.size
        U = U_prev.copy()
        atol = rtol * (1.0 + float(np.max(np.abs(U_prev), initial=0.0)))
        compressible = isinstance(self.sys, CompressibleEuler)
        R = self.residual(U, U_prev)
        rnorm = float(np.max(np.abs(R), initial=0.0))
        it = 0
        for it in range(1, max_newton + 1):
            if rnorm <= atol:
                it -= 1
                break
            Ufix = U

            A = spla.LinearOperator((size, size), dtype=float,
                                    matvec=lambda x: self.jvp(Ufix, x.reshape(shape)).ravel())
            Minv = spla.LinearOperator((size, size), dtype=float,
                                       matvec=lambda x: self.precond(Ufix, x.reshape(shape)).ravel())
            dU, _ = spla.gmres(A, -R.ravel(), rtol=1e-6, atol=0.0, restart=60,
                               maxiter=10, M=Minv)
            dU = dU.reshape(shape)
            s = 1.0
            while True:
                Ut = U + s * dU
                ok = not compressible or np.min(Ut[..., 0]) > 0
                if ok:
                    Rt = self.residual(Ut, U_prev)
                    rt = float(np.max(np.abs(Rt)))
                    if rt < (1.0 - 1e-4 * s) * rnorm or s < 1e-6:
                        break
                s *= 0.5
                if s < 1e-12:
                    raise StepError("predictor line search failed", state=U)
            U, R, rnorm = Ut, Rt, rt
        else:
            logger.warning("predictor stopped at residual %.3e", rnorm)
        return U, it

# }}}


# {{{ fallback

def _subgradient(sys, grid, U, tau, tables, k):
    vals = tables.values[k]
    grads = tables.grads[k]
    return (1.0 + tau * tables.weights[k]) * sys.pair.d_eta(U) - vals \
        + tau * sys.flux_vjp(U, grads)


def _restore_feasibility(sys, grid, U, U_prev, E_prev, tol):
    if energy(sys.pair, grid, U) <= E_prev:
        return U
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if energy(sys.pair, grid, U_prev + mid * (U - U_prev)) <= E_prev:
            lo = mid
        else:
            hi = mid
    return U_prev + lo * (U - U_prev)


def polyak(sys: SystemSpec, grid: Grid, U0: np.ndarray, U_prev: np.ndarray, tau: float,
           tables: DictTables, tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    """Subgradient descent with Polyak steps on ``H(U) = max_k f_tau(U | phi_k)``."""
    E_prev = energy(sys.pair, grid, U_prev)
    U = U0.copy()
    best, best_val = U.copy(), math.inf
    target = -0.5 * tol
    it = 0
    for it in range(1, max_iter + 1):
        E = energy(sys.pair, grid, U)
        if not math.isfinite(E):
            break
        r = residuals(sys, U, U_prev, tau, tables, E, E_prev)
        k = int(np.argmax(r))
        H = max(float(r[k]), E - E_prev)
        if H < best_val:
            best, best_val = U.copy(), H
        if H <= target:
            break
        g = _subgradient(sys, grid, U, tau, tables, k)
        gn = integrate(grid, np.sum(g * g, axis=-1))
        if gn == 0.0:
            break
        Un = sys.project(grid, U - (H - target) / gn * g)
        U = _restore_feasibility(sys, grid, Un, U_prev, E_prev, 1e-12)
    return best, it

# }}}


# {{{ step and run

def step(sys: SystemSpec, grid: Grid, U_prev: np.ndarray, cfg: StepConfig,
         tables: DictTables | None = None) -> tuple[np.ndarray, StepCertificate]:
    U_prev = np.asarray(U_prev, dtype=float)
    if U_prev.shape != grid.shape + (sys.m,):
        raise ContractError(f"state shape {U_prev.shape} does not match grid/system")
    E_prev = energy(sys.pair, grid, U_prev)
    if not math.isfinite(E_prev):
        raise ContractError("previous state has infinite entropy")
    if tables is None:
        tables = prepare(sys, grid, cfg.dict_modes)
    tol = cfg.tol_step if cfg.tol_step is not None else default_tol(E_prev)
    tau = cfg.tau

    if isinstance(sys, CompressibleEuler) and np.any(U_prev[..., 0] <= 0.0):
        # entropy variables do not exist at vacuum nodes; only the stationary
        # candidate can be offered, and it is accepted only if it certifies
        cert = full_certificate(sys, grid, U_prev.copy(), U_prev, tau, tables, tol, cfg,
                                0, 0, False)
        if cert.ok:
            return U_prev.copy(), cert
        raise StepError("state contains vacuum nodes and the stationary candidate "
                        f"does not certify ({cert.worst:.3e} > {tol:.3e})",
                        state=U_prev.copy(), certificate=cert)

    best = None
    total_iters = 0
    for level in range(cfg.svv_escalations + 1):
        pred = _Predictor(sys, grid, tau, cfg.dict_modes, cfg.svv_coef * 4.0 ** level)
        try:
            U, its = pred.solve(U_prev, cfg.max_newton, cfg.newton_rtol)
        except StepError:
            continue
        total_iters += its
        U = sys.project(grid, U)
        cert = full_certificate(sys, grid, U, U_prev, tau, tables, tol, cfg,
                                 total_iters, level, False)
        if best is None or cert.worst < best[1].worst:
            best = (U, cert)
        if cert.ok:
            return U, cert

    start = best[0] if best is not None else U_prev
    U, its = polyak(sys, grid, start, U_prev, tau, tables, tol, cfg.max_outer)
    total_iters += its
    U = _restore_feasibility(sys, grid, U, U_prev, E_prev, cfg.bisect_tol)
    cert = full_certificate(sys, grid, U, U_prev, tau, tables, tol, cfg,
                             total_iters, cfg.svv_escalations, True)
    if not cert.ok:
        raise StepError(f"step not certified: worst residual {cert.worst:.3e} > {tol:.3e}",
                        state=U, certificate=cert)
    return U, cert


def full_certificate(sys, grid, U, U_prev, tau, tables, tol, cfg, iters, level, fallback):
    base = certify(sys, grid, U, U_prev, tau, tables, tol)
    asc = -math.inf
    if cfg.ascent and math.isfinite(base.E_next):
        asc = ascent_residual(sys, U, U_prev, tau, tables, base.E_next, base.E_prev)
    worst = max(base.dict_residual, asc)
    return replace(base, worst=worst, ascent_residual=asc, iterations=iters,
                   svv_level=level, fallback=fallback)


@dataclass
class Trajectory:
    sys: SystemSpec
    grid: Grid
    T: float
    N: int
    states: list[np.ndarray]
    energies: list[float]
    certificates: list[StepCertificate]
    tol: float
    cfg: StepConfig
    fingerprint: str = ""
    complete: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.array([n * self.T / self.N for n in range(len(self.states))])

    def time(self, n: int) -> float:
        return n * self.T / self.N


def run(sys: SystemSpec, grid: Grid, U0: np.ndarray, T: float, N: int,
        cfg: StepConfig | None = None, tables: DictTables | None = None,
        progress=None) -> Trajectory:
    if N < 1 or not T > 0:
        raise ContractError("need T > 0 and N >= 1")
    tau = T / N
    if cfg is None:
        cfg = StepConfig(tau=tau)
    elif cfg.tau != tau:
        cfg = replace(cfg, tau=tau)
    U0 = np.asarray(U0, dtype=float)
    E0 = energy(sys.pair, grid, U0)
    if not math.isfinite(E0):
        raise ContractError("initial state has infinite entropy")
    tol = cfg.tol_step if cfg.tol_step is not None else default_tol(E0)
    cfg = replace(cfg, tol_step=tol)
    if tables is None:
        tables = prepare(sys, grid, cfg.dict_modes)
    traj = Trajectory(sys, grid, T, N, [U0.copy()], [E0], [], tol, cfg,
                      fingerprint=cfg.fingerprint())
    U = U0
    for n in range(1, N + 1):
        try:
            U, cert = step(sys, grid, U, cfg, tables)
        except StepError as exc:
            traj.complete = False
            exc.trajectory = traj
            raise
        traj.states.append(U)
        traj.energies.append(cert.E_next)
        traj.certificates.append(cert)
        if progress is not None:
            progress(n, traj)
    return traj


def prolongate(traj: Trajectory, t: float) -> tuple[np.ndarray, float, float]:
    """``(U_bar(t), E_over(t), E_under(t))`` of the piecewise-constant interpolants.

    ``U_bar`` and ``E_over`` take step ``n`` values on ``(t_{n-1}, t_n]``;
    ``E_under`` takes ``E_{n-1}`` on ``[t_{n-1}, t_n)`` and ``E_N`` at ``T``.
    """
    times = traj.times
    last = len(traj.states) - 1
    if not 0.0 <= t <= times[last]:
        raise ContractError(f"time {t} outside [0, {times[last]}]")
    if t == 0.0:
        n = 0
    else:
        n = int(np.searchsorted(times, t, side="left"))
    j = min(int(np.searchsorted(times, t, side="right")) - 1, last)
    return traj.states[n], traj.energies[n], traj.energies[j]


def prolongation_gap(traj: Trajectory) -> float:
    """``int_0^T |E_over - E_under| dt`` computed exactly from the step values."""
    E = traj.energies
    return traj.tau * math.fsum(abs(E[n] - E[n - 1]) for n in range(1, len(E)))

# }}}
