"""Sampling batteries for the structural assumptions on each system.

Each battery returns a :class:`BatteryResult`; the CLI ``check-hypothesis``
command and the acceptance suite run all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from evs.entropy import energy, fenchel_gap
from evs.systems import (
    SystemSpec, convexity_probe, entropy_flux_identity, reg_weight,
)
from evs.torus import Grid, TestFunction, build_dictionary, eval_test, make_grid, trig_test


@dataclass(frozen=True)
class BatteryResult:
    name: str
    passed: bool
    worst: float
    tol: float
    count: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e} (tol {self.tol:.1e}, {self.count} probes)"


# {{{ random samples

def random_states(sys: SystemSpec, rng: np.random.Generator, count: int,
                  scale: float = 2.0) -> np.ndarray:
    """Pointwise samples in the interior of the entropy domain, shape ``(count, m)``."""
    y = scale * rng.standard_normal((count, sys.m))
    if sys.name == "compressible":
        y[:, 0] = np.exp(rng.uniform(np.log(1e-3), np.log(20.0), count))
    return y


def random_duals(sys: SystemSpec, rng: np.random.Generator, count: int,
                 scale: float = 2.0) -> np.ndarray:
    return scale * rng.standard_normal((count, sys.m))


def random_test_function(sys: SystemSpec, rng: np.random.Generator, N: int = 2,
                         amp: float = 1.0, positive_density: bool = True) -> TestFunction:
    """Random admissible combination of dictionary members (modes up to ``N``)."""
    members = [phi for phi in build_dictionary(sys, N)
               if phi.label != "zero" and not phi.label.startswith("-")
               and not (phi.label == "const" and np.sum(phi.const) < 0)]
    coefs = amp * rng.standard_normal(len(members))
    modes = np.concatenate([phi.modes for phi in members])
    cos = np.concatenate([c * phi.cos for c, phi in zip(coefs, members)], axis=1)
    sin = np.concatenate([c * phi.sin for c, phi in zip(coefs, members)], axis=1)
    const = sum(c * phi.const for c, phi in zip(coefs, members))
    if sys.name == "compressible" and positive_density:
        # keep rho + |phi|^2/2 > 0 so the conjugate stays off its clamp
        const = np.array(const, dtype=float)
        const[0] = np.sum(np.abs(cos[0])) + np.sum(np.abs(sin[0])) + 0.5
    return trig_test(modes, cos, sin, const, tag=sys.name)


def random_field(sys: SystemSpec, grid: Grid, rng: np.random.Generator, N: int = 3,
                 amp: float = 0.5) -> np.ndarray:
    """Band-limited random state in the discrete admissible set."""
    phi = random_test_function(sys, rng, N, amp, positive_density=False)
    U, _ = eval_test(phi, grid)
    if sys.name == "compressible":
        U = U.copy()
        U[..., 0] = np.exp(U[..., 0] - np.mean(U[..., 0]))
    return sys.project(grid, U)

# }}}


# {{{ batteries

def fenchel_battery(sys: SystemSpec, rng: np.random.Generator, samples: int = 10_000,
                    tol: float = 1e-10) -> BatteryResult:
    y = random_states(sys, rng, samples)
    z = random_duals(sys, rng, samples)
    gap = fenchel_gap(sys.pair, y, z)
    # equality case y = D eta*(z)
    eq = fenchel_gap(sys.pair, sys.pair.d_eta_star(z), z)
    scale = 1.0 + np.abs(sys.pair.eta_star(z))
    worst_neg = float(np.max(-gap))
    worst_eq = float(np.max(np.abs(eq) / scale))
    passed = worst_neg <= tol and worst_eq <= tol
    return BatteryResult("fenchel-gap", passed, max(worst_neg, worst_eq), tol, 2 * samples)


def entropy_flux_battery(sys: SystemSpec, rng: np.random.Generator, samples: int = 50,
                         N: int = 2, tol: float = 1e-8) -> BatteryResult:
    n = 128 if sys.name == "compressible" else 64
    grid = make_grid(sys.d, [n] * sys.d)
    worst = 0.0
    for _ in range(samples):
        phi = random_test_function(sys, rng, N)
        vals, _ = eval_test(phi, grid)
        scale = 1.0 + energy(sys.pair, grid, sys.pair.d_eta_star(vals))
        val, _ = entropy_flux_identity(sys, grid, phi)
        worst = max(worst, abs(val) / scale)
    return BatteryResult("entropy-flux-identity", worst <= tol, worst, tol, samples)


def flux_bound_battery(sys: SystemSpec, rng: np.random.Generator,
                       samples: int = 10_000) -> BatteryResult:
    y = random_states(sys, rng, samples, scale=5.0)
    F = sys.flux(y)
    norms = np.linalg.norm(F, ord=2, axis=(-2, -1))
    ratio = norms / (sys.pair.eta(y) + 1.0)
    C = sys.flux_bound_constant
    worst = float(np.max(ratio))
    return BatteryResult("flux-bound", worst <= C, worst, C, samples)


def homogeneity_battery(sys: SystemSpec, rng: np.random.Generator, samples: int = 20,
                        tol: float = 1e-12) -> BatteryResult:
    grid = make_grid(sys.d, [32] * sys.d)
    worst = 0.0
    for _ in range(samples):
        phi = random_test_function(sys, rng)
        K = reg_weight(sys, grid, phi)
        if K < 0:
            worst = math.inf
        for alpha in (0.5, 2.0, 10.0):
            Ka = reg_weight(sys, grid, phi.scaled(alpha))
            worst = max(worst, abs(Ka - alpha * K) / max(1.0, alpha * K))
    worst = max(worst, reg_weight(sys, grid, random_test_function(sys, rng).scaled(0.0)))
    return BatteryResult("K-homogeneity", worst <= tol, worst, tol, 3 * samples)


def convexity_battery(sys: SystemSpec, rng: np.random.Generator, samples: int = 100,
                      tol: float = 1e-10) -> BatteryResult:
    """Jensen slack and non-negativity of ``U -> int F(U):grad(phi) + K(phi) E(U)``.

    For compressible Euler non-negativity is probed with the density test
    component switched off, since the mass row contributes a term linear in
    the momentum.
    """
    grid = make_grid(sys.d, [32] * sys.d)
    worst = -math.inf
    for _ in range(samples):
        phi = random_test_function(sys, rng)
        U1 = random_field(sys, grid, rng)
        U2 = random_field(sys, grid, rng)
        lam = float(rng.uniform())
        slack, _ = convexity_probe(sys, grid, phi, U1, U2, lam)
        if sys.name == "compressible":
            cos = np.array(phi.cos)
            sin = np.array(phi.sin)
            const = np.array(phi.const)
            cos[0] = 0.0
            sin[0] = 0.0
            const[0] = 0.0
            phi = TestFunction(phi.modes, cos, sin, const, phi.tag)
        _, jm = convexity_probe(sys, grid, phi, U1, U2, lam)
        scale = 1.0 + energy(sys.pair, grid, U1) + energy(sys.pair, grid, U2)
        worst = max(worst, slack / scale, -jm / scale)
    return BatteryResult("convexity", worst <= tol, worst, tol, samples)


def run_all(sys: SystemSpec, seed: int = 0, fenchel_samples: int = 10_000,
            flux_samples: int = 50, convexity_samples: int = 100) -> list[BatteryResult]:
    rng = np.random.default_rng(seed)
    return [
        fenchel_battery(sys, rng, fenchel_samples),
        entropy_flux_battery(sys, rng, flux_samples),
        flux_bound_battery(sys, rng, fenchel_samples),
        homogeneity_battery(sys, rng),
        convexity_battery(sys, rng, convexity_samples),
    ]

# }}}
