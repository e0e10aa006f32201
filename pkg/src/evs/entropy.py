"""Entropy pairs ``(eta, eta*)`` and total-entropy bookkeeping.

All evaluators are vectorized: states and dual variables are arrays whose last
axis has length ``m``; scalar-valued results drop that axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from evs.errors import ConfigError, ContractError
from evs.torus import Grid, TestFunction, eval_test, integrate

BISECT_RTOL = 1e-10
BISECT_MAXIT = 200


# {{{ pressure laws

class PressureLaw:
    """Barotropic pressure ``p(h)`` with potential ``P`` and ``Q = P'``.

    Subclasses provide ``p``, ``P``, ``Q`` and ``dQ``; :meth:`Q_inv` falls back to
    a safeguarded monotone Newton iteration.
    """

    def p(self, h):
        raise NotImplementedError

    def P(self, h):
        raise NotImplementedError

    def Q(self, h):
        raise NotImplementedError

    def dQ(self, h):
        raise NotImplementedError

    def Q_inv(self, w):
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w)
        for idx, wi in np.ndenumerate(w):
            if wi <= 0.0:
                continue
            lo, hi = 0.0, 1.0
            while self.Q(hi) < wi:
                hi *= 2.0
            x = 0.5 * (lo + hi)
            for _ in range(200):
                f = self.Q(x) - wi
                if f > 0:
                    hi = x
                else:
                    lo = x
                step = x - f / self.dQ(x)
                x = step if lo < step < hi else 0.5 * (lo + hi)
                if hi - lo <= 1e-15 * hi:
                    break
            out[idx] = x
        return out


@dataclass(frozen=True)
class GammaLaw(PressureLaw):
    """``p(h) = a h^gamma`` with closed-form inverse of ``Q``."""

    a: float
    gamma: float

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"pressure constant a must be positive, got {self.a}")
        if not self.gamma > 1:
            raise ConfigError(f"adiabatic exponent must exceed 1, got {self.gamma}")

    def p(self, h):
        return self.a * np.power(h, self.gamma)

    def P(self, h):
        return self.a * np.power(h, self.gamma) / (self.gamma - 1.0)

    def Q(self, h):
        g = self.gamma
        return self.a * g * np.power(h, g - 1.0) / (g - 1.0)

    def dQ(self, h):
        return self.a * self.gamma * np.power(h, self.gamma - 2.0)

    def Q_inv(self, w):
        g = self.gamma
        w = np.maximum(np.asarray(w, dtype=float), 0.0)
        return np.power((g - 1.0) * w / (self.a * g), 1.0 / (g - 1.0))

# }}}


# {{{ entropy pairs

class EntropyPair:
    m: int

    def eta(self, y):
        raise NotImplementedError

    def eta_star(self, z):
        raise NotImplementedError

    def d_eta_star(self, z):
        raise NotImplementedError

    def d_eta(self, y):
        """Gradient of ``eta`` at interior points."""
        raise NotImplementedError

    def d2_eta(self, y, dy):
        """Hessian of ``eta`` at ``y`` applied to ``dy``."""
        raise NotImplementedError

    def in_domain(self, y):
        return np.isfinite(self.eta(y))


@dataclass(frozen=True)
class QuadraticPair(EntropyPair):
    """``eta(y) = sum_c w_c y_c^2 / 2``."""

    weights: tuple[float, ...]

    def __post_init__(self):
        if any(not w > 0 for w in self.weights):
            raise ConfigError("quadratic entropy weights must be positive")

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def _w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def eta(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.sum(self._w * y * y, axis=-1)

    def eta_star(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * np.sum(z * z / self._w, axis=-1)

    def d_eta_star(self, z):
        return np.asarray(z, dtype=float) / self._w

    def d_eta(self, y):
        return self._w * np.asarray(y, dtype=float)

    def d2_eta(self, y, dy):
        return self._w * np.asarray(dy, dtype=float)


@dataclass(frozen=True)
class CompressiblePair(EntropyPair):
    """``eta(h, m) = |m|^2 / (2h) + P(h)``; zero at vacuum, infinite outside."""

    law: PressureLaw
    d: int

    @property
    def m(self) -> int:
        return self.d + 1

    def in_domain(self, y):
        y = np.asarray(y, dtype=float)
        h = y[..., 0]
        mom = y[..., 1:]
        return (h > 0) | ((h == 0) & np.all(mom == 0, axis=-1))

    def eta(self, y):
        y = np.asarray(y, dtype=float)
        h = y[..., 0]
        m2 = np.sum(y[..., 1:] ** 2, axis=-1)
        pos = h > 0
        hs = np.where(pos, h, 1.0)
        val = np.where(pos, 0.5 * m2 / hs + self.law.P(hs), 0.0)
        return np.where(self.in_domain(y), val, np.inf)

    def _w(self, z):
        z = np.asarray(z, dtype=float)
        return np.maximum(z[..., 0] + 0.5 * np.sum(z[..., 1:] ** 2, axis=-1), 0.0)

    def eta_star(self, z):
        return self.law.p(self.law.Q_inv(self._w(z)))

    def d_eta_star(self, z):
        z = np.asarray(z, dtype=float)
        h = self.law.Q_inv(self._w(z))
        out = np.empty(z.shape)
        out[..., 0] = h
        out[..., 1:] = h[..., None] * z[..., 1:]
        return out

    def d_eta(self, y):
        y = np.asarray(y, dtype=float)
        h = y[..., 0]
        if np.any(h <= 0):
            raise ContractError("entropy gradient requires h > 0")
        u = y[..., 1:] / h[..., None]
        out = np.empty(y.shape)
        out[..., 0] = self.law.Q(h) - 0.5 * np.sum(u * u, axis=-1)
        out[..., 1:] = u
        return out

    def d2_eta(self, y, dy):
        y = np.asarray(y, dtype=float)
        dy = np.asarray(dy, dtype=float)
        h = y[..., 0]
        u = y[..., 1:] / h[..., None]
        dh = dy[..., 0]
        dm = dy[..., 1:]
        udm = np.sum(u * dm, axis=-1)
        out = np.empty(np.broadcast_shapes(y.shape, dy.shape))
        out[..., 0] = self.law.dQ(h) * dh + (np.sum(u * u, axis=-1) * dh - udm) / h
        out[..., 1:] = (dm - u * dh[..., None]) / h[..., None]
        return out


def eta(pair: EntropyPair, y):
    return pair.eta(y)


def eta_star(pair: EntropyPair, z):
    return pair.eta_star(z)


def d_eta_star(pair: EntropyPair, z):
    return pair.d_eta_star(z)


def fenchel_gap(pair: EntropyPair, y, z):
    """``eta(y) + eta*(z) - z.y``; infinite outside ``dom eta``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    e = pair.eta(y)
    with np.errstate(invalid="ignore"):
        gap = e + pair.eta_star(z) - np.sum(z * y, axis=-1)
    return np.where(np.isfinite(e), gap, np.inf)

# }}}


# {{{ total entropy

@dataclass(frozen=True)
class EnergyValue:
    value: float
    finite: bool

    def __float__(self) -> float:
        return self.value


def total_entropy(pair: EntropyPair, grid: Grid, U: np.ndarray) -> EnergyValue:
    e = pair.eta(U)
    if not np.all(np.isfinite(e)):
        return EnergyValue(math.inf, False)
    return EnergyValue(integrate(grid, e), True)


def energy(pair: EntropyPair, grid: Grid, U: np.ndarray) -> float:
    """Total entropy as a plain float (``inf`` outside the domain)."""
    return total_entropy(pair, grid, U).value


def energy_scale(pair: EntropyPair, grid: Grid, phi: TestFunction | np.ndarray,
                 target: float) -> float:
    """Find ``alpha`` in [0, 1] with ``E(D eta*(alpha phi)) = target`` by bisection."""
    vals = eval_test(phi, grid)[0] if isinstance(phi, TestFunction) else np.asarray(phi)

    def G(alpha: float) -> float:
        return energy(pair, grid, pair.d_eta_star(alpha * vals))

    g1 = G(1.0)
    tol = BISECT_RTOL * (1.0 + abs(target))
    if target < -tol or target > g1 + tol:
        raise ContractError(f"target {target} outside [0, {g1}]")
    if target <= 0.0:
        return 0.0
    if abs(g1 - target) <= tol:
        return 1.0
    lo, hi = 0.0, 1.0
    mid = 0.5
    for _ in range(BISECT_MAXIT):
        mid = 0.5 * (lo + hi)
        gm = G(mid)
        if abs(gm - target) <= tol:
            return mid
        if gm < target:
            lo = mid
        else:
            hi = mid
    return mid

# }}}


def make_quadratic(weights: Sequence[float]) -> QuadraticPair:
    return QuadraticPair(tuple(float(w) for w in weights))
