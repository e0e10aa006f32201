"""Concrete conservation laws ``d_t U + div F(U) = 0`` on the torus.

The flux is returned as an array of shape ``(..., m, d)`` whose row ``i`` is the
flux of component ``i``, so that ``F(U):grad(Phi) = sum_ij F_ij d_j Phi_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from evs import tensor
from evs.entropy import (
    CompressiblePair, EntropyPair, GammaLaw, QuadraticPair, energy,
)
from evs.errors import ConfigError, ContractError, DomainError
from evs.torus import Grid, TestFunction, eval_test, gradient, integrate, leray_project

SYSTEM_NAMES = ("burgers", "euler", "mhd", "compressible")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    m: int
    d: int
    pair: EntropyPair
    params: dict = field(default_factory=dict)
    solenoidal_blocks: tuple[int, ...] = ()

    # {{{ interface

    def flux(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def flux_jvp(self, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Directional derivative ``DF(y)[dy]``, same shape as :meth:`flux`."""
        raise NotImplementedError

    def flux_vjp(self, y: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Gradient of ``y -> F(y):G`` (pointwise), shape ``(..., m)``."""
        raise NotImplementedError

    def weight_pieces(self, grads: np.ndarray) -> list[tuple[float, np.ndarray]]:
        """Pointwise nonnegative quantities and coefficients; ``K = sum c * sup(q)``."""
        raise NotImplementedError

    @property
    def flux_bound_constant(self) -> float:
        raise NotImplementedError

    # }}}

    def weight_from_grads(self, grads: np.ndarray, batch_ndim: int = 0) -> np.ndarray | float:
        """Regularity weight from nodal gradients ``batch + grid.shape + (m, d)``."""
        node_axes = tuple(range(batch_ndim, grads.ndim - 2))
        total = 0.0
        for coef, q in self.weight_pieces(grads):
            total = total + coef * np.max(q, axis=node_axes)
        if batch_ndim == 0:
            return float(total)
        return np.asarray(total, dtype=float)

    def project(self, grid: Grid, U: np.ndarray) -> np.ndarray:
        """Map onto the discrete admissible set (divergence-free blocks)."""
        U = np.array(U, dtype=float)
        for s in self.solenoidal_blocks:
            U[..., s:s + self.d] = leray_project(grid, U[..., s:s + self.d])
        return U


def _check_tag(sys: SystemSpec, phi: TestFunction) -> None:
    if phi.tag not in (sys.name, "free"):
        raise ContractError(f"test function tagged {phi.tag!r} used with system {sys.name!r}")
    if phi.m != sys.m or phi.d != sys.d:
        raise ContractError("test function shape does not match system")


# {{{ Burgers

@dataclass(frozen=True)
class Burgers(SystemSpec):
    def flux(self, y):
        y = np.asarray(y, dtype=float)
        return (0.5 * y * y)[..., None]

    def flux_jvp(self, y, dy):
        return (np.asarray(y) * np.asarray(dy))[..., None]

    def flux_vjp(self, y, G):
        return np.asarray(y) * G[..., 0]

    def weight_pieces(self, grads):
        return [(1.0, np.maximum(-grads[..., 0, 0], 0.0))]

    @property
    def flux_bound_constant(self) -> float:
        return 1.0

# }}}


# {{{ incompressible Euler

@dataclass(frozen=True)
class IncompressibleEuler(SystemSpec):
    def flux(self, y):
        y = np.asarray(y, dtype=float)
        return y[..., :, None] * y[..., None, :]

    def flux_jvp(self, y, dy):
        y = np.asarray(y)
        dy = np.asarray(dy)
        return dy[..., :, None] * y[..., None, :] + y[..., :, None] * dy[..., None, :]

    def flux_vjp(self, y, G):
        return np.einsum("...ij,...j->...i", G + np.swapaxes(G, -1, -2), y)

    def weight_pieces(self, grads):
        S = tensor.batch_sym(grads)
        return [(2.0, tensor.batch_neg_part_norm(S))]

    @property
    def flux_bound_constant(self) -> float:
        return 2.0

# }}}


# {{{ MHD

@dataclass(frozen=True)
class MHD(SystemSpec):
    @property
    def mu(self) -> float:
        return self.params["mu"]

    def _split(self, y):
        d = self.d
        return y[..., :d], y[..., d:]

    def flux(self, y):
        y = np.asarray(y, dtype=float)
        v, H = self._split(y)
        vv = v[..., :, None] * v[..., None, :]
        HH = H[..., :, None] * H[..., None, :]
        Hv = H[..., :, None] * v[..., None, :]
        return np.concatenate([vv - self.mu * HH, Hv - np.swapaxes(Hv, -1, -2)], axis=-2)

    def flux_jvp(self, y, dy):
        v, H = self._split(np.asarray(y))
        dv, dH = self._split(np.asarray(dy))

        def outer(a, b):
            return a[..., :, None] * b[..., None, :]

        top = outer(dv, v) + outer(v, dv) - self.mu * (outer(dH, H) + outer(H, dH))
        bot = outer(dH, v) + outer(H, dv)
        bot = bot - np.swapaxes(bot, -1, -2)
        return np.concatenate([top, bot], axis=-2)

    def flux_vjp(self, y, G):
        d = self.d
        v, H = self._split(np.asarray(y))
        Gv, GH = G[..., :d, :], G[..., d:, :]
        Gvs = Gv + np.swapaxes(Gv, -1, -2)
        GHa = GH - np.swapaxes(GH, -1, -2)
        mv = np.einsum
        out_v = mv("...ij,...j->...i", Gvs, v) - mv("...ij,...j->...i", GHa, H)
        out_H = -self.mu * mv("...ij,...j->...i", Gvs, H) + mv("...ij,...j->...i", GHa, v)
        return np.concatenate([out_v, out_H], axis=-1)

    def weight_pieces(self, grads):
        d = self.d
        gphi = grads[..., :d, :]
        gpsi = grads[..., d:, :]
        sym = tensor.batch_spectral_norm(tensor.batch_sym(gphi))
        skw = tensor.batch_spectral_norm(tensor.batch_skw(gpsi))
        return [(2.0, sym), (2.0 / math.sqrt(self.mu), skw)]

    @property
    def flux_bound_constant(self) -> float:
        return 2.0 + 2.0 / math.sqrt(self.mu)

# }}}


# {{{ compressible Euler

@dataclass(frozen=True)
class CompressibleEuler(SystemSpec):
    @property
    def law(self) -> GammaLaw:
        return self.pair.law

    @property
    def alpha(self) -> float:
        return self.params["gamma"] - 1.0

    def flux(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("state has non-finite entries")
        h = y[..., 0]
        mom = y[..., 1:]
        pos = h > 0
        hs = np.where(pos, h, 1.0)
        eye = np.eye(self.d)
        block = mom[..., :, None] * mom[..., None, :] / hs[..., None, None] \
            + self.law.p(np.where(pos, h, 0.0))[..., None, None] * eye
        block = np.where(pos[..., None, None], block, 0.0)
        return np.concatenate([mom[..., None, :], block], axis=-2)

    def flux_jvp(self, y, dy):
        y = np.asarray(y)
        dy = np.asarray(dy)
        h = y[..., 0]
        pos = h > 0
        hs = np.where(pos, h, 1.0)
        u = y[..., 1:] / hs[..., None]
        dh = dy[..., 0]
        dm = dy[..., 1:]
        dp = self.law.dQ(hs) * hs * dh
        block = (dm[..., :, None] * u[..., None, :] + u[..., :, None] * dm[..., None, :]
                 - u[..., :, None] * u[..., None, :] * dh[..., None, None]
                 + dp[..., None, None] * np.eye(self.d))
        block = np.where(pos[..., None, None], block, 0.0)
        return np.concatenate([dm[..., None, :], block], axis=-2)

    def flux_vjp(self, y, G):
        y = np.asarray(y)
        h = y[..., 0]
        pos = h > 0
        hs = np.where(pos, h, 1.0)
        u = y[..., 1:] / hs[..., None]
        G0 = G[..., 0, :]
        Gm = G[..., 1:, :]
        Gs = Gm + np.swapaxes(Gm, -1, -2)
        out = np.empty(y.shape)
        uGu = np.einsum("...i,...ij,...j->...", u, Gm, u)
        tr = np.trace(Gm, axis1=-2, axis2=-1)
        out[..., 0] = np.where(pos, -uGu + self.law.dQ(hs) * hs * tr, 0.0)
        out[..., 1:] = G0 + np.where(pos[..., None], np.einsum("...ij,...j->...i", Gs, u), 0.0)
        return out

    def weight_pieces(self, grads):
        S = tensor.batch_sym(grads[..., 1:, :])
        c = max(2.0, self.alpha * self.d)
        return [(c, tensor.batch_neg_part_norm(S))]

    @property
    def flux_bound_constant(self) -> float:
        # |m| <= h + |m|^2/(2h), h <= 1 + (gamma-1) P / a, |m (x) m / h| = |m|^2/h, p = (gamma-1) P
        g = self.params["gamma"]
        a = self.params["a"]
        return max(3.0, (g - 1.0) * (1.0 + 1.0 / a))

    def project(self, grid, U):
        U = np.array(U, dtype=float)
        h = U[..., 0]
        vac = h <= 0
        U[..., 0] = np.where(vac, 0.0, h)
        U[..., 1:] = np.where(vac[..., None], 0.0, U[..., 1:])
        return U

# }}}


def make_system(name: str, d: int | None = None, *, gamma: float = 1.4, a: float = 1.0,
                mu: float = 1.0) -> SystemSpec:
    name = name.lower()
    if name == "burgers":
        if d not in (None, 1):
            raise ConfigError("Burgers is one-dimensional")
        return Burgers("burgers", 1, 1, QuadraticPair((1.0,)))
    if name == "euler":
        if d not in (None, 2):
            raise ConfigError("incompressible Euler is two-dimensional")
        return IncompressibleEuler("euler", 2, 2, QuadraticPair((1.0, 1.0)),
                                   solenoidal_blocks=(0,))
    if name == "mhd":
        if d not in (None, 2):
            raise ConfigError("MHD is two-dimensional")
        if not (mu > 0 and math.isfinite(mu)):
            raise ConfigError(f"mu must be positive, got {mu}")
        return MHD("mhd", 4, 2, QuadraticPair((1.0, 1.0, mu, mu)), {"mu": float(mu)},
                   solenoidal_blocks=(0, 2))
    if name == "compressible":
        d = 1 if d is None else d
        if d not in (1, 2):
            raise ConfigError("compressible Euler supports d = 1 or 2")
        law = GammaLaw(float(a), float(gamma))
        return CompressibleEuler("compressible", d + 1, d, CompressiblePair(law, d),
                                 {"gamma": float(gamma), "a": float(a)})
    raise ConfigError(f"unknown system {name!r}; expected one of {SYSTEM_NAMES}")


# {{{ operations on fields

def flux(sys: SystemSpec, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("state has non-finite entries")
    return sys.flux(y)


def _require_finite_energy(sys: SystemSpec, grid: Grid, U: np.ndarray) -> float:
    E = energy(sys.pair, grid, U)
    if not math.isfinite(E):
        raise ContractError("state has infinite entropy")
    return E


def flux_pairing(sys: SystemSpec, grid: Grid, U: np.ndarray, phi: TestFunction) -> float:
    """``int F(U) : grad(phi)``."""
    _check_tag(sys, phi)
    _require_finite_energy(sys, grid, U)
    _, g = eval_test(phi, grid)
    return integrate(grid, np.sum(sys.flux(U) * g, axis=(-2, -1)))


def reg_weight(sys: SystemSpec, grid: Grid, phi: TestFunction) -> float:
    _check_tag(sys, phi)
    _, g = eval_test(phi, grid)
    return sys.weight_from_grads(g)


def field_weight(sys: SystemSpec, grid: Grid, Z: np.ndarray) -> float:
    """Regularity weight of a nodal dual field, gradients taken spectrally."""
    return sys.weight_from_grads(gradient(grid, Z))


def entropy_flux_integral(sys: SystemSpec, grid: Grid, phi: TestFunction) -> float:
    vals, g = eval_test(phi, grid)
    y = sys.pair.d_eta_star(vals)
    return integrate(grid, np.sum(sys.flux(y) * g, axis=(-2, -1)))


def entropy_flux_identity(sys: SystemSpec, grid: Grid, phi: TestFunction) -> tuple[float, float]:
    """``int F(D eta*(phi)) : grad(phi)`` and its change under one grid doubling."""
    val = entropy_flux_integral(sys, grid, phi)
    n2 = [min(2 * ni, 4096) for ni in grid.n]
    if list(n2) == list(grid.n):
        return val, 0.0
    fine = Grid(grid.d, tuple(n2))
    return val, abs(entropy_flux_integral(sys, fine, phi) - val)


def convexity_probe(sys: SystemSpec, grid: Grid, phi: TestFunction, U1: np.ndarray,
                    U2: np.ndarray, lam: float) -> tuple[float, float]:
    """Jensen slack of ``J(U) = int F(U):grad(phi) + K(phi) E(U)`` and ``J`` at the mix."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError("lambda must lie in [0, 1]")
    _check_tag(sys, phi)
    _, g = eval_test(phi, grid)
    K = sys.weight_from_grads(g)

    def J(U):
        E = _require_finite_energy(sys, grid, U)
        return integrate(grid, np.sum(sys.flux(U) * g, axis=(-2, -1))) + K * E

    j1, j2 = J(U1), J(U2)
    jm = J(lam * U1 + (1.0 - lam) * U2)
    return jm - lam * j1 - (1.0 - lam) * j2, jm

# }}}
