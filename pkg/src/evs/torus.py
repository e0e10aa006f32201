"""Uniform periodic grids on the unit torus, test functions and dictionaries.

Fields are plain arrays of shape ``grid.shape + (m,)`` (node-major, component
last). Test functions are finite trigonometric expansions with analytic values
and gradients; gradients have shape ``grid.shape + (m, d)`` with entry
``[..., i, j] = d(phi_i)/dx_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from evs.errors import ConfigError, ContractError, DomainError

MIN_NODES = 8
MAX_NODES = 4096


# {{{ grid

@dataclass(frozen=True)
class Grid:
    d: int
    n: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.size

    def coords(self) -> list[np.ndarray]:
        """Nodal coordinates ``x_j = j / n``, broadcastable to :attr:`shape`."""
        out = []
        for axis, ni in enumerate(self.n):
            x = np.arange(ni, dtype=float) / ni
            shape = [1] * self.d
            shape[axis] = ni
            out.append(x.reshape(shape))
        return out

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(x, self.shape) for x in self.coords()]


def make_grid(d: int, n: Sequence[int]) -> Grid:
    if d not in (1, 2):
        raise ConfigError(f"dimension must be 1 or 2, got {d}")
    n = tuple(int(ni) for ni in n)
    if len(n) != d:
        raise ConfigError(f"expected {d} resolutions, got {len(n)}")
    for ni in n:
        if ni % 2 or not MIN_NODES <= ni <= MAX_NODES:
            raise ConfigError(f"resolution must be even and in [8, 4096], got {ni}")
    return Grid(d=d, n=n)


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Trapezoidal quadrature with exactly rounded (order independent) summation."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ContractError(f"field shape {f.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(f)):
        raise DomainError("integrand has non-finite values")
    return math.fsum(f.ravel().tolist()) * grid.cell_volume


def inner(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Quadrature pairing of two vector fields, ``int u . v``."""
    return integrate(grid, np.sum(u * v, axis=-1))

# }}}


# {{{ spectral operators

@lru_cache(maxsize=32)
def _wavenumbers(grid: Grid) -> tuple[np.ndarray, ...]:
    """Integer wavenumbers on the ``rfftn`` layout with Nyquist entries zeroed.

    Zeroing the Nyquist entry makes the derivative symbol odd under
    ``k -> -k``, so derivatives are real and skew-adjoint in the quadrature
    pairing and the Leray projection is an orthogonal projection.
    """
    ks = []
    for axis, ni in enumerate(grid.n):
        if axis == grid.d - 1:
            k = np.fft.rfftfreq(ni, 1.0 / ni)
        else:
            k = np.fft.fftfreq(ni, 1.0 / ni)
        k = k.copy()
        k[np.abs(k) == ni // 2] = 0.0
        shape = [1] * grid.d
        shape[axis] = k.size
        ks.append(k.reshape(shape))
    return tuple(ks)


def _axes(grid: Grid) -> tuple[int, ...]:
    return tuple(range(grid.d))


def fft(grid: Grid, f: np.ndarray) -> np.ndarray:
    return np.fft.rfftn(f, axes=_axes(grid))


def ifft(grid: Grid, fh: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(fh, s=grid.shape, axes=_axes(grid))


def _expand(k: np.ndarray, ndim: int) -> np.ndarray:
    return k.reshape(k.shape + (1,) * (ndim - k.ndim))


def derivative(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    """Spectral derivative along ``axis`` of an array of shape ``grid.shape + extra``."""
    fh = fft(grid, f)
    k = _expand(_wavenumbers(grid)[axis], fh.ndim)
    return ifft(grid, 2j * np.pi * k * fh)


def gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient; appends a trailing axis of length ``d``."""
    fh = fft(grid, f)
    out = []
    for k in _wavenumbers(grid):
        out.append(ifft(grid, 2j * np.pi * _expand(k, fh.ndim) * fh))
    return np.stack(out, axis=-1)


def divergence(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Spectral divergence of a field whose last axis has length ``d``."""
    vh = fft(grid, v)
    acc = 0
    for j, k in enumerate(_wavenumbers(grid)):
        acc = acc + 2j * np.pi * _expand(k, vh.ndim - 1) * vh[..., j]
    return ifft(grid, acc)


def leray_hat(grid: Grid, vh: np.ndarray) -> np.ndarray:
    """Leray projection of a transformed vector field (trailing axis of length ``d``)."""
    ks = [_expand(k, grid.d) for k in _wavenumbers(grid)]
    k2 = sum(k * k for k in ks)
    safe = np.where(k2 > 0, k2, 1.0)
    kdotv = sum(ks[j] * vh[..., j] for j in range(grid.d)) / safe
    return np.stack([vh[..., j] - ks[j] * kdotv for j in range(grid.d)], axis=-1)


def leray_project(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Project a vector field (last axis of length ``d``) onto divergence-free fields."""
    v = np.asarray(v, dtype=float)
    if v.shape != grid.shape + (grid.d,):
        raise ContractError(f"expected vector field of shape {grid.shape + (grid.d,)}")
    if not np.all(np.isfinite(v)):
        raise DomainError("field has non-finite values")
    return ifft(grid, leray_hat(grid, fft(grid, v)))


def wavenumber_norm(grid: Grid) -> np.ndarray:
    """Euclidean ``|k|`` on the transform layout (Nyquist entries zeroed)."""
    ks = [_expand(k, grid.d) for k in _wavenumbers(grid)]
    return np.sqrt(sum(k * k for k in ks))


def wavenumbers(grid: Grid) -> tuple[np.ndarray, ...]:
    return _wavenumbers(grid)

# }}}


# {{{ test functions

@dataclass(frozen=True, eq=False)
class TestFunction:
    """``phi(x) = const + sum_k cos_k cos(2 pi k.x) + sin_k sin(2 pi k.x)``.

    ``modes`` has shape ``(K, d)``; ``cos`` and ``sin`` have shape ``(m, K)``.
    """

    __test__ = False

    modes: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    const: np.ndarray
    tag: str = "free"
    label: str = ""

    def __post_init__(self):
        for name in ("modes", "cos", "sin", "const"):
            a = getattr(self, name)
            a.setflags(write=False)

    @property
    def m(self) -> int:
        return self.const.shape[0]

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    @property
    def max_mode(self) -> int:
        if self.modes.shape[0] == 0:
            return 0
        return int(np.max(np.abs(self.modes)))

    def scaled(self, alpha: float) -> TestFunction:
        return TestFunction(self.modes, alpha * self.cos, alpha * self.sin,
                            alpha * self.const, self.tag, self.label)

    def __neg__(self) -> TestFunction:
        return self.scaled(-1.0)

    def __mul__(self, alpha: float) -> TestFunction:
        return self.scaled(float(alpha))

    __rmul__ = __mul__

    def __add__(self, other: TestFunction) -> TestFunction:
        modes = np.concatenate([self.modes, other.modes])
        return TestFunction(
            modes,
            np.concatenate([self.cos, other.cos], axis=1),
            np.concatenate([self.sin, other.sin], axis=1),
            self.const + other.const,
            self.tag if self.tag == other.tag else "free",
        )

    def is_zero(self) -> bool:
        return not (np.any(self.cos) or np.any(self.sin) or np.any(self.const))


def zero_test(m: int, d: int, tag: str = "free") -> TestFunction:
    return TestFunction(np.zeros((0, d), dtype=np.int64), np.zeros((m, 0)),
                        np.zeros((m, 0)), np.zeros(m), tag, "zero")


def constant_test(c: Sequence[float], d: int, tag: str = "free") -> TestFunction:
    c = np.asarray(c, dtype=float)
    return TestFunction(np.zeros((0, d), dtype=np.int64), np.zeros((c.size, 0)),
                        np.zeros((c.size, 0)), c.copy(), tag, "const")


def trig_test(modes, cos, sin, const=None, tag: str = "free", label: str = "") -> TestFunction:
    modes = np.atleast_2d(np.asarray(modes, dtype=np.int64))
    cos = np.asarray(cos, dtype=float).reshape(-1, modes.shape[0])
    sin = np.asarray(sin, dtype=float).reshape(-1, modes.shape[0])
    m = cos.shape[0]
    const = np.zeros(m) if const is None else np.asarray(const, dtype=float)
    return TestFunction(modes, cos, sin, const, tag, label)


def _phases(grid: Grid, modes: np.ndarray) -> np.ndarray:
    """``2 pi k.x`` at every node, shape ``grid.shape + (K,)``."""
    if modes.shape[0] == 0:
        return np.zeros(grid.shape + (0,))
    ph = 0.0
    for j in range(grid.d):
        # k x is formed from integers so that the phase is reduced exactly mod 1
        kx = np.mod(modes[:, j] * (np.arange(grid.n[j]))[:, None], grid.n[j]) / grid.n[j]
        shape = [1] * grid.d + [modes.shape[0]]
        shape[j] = grid.n[j]
        ph = ph + kx.reshape(shape)
    return 2.0 * np.pi * ph


def eval_test(phi: TestFunction, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Nodal values ``(shape + (m,))`` and analytic gradients ``(shape + (m, d))``."""
    if phi.d != grid.d:
        raise ContractError("test function and grid dimensions differ")
    limit = min(grid.n) // 2 - 1
    if phi.max_mode > limit:
        raise ConfigError(f"mode {phi.max_mode} aliases on grid {grid.n} (limit {limit})")
    ph = _phases(grid, phi.modes)
    c, s = np.cos(ph), np.sin(ph)
    vals = c @ phi.cos.T + s @ phi.sin.T + phi.const
    twopik = 2.0 * np.pi * phi.modes.astype(float)
    grads = []
    for j in range(grid.d):
        gj = (s * -twopik[:, j]) @ phi.cos.T + (c * twopik[:, j]) @ phi.sin.T
        grads.append(gj)
    return vals, np.stack(grads, axis=-1)


def test_divergence(phi: TestFunction, grid: Grid, block: slice) -> np.ndarray:
    """Pointwise divergence of the vector block ``block`` of ``phi``."""
    _, g = eval_test(phi, grid)
    gb = g[..., block, :]
    return np.trace(gb, axis1=-2, axis2=-1)

# }}}


# {{{ dictionaries

def half_space_modes(d: int, N: int) -> np.ndarray:
    """Integer vectors with ``|k|_inf <= N`` whose first nonzero entry is positive."""
    rng = range(-N, N + 1)
    out = []
    if d == 1:
        out = [(k,) for k in range(1, N + 1)]
    else:
        for kx in rng:
            for ky in rng:
                if kx > 0 or (kx == 0 and ky > 0):
                    out.append((kx, ky))
        out.sort(key=lambda k: (max(abs(k[0]), abs(k[1])), k))
    return np.array(out, dtype=np.int64).reshape(-1, d)


@dataclass(frozen=True)
class Dictionary:
    members: tuple[TestFunction, ...]
    N: int
    tag: str

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i: int) -> TestFunction:
        return self.members[i]


def build_dictionary(sys, N: int) -> Dictionary:
    """Finite, negation-closed set of admissible test functions with modes up to ``N``.

    ``sys`` must provide ``m``, ``d``, ``name`` and ``solenoidal_blocks`` (list of
    first component indices of divergence-free vector blocks).
    """
    if N < 1:
        raise ConfigError("dictionary needs at least mode 1")
    m, d = sys.m, sys.d
    sol_starts = list(getattr(sys, "solenoidal_blocks", ()))
    sol_comps = {s + j for s in sol_starts for j in range(d)}
    tag = sys.name

    members: list[TestFunction] = [zero_test(m, d, tag)]
    for c in range(m):
        e = np.zeros(m)
        e[c] = 1.0
        members.append(constant_test(e, d, tag))
        members.append(constant_test(-e, d, tag))

    modes = half_space_modes(d, N)
    for k in modes:
        kk = k.reshape(1, d)
        shapes = []
        for c in range(m):
            if c in sol_comps:
                continue
            e = np.zeros((m, 1))
            e[c, 0] = 1.0
            shapes.append((e, f"c{c}"))
        if d == 2:
            perp = np.array([-k[1], k[0]], dtype=float) / math.hypot(k[0], k[1])
            for s in sol_starts:
                e = np.zeros((m, 1))
                e[s:s + d, 0] = perp
                shapes.append((e, f"sol{s}"))
        for e, name in shapes:
            zero = np.zeros_like(e)
            for sign in (1.0, -1.0):
                members.append(trig_test(kk, sign * e, zero, tag=tag,
                                         label=f"{'+' if sign > 0 else '-'}cos{tuple(int(v) for v in k)}{name}"))
                members.append(trig_test(kk, zero, sign * e, tag=tag,
                                         label=f"{'+' if sign > 0 else '-'}sin{tuple(int(v) for v in k)}{name}"))
    return Dictionary(tuple(members), N, tag)


def tabulate(dictionary: Dictionary, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    vals, grads = zip(*(eval_test(phi, grid) for phi in dictionary))
    return np.stack(vals), np.stack(grads)

# }}}


test_divergence.__test__ = False
