"""Reference solutions: exact Burgers and pseudo-spectral incompressible Euler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from evs.errors import ConfigError
from evs.torus import Grid, fft, ifft, leray_project, wavenumbers

TWOPI = 2.0 * math.pi


# {{{ Burgers

def burgers_shock_time(amp: float) -> float:
    """Gradient catastrophe time ``-1 / min u0'`` for ``u0 = amp sin 2 pi x``."""
    if amp == 0:
        return math.inf
    return 1.0 / (TWOPI * abs(amp))


def _characteristic_foot(x: np.ndarray, t: float, amp: float,
                         lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12,
                         maxit: int = 100) -> tuple[np.ndarray, bool]:
    """Solve ``xi + t amp sin(2 pi xi) = x`` on brackets where the map is increasing."""
    xi = np.clip(x - t * amp * np.sin(TWOPI * x), lo, hi)
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(maxit):
        g = xi + t * amp * np.sin(TWOPI * xi) - x
        lo = np.where(g < 0, xi, lo)
        hi = np.where(g > 0, xi, hi)
        dg = 1.0 + TWOPI * t * amp * np.cos(TWOPI * xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xi - g / dg
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        done = np.abs(g) <= tol
        xi = np.where(done, xi, xn)
        if np.all(done):
            return xi, True
    g = xi + t * amp * np.sin(TWOPI * xi) - x
    return xi, bool(np.all(np.abs(g) <= tol))


def burgers_godunov(amp: float, t: float, n: int = 8192, cfl: float = 0.45) -> np.ndarray:
    """Cell averages at time ``t`` from the exact-Riemann Godunov scheme."""
    edges = np.arange(n + 1) / n
    h = 1.0 / n
    u = amp * (np.cos(TWOPI * edges[:-1]) - np.cos(TWOPI * edges[1:])) / (TWOPI * h)
    time = 0.0
    while time < t:
        umax = max(float(np.max(np.abs(u))), 1e-300)
        dt = min(cfl * h / umax, t - time)
        ul = u
        ur = np.roll(u, -1)
        # exact Riemann flux for the convex flux u^2/2
        fl = 0.5 * ul * ul
        fr = 0.5 * ur * ur
        flux = np.where(ul > ur, np.maximum(fl, fr),
                        np.where(ul > 0, fl, np.where(ur < 0, fr, 0.0)))
        u = u - dt / h * (flux - np.roll(flux, 1))
        time += dt
    return u


def burgers_symmetric_exact(amp: float, t: float, x: np.ndarray) -> np.ndarray:
    """Entropy solution for ``amp sin 2 pi x`` with the stationary shock at ``x = 1/2``.

    Independent of :func:`burgers_exact`'s Godunov branch; used to cross-check it.
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    if amp < 0:
        return -burgers_symmetric_exact(-amp, t, 1.0 - x)
    ts = burgers_shock_time(amp)
    sigma = 0.0
    if t > ts:
        # shock foot: sigma = t amp sin(2 pi sigma) with sigma in (0, 1/4]
        lo, hi = 1e-15, 0.25
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid - t * amp * math.sin(TWOPI * mid) < 0:
                lo = mid
            else:
                hi = mid
        sigma = 0.5 * (lo + hi)
    left = x < 0.5
    xl = np.where(left, x, 1.0 - x)
    lo = np.zeros_like(xl)
    hi = np.full_like(xl, 0.5 - sigma)
    xi, _ = _characteristic_foot(np.minimum(xl, 0.5), t, amp, lo, hi)
    u = amp * np.sin(TWOPI * xi)
    u = np.where(left, u, -u)
    return np.where(x == 0.5, 0.0, u)


def burgers_exact(amp: float, t: float, x) -> tuple[np.ndarray, float, bool]:
    """Entropy solution of Burgers with ``u0 = amp sin 2 pi x``.

    Returns ``(u, t_star, fallback)``. Before the shock time the value comes
    from Newton on the characteristics; afterwards (or if Newton fails) from a
    fine Godunov reference, linearly interpolated between cell centres.
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    ts = burgers_shock_time(amp)
    if t == 0:
        return amp * np.sin(TWOPI * x), ts, False
    fallback = False
    if t < ts:
        lo = x - t * abs(amp) - 1e-14
        hi = x + t * abs(amp) + 1e-14
        xi, ok = _characteristic_foot(x, t, amp, lo, hi)
        if ok:
            return amp * np.sin(TWOPI * xi), ts, False
        fallback = True
    n = 8192
    u = burgers_godunov(amp, t, n)
    centres = (np.arange(n) + 0.5) / n
    return np.interp(x, centres, u, period=1.0), ts, fallback

# }}}


# {{{ incompressible Euler

@dataclass
class EulerReference:
    grid: Grid
    times: np.ndarray
    states: list[np.ndarray]

    def at(self, t: float) -> np.ndarray:
        """State at ``t`` (nearest stored time, which must match within 1e-12)."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise ConfigError(f"no reference state stored at t = {t}")
        return self.states[k]


def _velocity_from_vorticity(grid: Grid, wh: np.ndarray) -> np.ndarray:
    kx, ky = (2.0 * np.pi * k for k in wavenumbers(grid))
    k2 = kx * kx + ky * ky
    psih = np.where(k2 > 0, wh / np.where(k2 > 0, k2, 1.0), 0.0)
    # psi solves -lap psi = w; v = (d_y psi, -d_x psi)
    return np.stack([ifft(grid, 1j * ky * psih), ifft(grid, -1j * kx * psih)], axis=-1)


def classical_euler2d(grid: Grid, v0: np.ndarray, T: float, steps: int,
                      cfl_max: float = 0.5) -> EulerReference:
    """Vorticity-form RK4 with 2/3 dealiasing; stores every step."""
    if grid.d != 2:
        raise ConfigError("classical Euler reference is two-dimensional")
    v0 = leray_project(grid, v0)
    dt = T / steps
    vmax = float(np.max(np.abs(v0)))
    if vmax * dt * max(grid.n) > cfl_max:
        raise ConfigError(f"CFL violation: max|v| dt n = {vmax * dt * max(grid.n):.3f}")
    kx, ky = (2.0 * np.pi * k for k in wavenumbers(grid))
    kint = [np.abs(k) for k in wavenumbers(grid)]
    dealias = ((kint[0] < grid.n[0] / 3.0) & (kint[1] < grid.n[1] / 3.0)).astype(float)
    mean = v0.reshape(-1, 2).mean(axis=0)

    vh0 = fft(grid, v0)
    wh = 1j * kx * vh0[..., 1] - 1j * ky * vh0[..., 0]

    def rhs(wh):
        v = _velocity_from_vorticity(grid, wh) + mean
        wx = ifft(grid, 1j * kx * wh)
        wy = ifft(grid, 1j * ky * wh)
        return -dealias * fft(grid, v[..., 0] * wx + v[..., 1] * wy)

    states = [v0.copy()]
    for _ in range(steps):
        k1 = rhs(wh)
        k2 = rhs(wh + 0.5 * dt * k1)
        k3 = rhs(wh + 0.5 * dt * k2)
        k4 = rhs(wh + dt * k3)
        wh = wh + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(_velocity_from_vorticity(grid, wh) + mean)
    times = np.array([k * T / steps for k in range(steps + 1)])
    return EulerReference(grid, times, states)

# }}}
