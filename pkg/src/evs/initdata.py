"""Initial-data catalogue.

Descriptors are strings ``name`` or ``name:key=value,key=value``:

* ``zero``
* ``constant:c0=..,c1=..`` (components default to 0; compressible ``c0`` is ``h``)
* ``sine:amp=A`` (Burgers ``A sin 2 pi x``; Euler/MHD a projected two-shell velocity;
  compressible ``h = 1 + A sin 2 pi x`` at rest)
* ``taylor-green:amp=A``
* ``orszag-tang`` (MHD)
* ``gauss-density:amp=..,width=..,x0=..`` (compressible)
* ``file:<snapshot path>``
"""

from __future__ import annotations

import math

import numpy as np

from evs.errors import ConfigError
from evs.systems import SystemSpec
from evs.torus import Grid

TWOPI = 2.0 * math.pi


def parse_descriptor(desc: str) -> tuple[str, dict[str, str]]:
    name, _, rest = desc.partition(":")
    name = name.strip().lower()
    if name == "file":
        return name, {"path": rest}
    opts: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"malformed option {item!r} in {desc!r}")
            opts[key.strip()] = val.strip()
    return name, opts


def _float(opts: dict, key: str, default: float) -> float:
    try:
        return float(opts.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"option {key} must be a number") from exc


def taylor_green(grid: Grid, amp: float = 1.0) -> np.ndarray:
    x, y = grid.mesh()
    return amp * np.stack([np.sin(TWOPI * x) * np.cos(TWOPI * y),
                           -np.cos(TWOPI * x) * np.sin(TWOPI * y)], axis=-1)


def sine_burgers(grid: Grid, amp: float = 1.0) -> np.ndarray:
    (x,) = grid.mesh()
    return (amp * np.sin(TWOPI * x))[..., None]


def make_initial(sys: SystemSpec, grid: Grid, desc: str) -> np.ndarray:
    if grid.d != sys.d:
        raise ConfigError(f"system {sys.name} needs a {sys.d}-d grid")
    name, opts = parse_descriptor(desc)
    shape = grid.shape + (sys.m,)
    mesh = grid.mesh()
    compressible = sys.name == "compressible"

    if name == "zero":
        U = np.zeros(shape)
    elif name == "constant":
        U = np.zeros(shape)
        for c in range(sys.m):
            U[..., c] = _float(opts, f"c{c}", 0.0)
    elif name == "sine":
        amp = _float(opts, "amp", 1.0)
        U = np.zeros(shape)
        if sys.name == "burgers":
            U = sine_burgers(grid, amp)
        elif sys.name in ("euler", "mhd"):
            # two wavenumber shells so the field is not a steady state
            x, y = mesh
            U[..., 0] = amp * (np.sin(TWOPI * y) + 0.5 * np.sin(TWOPI * (x + y)))
            U[..., 1] = amp * (np.sin(TWOPI * x) + 0.5 * np.cos(TWOPI * (2 * x - y)))
        elif compressible:
            U[..., 0] = 1.0 + amp * np.sin(TWOPI * mesh[0])
    elif name == "taylor-green":
        if sys.name not in ("euler", "mhd"):
            raise ConfigError("taylor-green needs an incompressible 2-d system")
        U = np.zeros(shape)
        U[..., :2] = taylor_green(grid, _float(opts, "amp", 1.0))
    elif name == "orszag-tang":
        if sys.name != "mhd":
            raise ConfigError("orszag-tang is an MHD initial state")
        x, y = mesh
        amp = _float(opts, "amp", 1.0)
        U = np.zeros(shape)
        U[..., 0] = -amp * np.sin(TWOPI * y)
        U[..., 1] = amp * np.sin(TWOPI * x)
        U[..., 2] = -amp * np.sin(TWOPI * y)
        U[..., 3] = amp * np.sin(2.0 * TWOPI * x)
    elif name == "gauss-density":
        if not compressible:
            raise ConfigError("gauss-density is a compressible initial state")
        amp = _float(opts, "amp", 0.5)
        width = _float(opts, "width", 0.1)
        x0 = _float(opts, "x0", 0.5)
        # periodic bump: 1 - cos is the torus analogue of |x - x0|^2 / 2
        r2 = 1.0 - np.cos(TWOPI * (mesh[0] - x0))
        if sys.d == 2:
            r2 = r2 + 1.0 - np.cos(TWOPI * (mesh[1] - _float(opts, "y0", 0.5)))
        U = np.zeros(shape)
        U[..., 0] = 1.0 + amp * np.exp(-r2 / (TWOPI * width) ** 2)
    elif name == "file":
        from evs.snapshot import read_snapshot
        g2, U = read_snapshot(opts["path"])
        if g2 != grid or U.shape != shape:
            raise ConfigError("snapshot grid/components do not match the configuration")
    else:
        raise ConfigError(f"unknown initial data {name!r}")

    if compressible and np.any(U[..., 0] < 0):
        raise ConfigError("initial density must be nonnegative")
    return sys.project(grid, np.ascontiguousarray(U, dtype=float))
