"""Binary snapshots, run manifests and CSV time series.

Snapshot layout (little-endian): ``b"EVS1"``, then u32 version, u32 d, u32 m,
u32 n_i for each axis, followed by the f64 payload in C order with shape
``n + (m,)`` (node-major, component last).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from evs.errors import ConfigError
from evs.torus import Grid

MAGIC = b"EVS1"
VERSION = 1


def snapshot_bytes(grid: Grid, U: np.ndarray) -> bytes:
    U = np.ascontiguousarray(U, dtype="<f8")
    if U.shape[:-1] != grid.shape:
        raise ConfigError("snapshot state does not match grid")
    header = MAGIC + struct.pack(f"<III{grid.d}I", VERSION, grid.d, U.shape[-1], *grid.n)
    return header + U.tobytes(order="C")


def write_snapshot(path: str | Path, grid: Grid, U: np.ndarray) -> None:
    Path(path).write_bytes(snapshot_bytes(grid, U))


def parse_snapshot(blob: bytes) -> tuple[Grid, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ConfigError("not an EVS1 snapshot")
    version, d, m = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise ConfigError(f"unsupported snapshot version {version}")
    if d not in (1, 2):
        raise ConfigError(f"snapshot dimension {d} unsupported")
    n = struct.unpack_from(f"<{d}I", blob, 16)
    offset = 16 + 4 * d
    count = int(np.prod(n)) * m
    if len(blob) - offset != 8 * count:
        raise ConfigError("snapshot payload length does not match its header")
    U = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(tuple(n) + (m,))
    return Grid(d, tuple(int(x) for x in n)), U.astype(float)


def read_snapshot(path: str | Path) -> tuple[Grid, np.ndarray]:
    return parse_snapshot(Path(path).read_bytes())


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_text(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(manifest_text(manifest))


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def fmt(x: float | int) -> str:
    """Shortest round-trip decimal for floats."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]
