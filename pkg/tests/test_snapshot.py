from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evs.errors import ConfigError
from evs.snapshot import (
    csv_text, fmt, manifest_text, parse_snapshot, read_csv, read_manifest, snapshot_bytes,
    write_manifest,
)
from evs.torus import make_grid


def test_snapshot_layout():
    g = make_grid(2, [8, 10])
    U = np.arange(8 * 10 * 3, dtype=float).reshape(8, 10, 3)
    blob = snapshot_bytes(g, U)
    assert blob[:4] == b"EVS1"
    assert struct.unpack_from("<5I", blob, 4) == (1, 2, 3, 8, 10)
    assert len(blob) - 24 == 8 * 10 * 3 * 8
    # node-major, component last, little-endian
    assert struct.unpack_from("<3d", blob, 24) == (0.0, 1.0, 2.0)
    g2, V = parse_snapshot(blob)
    assert g2 == g and np.array_equal(U, V)


def test_snapshot_rejects_corruption():
    g = make_grid(1, [8])
    blob = snapshot_bytes(g, np.zeros((8, 1)))
    with pytest.raises(ConfigError):
        parse_snapshot(b"EVS2" + blob[4:])
    with pytest.raises(ConfigError):
        parse_snapshot(blob[:-1])
    with pytest.raises(ConfigError):
        snapshot_bytes(g, np.zeros((9, 1)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, width=64), min_size=8, max_size=8))
def test_snapshot_round_trip_bitwise(values):
    g = make_grid(1, [8])
    U = np.array(values)[:, None]
    blob = snapshot_bytes(g, U)
    _, V = parse_snapshot(blob)
    assert snapshot_bytes(g, V) == blob


def test_manifest_round_trip(tmp_path):
    man = {"tool": "evs", "T": 0.3, "grid": {"d": 1, "n": [64]}, "files": {"a": "00"},
           "tau": 0.1 / 3}
    write_manifest(tmp_path / "m.json", man)
    first = (tmp_path / "m.json").read_bytes()
    write_manifest(tmp_path / "m.json", read_manifest(tmp_path / "m.json"))
    assert (tmp_path / "m.json").read_bytes() == first
    assert manifest_text(read_manifest(tmp_path / "m.json")) == first.decode()


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_csv_float_round_trip(x):
    assert float(fmt(x)) == x


def test_csv_text(tmp_path):
    rows = [(0.1, 3, "a"), (1e-300, 0, "b")]
    (tmp_path / "x.csv").write_text(csv_text(("t", "k", "s"), rows))
    header, back = read_csv(tmp_path / "x.csv")
    assert header == ["t", "k", "s"]
    assert back == [["0.1", "3", "a"], ["1e-300", "0", "b"]]
    assert fmt(np.int64(5)) == "5" and fmt(2.0) == "2.0"
