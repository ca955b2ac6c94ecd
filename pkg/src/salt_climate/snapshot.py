"""Snapshot files: a text header followed by raw little-endian float64 data.

Layout::

    SALTSNAP 1
    L = <float.hex>
    n = 64
    time = <float.hex>
    step = 120
    mode = salt
    member = 3
    fields = u_a_x,u_a_y,theta_a,u_o_x,u_o_y,theta_o
    sha256 = <hex digest of the payload>
    payload_bytes = 196608
    END
    <payload>

The payload holds each field in row-major physical order (``[iy, ix]``),
fields concatenated in the listed order.  Floats in the header are written
with ``float.hex`` so they round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import Grid

MAGIC = "SALTSNAP"
VERSION = 1


class SnapshotError(ValueError):
    """Malformed, truncated or corrupted snapshot."""


@dataclass
class Snapshot:
    """In-memory snapshot: physical fields plus identifying metadata."""

    grid: Grid
    time: float
    step: int
    mode: str
    member: int
    fields: tuple[str, ...]
    data: np.ndarray  # (len(fields), n, n)


def encode_snapshot(snap: Snapshot) -> bytes:
    data = np.ascontiguousarray(snap.data, dtype="<f8")
    if data.shape != (len(snap.fields), snap.grid.n, snap.grid.n):
        raise SnapshotError(f"data shape {data.shape} does not match {len(snap.fields)} fields on n={snap.grid.n}")
    payload = data.tobytes(order="C")
    header = [
        f"{MAGIC} {VERSION}",
        f"L = {float(snap.grid.L).hex()}",
        f"n = {snap.grid.n}",
        f"time = {float(snap.time).hex()}",
        f"step = {int(snap.step)}",
        f"mode = {snap.mode}",
        f"member = {int(snap.member)}",
        f"fields = {','.join(snap.fields)}",
        f"sha256 = {hashlib.sha256(payload).hexdigest()}",
        f"payload_bytes = {len(payload)}",
        "END",
    ]
    return ("\n".join(header) + "\n").encode("ascii") + payload


def decode_snapshot(raw: bytes) -> Snapshot:
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise SnapshotError("header terminator not found")
    lines = raw[:end].decode("ascii").split("\n")
    first = lines[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise SnapshotError("not a snapshot file")
    if first[1] != str(VERSION):
        raise SnapshotError(f"unsupported snapshot version {first[1]} (expected {VERSION})")
    meta = {}
    for line in lines[1:]:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise SnapshotError(f"malformed header line {line!r}")
        meta[key] = value
    try:
        grid = Grid(L=float.fromhex(meta["L"]), n=int(meta["n"]))
        names = tuple(f for f in meta["fields"].split(",") if f)
        nbytes = int(meta["payload_bytes"])
        snap_meta = (float.fromhex(meta["time"]), int(meta["step"]), meta["mode"], int(meta["member"]))
        digest = meta["sha256"]
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"bad header: {exc}") from None
    payload = raw[end + 5:]
    expected = 8 * len(names) * grid.n * grid.n
    if nbytes != expected:
        raise SnapshotError(f"header declares {nbytes} bytes, fields require {expected}")
    if len(payload) < nbytes:
        raise SnapshotError(f"truncated payload: {len(payload)} of {nbytes} bytes")
    if len(payload) > nbytes:
        raise SnapshotError("trailing bytes after payload")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise SnapshotError("checksum mismatch")
    data = np.frombuffer(payload, dtype="<f8").reshape(len(names), grid.n, grid.n).astype(float)
    return Snapshot(grid, *snap_meta, names, data)


def write_snapshot(path, snap: Snapshot) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_snapshot(snap))
    return path


def read_snapshot(path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


def write_loops(path, loops: dict) -> Path:
    """Marker arrays as JSON (floats are written with ``repr`` and round-trip exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({k: np.asarray(v).tolist() for k, v in loops.items()}))
    return path


def read_loops(path) -> dict:
    return {k: np.asarray(v, dtype=float) for k, v in json.loads(Path(path).read_text()).items()}


def export_basis(path, basis) -> Path:
    """Noise fields ``sign * xi_i`` as a snapshot with ``2 M`` fields."""
    M = basis.M
    names = tuple(f"xi{i}_{c}" for i in range(M) for c in ("x", "y"))
    data = basis.fields.reshape(2 * M, basis.grid.n, basis.grid.n)
    return write_snapshot(path, Snapshot(basis.grid, 0.0, 0, "basis", -1, names, data))


def import_basis(path):
    from .noise import NoiseBasis

    snap = read_snapshot(path)
    return NoiseBasis(snap.grid, snap.data.reshape(len(snap.fields) // 2, 2, snap.grid.n, snap.grid.n))
