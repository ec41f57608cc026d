"""Binary field snapshots.

Layout (little-endian): magic ``CHFL``, version u32, dim u32, points per axis
u32 x dim, side lengths f64 x dim, field count u32, each name as u32 byte
length + UTF-8, then every field as row-major f64 values in name order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dynamics import State
from .fields import GridSpec, ScalarField, VectorField

MAGIC = b"CHFL"
VERSION = 1


def state_fields(s: State) -> dict[str, np.ndarray]:
    out = {"n": s.n.values, "c": s.c.values}
    for i, ui in enumerate(s.u):
        out[f"u{i}"] = ui.values
    return out


def write_snapshot(path: str | Path, grid: GridSpec, fields: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, grid.dim)]
    parts.append(struct.pack(f"<{grid.dim}I", *grid.shape))
    parts.append(struct.pack(f"<{grid.dim}d", *grid.side_length))
    parts.append(struct.pack("<I", len(fields)))
    for name in fields:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for name, values in fields.items():
        a = np.asarray(values, dtype="<f8")
        if a.shape != grid.shape:
            raise ValueError(f"field {name!r} has shape {a.shape}, grid is {grid.shape}")
        parts.append(np.ascontiguousarray(a).tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_snapshot(path: str | Path) -> tuple[GridSpec, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a snapshot (bad magic)")
    pos = 4
    version, dim = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    points = struct.unpack_from(f"<{dim}I", buf, pos)
    pos += 4 * dim
    sides = struct.unpack_from(f"<{dim}d", buf, pos)
    pos += 8 * dim
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        names.append(buf[pos:pos + length].decode("utf-8"))
        pos += length
    if len(set(points)) != 1:
        raise ValueError(f"{path}: anisotropic grids are not supported, got {points}")
    grid = GridSpec(dim, points[0], sides)
    size = grid.size
    fields = {}
    for name in names:
        fields[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(grid.shape).copy()
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return grid, fields


def save_state(path: str | Path, s: State) -> None:
    write_snapshot(path, s.grid, state_fields(s))


def load_state(path: str | Path, time: float = 0.0) -> State:
    grid, f = read_snapshot(path)
    u = VectorField.from_arrays(grid, [f[f"u{i}"] for i in range(grid.dim)])
    return State(ScalarField(grid, f["n"]), ScalarField(grid, f["c"]), u, time)
