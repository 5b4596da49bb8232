"""Flat little-endian binary container for stored trajectories.

Layout, all integers unsigned little-endian, all floats IEEE f64:

    magic   5 bytes  b"RPME1"
    u32     dim
    u32     cells_per_axis
    u32     n_snapshots
    u64     seed
    u64     path_id
    f64     dt
    n_snapshots times:
        f64 t, then c then y, each row-major over all (M+2)**dim nodes
    u32     derivative pair count
    per pair:
        f64 r, f64 t, then drc then dry, row-major over all nodes

Readers validate the magic and sizes and refuse anything inconsistent.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, build_grid

MAGIC = b"RPME1"
_HEAD = struct.Struct("<III QQ d")
_PAIR_HEAD = struct.Struct("<dd")


@dataclass(frozen=True)
class DerivativePair:
    """One stored Malliavin slice: differentiation time r, evaluation time t,
    concentration derivative and state derivative over all nodes."""

    r: float
    t: float
    drc: np.ndarray
    dry: np.ndarray


@dataclass(frozen=True)
class PathRecord:
    grid: GridSpec
    seed: int
    path_id: int
    dt: float
    times: np.ndarray
    c: np.ndarray  # (n_snapshots, *grid.shape)
    y: np.ndarray
    pairs: tuple[DerivativePair, ...]


class FormatError(ValueError):
    pass


def write_record(path, record: PathRecord) -> None:
    g = record.grid
    n_snap = len(record.times)
    if record.c.shape != (n_snap,) + g.shape or record.y.shape != (n_snap,) + g.shape:
        raise ValueError("snapshot arrays do not match the grid")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEAD.pack(g.dim, g.cells_per_axis, n_snap,
                            record.seed, record.path_id, record.dt))
        for k in range(n_snap):
            fh.write(struct.pack("<d", float(record.times[k])))
            fh.write(np.ascontiguousarray(record.c[k], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(record.y[k], dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(record.pairs)))
        for pair in record.pairs:
            if pair.drc.shape != g.shape or pair.dry.shape != g.shape:
                raise ValueError("derivative arrays do not match the grid")
            fh.write(_PAIR_HEAD.pack(pair.r, pair.t))
            fh.write(np.ascontiguousarray(pair.drc, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(pair.dry, dtype="<f8").tobytes())


def _take(buf: memoryview, offset: int, n_bytes: int, what: str) -> tuple[memoryview, int]:
    if offset + n_bytes > len(buf):
        raise FormatError(f"truncated file while reading {what}")
    return buf[offset : offset + n_bytes], offset + n_bytes


def read_record(path) -> PathRecord:
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    head, off = _take(buf, 0, len(MAGIC), "magic")
    if bytes(head) != MAGIC:
        raise FormatError(f"bad magic {bytes(head)!r}")
    head, off = _take(buf, off, _HEAD.size, "header")
    dim, m, n_snap, seed, path_id, dt = _HEAD.unpack(head)
    try:
        grid = build_grid(int(dim), int(m))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    n_nodes = grid.n_nodes
    field_bytes = 8 * n_nodes

    times = np.empty(n_snap)
    c = np.empty((n_snap,) + grid.shape)
    y = np.empty_like(c)
    for k in range(n_snap):
        raw, off = _take(buf, off, 8, "snapshot time")
        times[k] = struct.unpack("<d", raw)[0]
        raw, off = _take(buf, off, field_bytes, "snapshot c")
        c[k] = np.frombuffer(raw, dtype="<f8").reshape(grid.shape)
        raw, off = _take(buf, off, field_bytes, "snapshot y")
        y[k] = np.frombuffer(raw, dtype="<f8").reshape(grid.shape)

    raw, off = _take(buf, off, 4, "pair count")
    n_pairs = struct.unpack("<I", raw)[0]
    pairs = []
    for _ in range(n_pairs):
        raw, off = _take(buf, off, _PAIR_HEAD.size, "pair header")
        r, t = _PAIR_HEAD.unpack(raw)
        raw, off = _take(buf, off, field_bytes, "pair drc")
        drc = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).copy()
        raw, off = _take(buf, off, field_bytes, "pair dry")
        dry = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).copy()
        pairs.append(DerivativePair(r, t, drc, dry))
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    return PathRecord(grid, seed, path_id, dt, times, c, y, tuple(pairs))
