"""NLSG1 grid files: one JSON header line, then the raw payload.

Payload is row-major with the last axis fastest; ``bits`` packs occupancy
little-endian within bytes, ``f64`` stores little-endian doubles. An ``f64``
payload carries a ``role``: ``level`` (E = {level < 0}), ``sdf`` (signed
distance) or ``graph`` (heights on an (n-1)-dimensional base grid).
"""
from __future__ import annotations

import json

import numpy as np

from .errors import FracminError
from .geometry import ExteriorRule, GraphFunction, Grid, SignedDistanceGrid, VoxelSet

MAGIC = "NLSG1"


def _header(grid: Grid, payload: str, exterior: ExteriorRule | None, role: str | None) -> bytes:
    head = {"magic": MAGIC, "n": grid.n, "dims": list(grid.dims), "origin": list(grid.origin),
            "h": grid.h, "payload": payload,
            "exterior": (exterior or ExteriorRule()).to_json()}
    if role:
        head["role"] = role
    return (json.dumps(head, sort_keys=True) + "\n").encode()


def dumps(obj) -> bytes:
    if isinstance(obj, VoxelSet):
        if obj.level is not None:
            return _header(obj.grid, "f64", obj.exterior, "level") + obj.level.astype("<f8").tobytes()
        bits = np.packbits(obj.occupancy.ravel(), bitorder="little")
        return _header(obj.grid, "bits", obj.exterior, None) + bits.tobytes()
    if isinstance(obj, GraphFunction):
        return _header(obj.base_grid, "f64", None, "graph") + obj.values.astype("<f8").tobytes()
    if isinstance(obj, SignedDistanceGrid):
        return _header(obj.grid, "f64", None, "sdf") + obj.values.astype("<f8").tobytes()
    raise FracminError(f"cannot serialize {type(obj).__name__}")


def save(path, obj) -> None:
    with open(path, "wb") as f:
        f.write(dumps(obj))


def loads(data: bytes):
    nl = data.find(b"\n")
    if nl < 0:
        raise FracminError("missing NLSG1 header")
    try:
        head = json.loads(data[:nl].decode())
    except ValueError as exc:
        raise FracminError("malformed NLSG1 header") from exc
    if head.get("magic") != MAGIC:
        raise FracminError("not an NLSG1 file")
    grid = Grid(int(head["n"]), tuple(head["dims"]), tuple(head["origin"]), float(head["h"]))
    body = data[nl + 1:]
    exterior = ExteriorRule.from_json(head.get("exterior", {"kind": "empty"}))
    if head["payload"] == "bits":
        need = (grid.size + 7) // 8
        if len(body) != need:
            raise FracminError("payload length does not match dims")
        occ = np.unpackbits(np.frombuffer(body, np.uint8), bitorder="little")[:grid.size]
        return VoxelSet(grid, occ.astype(bool).reshape(grid.dims), exterior)
    if head["payload"] == "f64":
        if len(body) != 8 * grid.size:
            raise FracminError("payload length does not match dims")
        vals = np.frombuffer(body, "<f8").astype(float).reshape(grid.dims)
        role = head.get("role", "level")
        if role == "level":
            return VoxelSet.from_level(grid, vals, exterior)
        if role == "graph":
            return GraphFunction(grid, vals)
        if role == "sdf":
            return SignedDistanceGrid(grid, vals)
        raise FracminError(f"unknown role {role!r}")
    raise FracminError(f"unknown payload {head['payload']!r}")


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
