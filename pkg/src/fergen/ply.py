"""ASCII PLY reading and writing for plain xyz pointclouds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_FLOAT_TYPES = {"float", "float32", "float64", "double"}


class PlyError(ValueError):
    """Raised when a PLY file cannot be parsed as an xyz pointcloud."""


def read_ascii_ply(path) -> np.ndarray:
    """Read an ASCII PLY file and return its vertices as a (P, 3) float64 array.

    Only the vertex element is consumed; ``x``, ``y`` and ``z`` must be
    declared as float-typed vertex properties. Binary PLY files are rejected.
    """
    path = Path(path)
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise PlyError(f"{path}: not a PLY file (missing 'ply' magic)")

        fmt = None
        vertex_count = None
        vertex_props: list[tuple[str, str]] = []
        in_vertex_element = False
        while True:
            raw = fh.readline()
            if not raw:
                raise PlyError(f"{path}: header ended before 'end_header'")
            tokens = raw.split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1] if len(tokens) > 1 else None
            elif tokens[0] == "element":
                in_vertex_element = tokens[1] == "vertex"
                if in_vertex_element:
                    try:
                        vertex_count = int(tokens[2])
                    except (IndexError, ValueError):
                        raise PlyError(f"{path}: malformed vertex element declaration") from None
            elif tokens[0] == "property" and in_vertex_element:
                if len(tokens) < 3:
                    raise PlyError(f"{path}: malformed property declaration")
                vertex_props.append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break

        if fmt != "ascii":
            raise PlyError(f"{path}: only 'format ascii 1.0' is supported, got {fmt!r}")
        if vertex_count is None:
            raise PlyError(f"{path}: no vertex element declared")
        names = [name for _, name in vertex_props]
        try:
            cols = tuple(names.index(axis) for axis in ("x", "y", "z"))
        except ValueError:
            raise PlyError(f"{path}: vertex element lacks x/y/z properties") from None
        for axis in ("x", "y", "z"):
            ptype = vertex_props[names.index(axis)][0]
            if ptype not in _FLOAT_TYPES:
                raise PlyError(f"{path}: property {axis} has non-float type {ptype!r}")

        try:
            data = np.loadtxt(fh, dtype=np.float64, usecols=cols,
                              max_rows=vertex_count, ndmin=2)
        except ValueError as exc:
            raise PlyError(f"{path}: malformed vertex data ({exc})") from None
    if data.shape != (vertex_count, 3):
        raise PlyError(
            f"{path}: expected {vertex_count} vertex rows, read {data.shape[0]}")
    return data


def write_ascii_ply(path, vertices: np.ndarray) -> None:
    """Write vertices as ASCII PLY with x/y/z double properties.

    Coordinates are printed with 17 significant digits so a write/read round
    trip reproduces float64 values exactly.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise PlyError(f"vertices must be (P, 3), got {vertices.shape}")
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {vertices.shape[0]}\n")
        fh.write("property double x\n")
        fh.write("property double y\n")
        fh.write("property double z\n")
        fh.write("end_header\n")
        np.savetxt(fh, vertices, fmt="%.17g")
