"""Wavefront OBJ (read/write) and ASCII PLY (read) triangle-mesh I/O.

The OBJ subset is `v x y z` and `f i j k ...` with 1-based indices; polygon
faces are fan-triangulated.  Vertices are written with six decimals, so a
write/read round trip preserves coordinates to 1e-6.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .headmodel import Mesh


def read_obj(path) -> Mesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            tag = fields[0]
            if tag == "v":
                if len(fields) < 4:
                    raise ValueError(f"{path}:{lineno}: malformed vertex line")
                try:
                    vertices.append([float(x) for x in fields[1:4]])
                except ValueError as err:
                    raise ValueError(f"{path}:{lineno}: bad vertex number") from err
            elif tag == "f":
                if len(fields) < 4:
                    raise ValueError(f"{path}:{lineno}: face needs 3+ vertices")
                try:
                    ids = [int(field.split("/")[0]) for field in fields[1:]]
                except ValueError as err:
                    raise ValueError(f"{path}:{lineno}: bad face index") from err
                if any(i <= 0 for i in ids):
                    raise ValueError(f"{path}:{lineno}: face indices must be positive")
                for second, third in zip(ids[1:], ids[2:]):
                    faces.append((ids[0] - 1, second - 1, third - 1))
            # other tags (vn, vt, s, o, g, usemtl, ...) are ignored
    verts = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    face_arr = np.array(faces, dtype=int).reshape(-1, 3)
    if face_arr.size and face_arr.max() >= len(verts):
        raise ValueError(f"{path}: face index beyond vertex count")
    return Mesh(verts, face_arr)


def write_obj(mesh: Mesh, path) -> None:
    lines = []
    for x, y, z in np.asarray(mesh.vertices, dtype=np.float64):
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for a, b, c in np.asarray(mesh.faces, dtype=int):
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path) -> Mesh:
    """Minimal ASCII PLY reader: vertex x/y/z properties and face lists."""
    with open(path, "r", encoding="utf-8") as handle:
        line = handle.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertices = n_faces = 0
        fmt = None
        in_header = True
        while in_header:
            line = handle.readline()
            if not line:
                raise ValueError(f"{path}: unterminated PLY header")
            fields = line.split()
            if not fields:
                continue
            if fields[0] == "format":
                fmt = fields[1]
            elif fields[0] == "element" and fields[1] == "vertex":
                n_vertices = int(fields[2])
            elif fields[0] == "element" and fields[1] == "face":
                n_faces = int(fields[2])
            elif fields[0] == "end_header":
                in_header = False
        if fmt != "ascii":
            raise ValueError(f"{path}: only ascii PLY is supported")
        vertices = np.empty((n_vertices, 3))
        for i in range(n_vertices):
            vertices[i] = [float(x) for x in handle.readline().split()[:3]]
        faces = []
        for _ in range(n_faces):
            fields = [int(x) for x in handle.readline().split()]
            count, ids = fields[0], fields[1:]
            if count < 3 or len(ids) < count:
                raise ValueError(f"{path}: malformed face row")
            for second, third in zip(ids[1:count], ids[2:count]):
                faces.append((ids[0], second, third))
    face_arr = np.array(faces, dtype=int).reshape(-1, 3)
    if face_arr.size and (face_arr.min() < 0 or face_arr.max() >= n_vertices):
        raise ValueError(f"{path}: face index out of range")
    return Mesh(vertices, face_arr)


def read_mesh(path) -> Mesh:
    """Dispatch on extension: .obj or .ply."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply(path)
    raise ValueError(f"unsupported mesh format {suffix!r}")
