"""Mesh file codecs: OBJ (text, 1-based indices) and binary little-endian PLY.

Pixel provenance rides along as an OBJ comment block, one ``# pix <row> <col>``
line per vertex in vertex order, and as int32 ``pix_row``/``pix_col`` vertex
properties in PLY. Coordinates are written at full float64 precision so
write-then-read is the identity.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, StructuralError
from .mesh import Mesh


def write_obj(mesh: Mesh, path) -> None:
    lines = []
    if mesh.image_size is not None:
        lines.append(f"# image {mesh.image_size[0]} {mesh.image_size[1]}")
    if mesh.pixels is not None:
        for r, c in mesh.pixels:
            lines.append(f"# pix {r} {c}")
    for x, y, z in mesh.vertices:
        lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts = []
    faces = []
    pixels = []
    image_size = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "#":
            if len(parts) >= 4 and parts[1] == "pix":
                pixels.append((int(parts[2]), int(parts[3])))
            elif len(parts) >= 4 and parts[1] == "image":
                image_size = (int(parts[2]), int(parts[3]))
        elif parts[0] == "v":
            verts.append(tuple(float(t) for t in parts[1:4]))
        elif parts[0] == "f":
            # tolerate v/vt/vn references; only the vertex index is kept
            idx = [int(t.split("/")[0]) - 1 for t in parts[1:]]
            if len(idx) != 3:
                raise StructuralError(f"non-triangular face in {path}: {line!r}")
            faces.append(tuple(idx))
    pix = np.array(pixels, dtype=np.int64) if len(pixels) == len(verts) and verts else None
    return Mesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
        pixels=pix,
        image_size=image_size,
    )


def write_ply(mesh: Mesh, path) -> None:
    has_pix = mesh.pixels is not None
    header = ["ply", "format binary_little_endian 1.0"]
    if mesh.image_size is not None:
        header.append(f"comment image {mesh.image_size[0]} {mesh.image_size[1]}")
    header += [
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_pix:
        header += ["property int pix_row", "property int pix_col"]
    header += [
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for k in range(mesh.n_vertices):
            fh.write(struct.pack("<3d", *mesh.vertices[k]))
            if has_pix:
                fh.write(struct.pack("<2i", int(mesh.pixels[k, 0]), int(mesh.pixels[k, 1])))
        for face in mesh.faces:
            fh.write(struct.pack("<B3i", 3, *[int(t) for t in face]))


def read_ply(path) -> Mesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ConfigurationError(f"not a PLY file: {path}")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in header:
        raise ConfigurationError("only binary little-endian PLY is supported")
    n_vert = n_face = 0
    vertex_props = []
    image_size = None
    current = None
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "comment" and len(parts) >= 4 and parts[1] == "image":
            image_size = (int(parts[2]), int(parts[3]))
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vert = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex" and parts[1] != "list":
            vertex_props.append((parts[2], parts[1]))
    sizes = {"double": ("d", 8), "float": ("f", 4), "int": ("i", 4), "uchar": ("B", 1)}
    fmt = "<" + "".join(sizes[t][0] for _, t in vertex_props)
    stride = struct.calcsize(fmt)
    names = [n for n, _ in vertex_props]
    rows = [struct.unpack_from(fmt, body, k * stride) for k in range(n_vert)]
    verts = np.array(
        [[r[names.index("x")], r[names.index("y")], r[names.index("z")]] for r in rows]
    ).reshape(-1, 3)
    pixels = None
    if "pix_row" in names and "pix_col" in names:
        pixels = np.array(
            [[r[names.index("pix_row")], r[names.index("pix_col")]] for r in rows],
            dtype=np.int64,
        ).reshape(-1, 2)
    off = n_vert * stride
    faces = []
    for _ in range(n_face):
        (count,) = struct.unpack_from("<B", body, off)
        off += 1
        idx = struct.unpack_from(f"<{count}i", body, off)
        off += 4 * count
        if count != 3:
            raise StructuralError("only triangular PLY faces are supported")
        faces.append(idx)
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3),
                pixels=pixels, image_size=image_size)


def read_mesh(path) -> Mesh:
    """Dispatch on file extension (.obj / .ply)."""
    p = Path(path)
    if p.suffix.lower() == ".obj":
        return read_obj(p)
    if p.suffix.lower() == ".ply":
        return read_ply(p)
    raise ConfigurationError(f"unsupported mesh format: {p.suffix!r}")


def write_mesh(mesh: Mesh, path) -> None:
    p = Path(path)
    if p.suffix.lower() == ".obj":
        write_obj(mesh, p)
    elif p.suffix.lower() == ".ply":
        write_ply(mesh, p)
    else:
        raise ConfigurationError(f"unsupported mesh format: {p.suffix!r}")
