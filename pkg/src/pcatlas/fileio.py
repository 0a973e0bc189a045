"""OBJ / PLY readers and writers for meshes and oriented point clouds.

Only the subset the pipeline needs: OBJ ``v``/``f`` records (other records
are skipped) and PLY in ascii or binary_little_endian. Polygons are
fan-triangulated: ``(a, b, c, d)`` becomes ``(a, b, c), (a, c, d)``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import ParseError, StructuralError
from .geometry import PointCloud, TriangleMesh

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def mesh_format_from_path(path) -> str:
    ext = Path(path).suffix.lower()
    if ext == ".obj":
        return "obj"
    if ext == ".ply":
        return "ply"
    raise ParseError(f"unsupported mesh extension {ext!r}")


def load_mesh(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        return parse_mesh(fh.read(), mesh_format_from_path(path))


def load_point_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        return parse_point_cloud(fh.read())


def parse_mesh(content: bytes, format: str) -> TriangleMesh:
    """Parse OBJ or PLY bytes into a TriangleMesh, preserving vertex order."""
    fmt = format.lower()
    if fmt == "obj":
        return _parse_obj(content)
    if fmt == "ply":
        elements = _parse_ply(content)
        vertex = _require_element(elements, "vertex")
        verts = _xyz(vertex)
        face_el = elements.get("face")
        polys = []
        if face_el is not None:
            key = _face_key(face_el)
            polys = face_el["data"][key]
        return _build_mesh(verts, polys, lambda i: f"face record {i}")
    raise ValueError(f"unknown mesh format {format!r}")


def _parse_obj(content: bytes) -> TriangleMesh:
    verts = []
    polys = []
    face_lines = []
    text = content.decode("utf-8", errors="replace")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            if len(tokens) < 4:
                raise ParseError("vertex record needs 3 coordinates", line=lineno)
            try:
                verts.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise ParseError(f"bad vertex coordinate in {raw.strip()!r}", line=lineno) from None
        elif tag == "f":
            if len(tokens) < 4:
                raise ParseError("face record needs at least 3 vertices", line=lineno)
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/", 1)[0]
                try:
                    k = int(head)
                except ValueError:
                    raise ParseError(f"bad face index {tok!r}", line=lineno) from None
                if k == 0:
                    raise ParseError("face index 0 is invalid in OBJ", line=lineno)
                # Negative indices are relative to the vertices read so far.
                idx.append(k - 1 if k > 0 else len(verts) + k)
            polys.append(idx)
            face_lines.append(lineno)
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    return _build_mesh(verts, polys, lambda i: f"line {face_lines[i]}")


def _build_mesh(verts, polys, where) -> TriangleMesh:
    n = len(verts)
    tris = []
    for i, poly in enumerate(polys):
        poly = [int(k) for k in poly]
        if len(poly) < 3:
            raise ParseError(f"polygon with {len(poly)} vertices at {where(i)}")
        for k in poly:
            if k < 0 or k >= n:
                raise StructuralError(
                    f"face index {k + 1} out of range for {n} vertices at {where(i)}"
                )
        for j in range(1, len(poly) - 1):
            tris.append((poly[0], poly[j], poly[j + 1]))
    faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces)


# ---------------------------------------------------------------- PLY


def _parse_ply(content: bytes) -> dict:
    """Return ``{element name: {"count", "props", "data"}}`` in file order.

    ``data`` maps property name to an ndarray (scalars) or a list of lists.
    """
    marker = b"end_header"
    pos = content.find(marker)
    if not content.startswith(b"ply") or pos < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or end_header)", line=1)
    nl = content.find(b"\n", pos)
    body_start = len(content) if nl < 0 else nl + 1
    header = content[:pos].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = {}
    order = []
    current = None
    for lineno, line in enumerate(header, start=1):
        tokens = line.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2:
                raise ParseError("format line incomplete", line=lineno)
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {fmt!r}", line=lineno)
        elif tokens[0] == "element":
            try:
                name, count = tokens[1], int(tokens[2])
            except (IndexError, ValueError):
                raise ParseError(f"bad element line {line!r}", line=lineno) from None
            current = {"count": count, "props": []}
            elements[name] = current
            order.append(name)
        elif tokens[0] == "property":
            if current is None:
                raise ParseError("property before any element", line=lineno)
            try:
                if tokens[1] == "list":
                    prop = ("list", PLY_TYPES[tokens[2]], PLY_TYPES[tokens[3]], tokens[4])
                else:
                    prop = ("scalar", PLY_TYPES[tokens[1]], None, tokens[2])
            except (IndexError, KeyError):
                raise ParseError(f"bad property line {line!r}", line=lineno) from None
            current["props"].append(prop)
        else:
            raise ParseError(f"unknown header keyword {tokens[0]!r}", line=lineno)
    if fmt is None:
        raise ParseError("PLY header has no format line")

    if fmt == "ascii":
        _read_ply_ascii(content[body_start:], elements, order, len(header) + 2)
    else:
        _read_ply_binary(content, body_start, elements, order)
    return {name: elements[name] for name in order}


def _read_ply_ascii(body: bytes, elements, order, first_line):
    lines = body.decode("ascii", errors="replace").splitlines()
    cursor = 0
    for name in order:
        el = elements[name]
        props = el["props"]
        cols = {p[3]: [] for p in props}
        for _ in range(el["count"]):
            # Skip blank lines between records.
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            lineno = first_line + cursor
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of data in element {name!r}", line=lineno)
            tokens = lines[cursor].split()
            cursor += 1
            t = 0
            try:
                for kind, dtype, itype, pname in props:
                    if kind == "scalar":
                        cols[pname].append(_ascii_value(tokens[t], dtype))
                        t += 1
                    else:
                        cnt = int(tokens[t])
                        cols[pname].append([_ascii_value(x, itype) for x in tokens[t + 1:t + 1 + cnt]])
                        if len(cols[pname][-1]) != cnt:
                            raise IndexError
                        t += 1 + cnt
            except (IndexError, ValueError):
                raise ParseError(f"malformed {name!r} record", line=lineno) from None
        el["data"] = {
            p[3]: (np.asarray(cols[p[3]], dtype=p[1]) if p[0] == "scalar" else cols[p[3]])
            for p in props
        }


def _ascii_value(tok, dtype):
    return float(tok) if dtype[0] == "f" else int(tok)


def _read_ply_binary(content: bytes, offset: int, elements, order):
    for name in order:
        el = elements[name]
        props = el["props"]
        count = el["count"]
        if all(p[0] == "scalar" for p in props):
            dt = np.dtype([(p[3], "<" + p[1]) for p in props])
            need = dt.itemsize * count
            if offset + need > len(content):
                raise ParseError(f"truncated binary data in element {name!r}", offset=offset)
            arr = np.frombuffer(content, dtype=dt, count=count, offset=offset)
            el["data"] = {p[3]: arr[p[3]].astype(p[1]) for p in props}
            offset += need
            continue
        fast = _try_uniform_lists(content, offset, props, count)
        if fast is not None:
            el["data"], offset = fast
            continue
        el["data"], offset = _read_records_slow(content, offset, props, count, name)


def _try_uniform_lists(content, offset, props, count):
    # Fast path for the usual all-triangle face element.
    if len(props) != 1 or count == 0:
        return None
    _, ctype, itype, pname = props[0]
    first = np.frombuffer(content, dtype="<" + ctype, count=1, offset=offset) if offset < len(content) else None
    if first is None or first.size == 0:
        return None
    k = int(first[0])
    dt = np.dtype([("n", "<" + ctype), ("idx", "<" + itype, (k,))])
    if offset + dt.itemsize * count > len(content):
        return None
    arr = np.frombuffer(content, dtype=dt, count=count, offset=offset)
    if np.any(arr["n"] != k):
        return None
    return {pname: arr["idx"].astype(np.int64)}, offset + dt.itemsize * count


def _read_records_slow(content, offset, props, count, name):
    cols = {p[3]: [] for p in props}
    for _ in range(count):
        for kind, dtype, itype, pname in props:
            try:
                if kind == "scalar":
                    val = np.frombuffer(content, dtype="<" + dtype, count=1, offset=offset)[0]
                    offset += np.dtype(dtype).itemsize
                    cols[pname].append(val)
                else:
                    cnt = int(np.frombuffer(content, dtype="<" + dtype, count=1, offset=offset)[0])
                    offset += np.dtype(dtype).itemsize
                    vals = np.frombuffer(content, dtype="<" + itype, count=cnt, offset=offset)
                    offset += np.dtype(itype).itemsize * cnt
                    cols[pname].append(vals.tolist())
            except ValueError:
                raise ParseError(f"truncated binary data in element {name!r}", offset=offset) from None
    data = {
        p[3]: (np.asarray(cols[p[3]], dtype=p[1]) if p[0] == "scalar" else cols[p[3]])
        for p in props
    }
    return data, offset


def _require_element(elements, name):
    el = elements.get(name)
    if el is None:
        raise ParseError(f"PLY has no {name!r} element")
    return el


def _xyz(vertex, names=("x", "y", "z")):
    data = vertex["data"]
    missing = [n for n in names if n not in data]
    if missing:
        raise ParseError(f"vertex element lacks properties {missing}")
    return np.stack([np.asarray(data[n], dtype=np.float64) for n in names], axis=1).reshape(-1, 3)


def _face_key(face_el):
    for kind, _, _, pname in face_el["props"]:
        if kind == "list" and pname in ("vertex_indices", "vertex_index"):
            return pname
    raise ParseError("face element lacks a vertex_indices list property")


def parse_point_cloud(content: bytes) -> PointCloud:
    """Parse a PLY with x,y,z,nx,ny,nz. Entries with an all-zero normal are holes."""
    elements = _parse_ply(content)
    vertex = _require_element(elements, "vertex")
    pos = _xyz(vertex)
    nrm = _xyz(vertex, ("nx", "ny", "nz"))
    hole = ~np.any(nrm != 0, axis=1)
    return PointCloud(pos, nrm, hole)


def write_point_cloud(cloud: PointCloud, format: str = "binary") -> bytes:
    """Serialize as PLY with double-precision x,y,z,nx,ny,nz.

    The binary form round-trips bitwise through :func:`parse_point_cloud`.
    """
    n = len(cloud)
    fmt = {"binary": "binary_little_endian", "ascii": "ascii"}[format]
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double nx\nproperty double ny\nproperty double nz\n"
        "end_header\n"
    ).encode("ascii")
    payload = np.hstack([cloud.positions, cloud.normals]).astype("<f8")
    if format == "binary":
        return header + payload.tobytes()
    lines = [" ".join(repr(float(x)) for x in row) for row in payload]
    return header + "".join(line + "\n" for line in lines).encode("ascii")


def write_mesh(mesh: TriangleMesh, format: str = "obj") -> bytes:
    if format == "obj":
        out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
        return ("\n".join(out) + "\n").encode("ascii")
    if format in ("ply", "ply-ascii"):
        binary = format == "ply"
        header = (
            "ply\n"
            f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
            f"element vertex {mesh.n_vertices}\n"
            "property double x\nproperty double y\nproperty double z\n"
            f"element face {mesh.n_faces}\n"
            "property list uchar int vertex_indices\n"
            "end_header\n"
        ).encode("ascii")
        if binary:
            faces = np.zeros(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            faces["n"] = 3
            faces["idx"] = mesh.faces
            return header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes()
        body = [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
        return header + ("\n".join(body) + "\n").encode("ascii")
    raise ValueError(f"unknown mesh format {format!r}")


def atomic_write(path, data: bytes):
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
