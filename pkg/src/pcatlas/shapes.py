"""Analytic oriented surface samples and small procedural meshes.

The samplers draw area-uniform points with exact outward normals from closed
smooth surfaces that fit inside the unit ball. They back the end-to-end
checks and make fixtures independent of any mesh file.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import PointCloud, TriangleMesh
from .seeding import make_rng


def _unit(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_sphere(n: int, seed: int, radius: float = 0.9, center=(0.0, 0.0, 0.0)) -> PointCloud:
    d = _unit(make_rng(seed).standard_normal((n, 3)))
    return PointCloud(np.asarray(center) + radius * d, d)


def sample_torus(n: int, seed: int, major: float = 0.65, minor: float = 0.25) -> PointCloud:
    """Torus around the z axis; uses rejection on the tube angle for area uniformity."""
    rng = make_rng(seed)
    phis = []
    need = n
    while need > 0:
        phi = rng.uniform(0, 2 * math.pi, 2 * need + 16)
        keep = rng.uniform(0, major + minor, len(phi)) < major + minor * np.cos(phi)
        phis.append(phi[keep][:need])
        need -= len(phis[-1])
    phi = np.concatenate(phis)
    theta = rng.uniform(0, 2 * math.pi, n)
    ring = major + minor * np.cos(phi)
    pos = np.stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)], axis=1)
    nrm = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1)
    return PointCloud(pos, nrm)


def sample_capsule(n: int, seed: int, radius: float = 0.35, half_length: float = 0.5) -> PointCloud:
    """Cylinder of the given half length along z, closed by hemispherical caps."""
    rng = make_rng(seed)
    side = 2 * math.pi * radius * (2 * half_length)
    caps = 4 * math.pi * radius ** 2
    on_side = rng.random(n) < side / (side + caps)
    pos = np.empty((n, 3))
    nrm = np.empty((n, 3))
    k = int(on_side.sum())
    theta = rng.uniform(0, 2 * math.pi, k)
    nrm[on_side] = np.stack([np.cos(theta), np.sin(theta), np.zeros(k)], axis=1)
    pos[on_side] = radius * nrm[on_side]
    pos[on_side, 2] = rng.uniform(-half_length, half_length, k)
    d = _unit(rng.standard_normal((n - k, 3)))
    nrm[~on_side] = d
    pos[~on_side] = radius * d + np.where(d[:, 2:] >= 0, 1.0, -1.0) * np.array([0.0, 0.0, half_length])
    return PointCloud(pos, nrm)


SHAPES = {"sphere": sample_sphere, "torus": sample_torus, "capsule": sample_capsule}


def box_mesh(size=1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned cube (12 outward-facing triangles) of edge length ``size``."""
    h = 0.5 * size
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + np.asarray(center)
    # Vertex index = 4*ix + 2*iy + iz.
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriangleMesh(v, f)


def uv_sphere_mesh(n_lat: int = 16, n_lon: int = 32, radius: float = 0.9) -> TriangleMesh:
    """Latitude/longitude sphere with single pole vertices."""
    if n_lat < 2 or n_lon < 3:
        raise ValueError("need n_lat >= 2 and n_lon >= 3")
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * math.pi * j / n_lon
            verts.append([radius * math.sin(th) * math.cos(ph), radius * math.sin(th) * math.sin(ph), radius * math.cos(th)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + j % n_lon

    faces = []
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    return TriangleMesh(np.array(verts), np.array(faces))


def subdivide(mesh: TriangleMesh) -> TriangleMesh:
    """Midpoint 1-to-4 subdivision with shared edge midpoints."""
    verts = [tuple(v) for v in mesh.vertices]
    mid = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            mid[key] = len(verts)
            verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
        return mid[key]

    faces = []
    for a, b, c in mesh.faces.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
    return TriangleMesh(np.array(verts), np.array(faces))
