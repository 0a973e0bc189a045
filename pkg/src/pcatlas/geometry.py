"""Core geometry containers and the mesh → oriented point cloud operations.

Meshes are normalized into a ball of radius 0.95 around the bounding-box
center, sampled area-weighted, and thinned with farthest point sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, SizeError, StructuralError
from .seeding import make_rng

TARGET_RADIUS = 0.95
DEFAULT_MAX_FACES = 800
NORMAL_TOL = 1e-6


def _frozen(a, dtype, shape_tail):
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh. Vertices are (V, 3) float64, faces (F, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64, (3,))
        f = _frozen(self.faces, np.int64, (3,))
        if v.ndim != 2 or v.shape[1] != 3:
            raise StructuralError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise StructuralError(f"faces must have shape (F, 3), got {f.shape}")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
                raise StructuralError(
                    f"face {bad} references vertex outside [0, {len(v)})"
                )
            dup = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if dup.any():
                raise StructuralError(
                    f"face {int(np.argmax(dup))} references the same vertex twice"
                )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero vectors for degenerate faces."""
        cross = self._face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        out = np.zeros_like(cross)
        ok = norm[:, 0] > 0
        out[ok] = cross[ok] / norm[ok]
        return out

    def _face_cross(self):
        tri = self.vertices[self.faces]
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Oriented points with an optional hole flag per entry.

    Hole entries carry zero position and zero normal; every other entry has a
    unit normal.
    """

    positions: np.ndarray
    normals: np.ndarray
    is_hole: np.ndarray = field(default=None)

    def __post_init__(self):
        p = _frozen(self.positions, np.float64, (3,))
        n = _frozen(self.normals, np.float64, (3,))
        if p.ndim != 2 or p.shape[1] != 3 or n.shape != p.shape:
            raise StructuralError(
                f"positions and normals must both be (N, 3), got {p.shape} and {n.shape}"
            )
        if self.is_hole is None:
            h = np.zeros(len(p), dtype=bool)
            h.flags.writeable = False
        else:
            h = _frozen(self.is_hole, bool, ())
            if h.shape != (len(p),):
                raise StructuralError("is_hole must have one flag per point")
        if not (np.isfinite(p).all() and np.isfinite(n).all()):
            raise StructuralError("point cloud contains non-finite coordinates")
        if h.any() and (np.any(p[h] != 0) or np.any(n[h] != 0)):
            raise StructuralError("hole entries must have zero position and normal")
        lengths = np.linalg.norm(n[~h], axis=1)
        if lengths.size and np.max(np.abs(lengths - 1.0)) > NORMAL_TOL:
            raise StructuralError("non-hole normals must have unit length")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "is_hole", h)

    def __len__(self):
        return len(self.positions)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(~self.is_hole))

    def valid(self) -> "PointCloud":
        """The cloud with hole entries dropped."""
        if not self.is_hole.any():
            return self
        keep = ~self.is_hole
        return PointCloud(self.positions[keep], self.normals[keep])

    def subset(self, index) -> "PointCloud":
        index = np.asarray(index)
        return PointCloud(self.positions[index], self.normals[index], self.is_hole[index])

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def same_as(self, other: "PointCloud") -> bool:
        """Bitwise equality of all arrays."""
        return (
            len(self) == len(other)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.normals, other.normals)
            and np.array_equal(self.is_hole, other.is_hole)
        )


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps original coordinates x to ``scale * (x + translation)``."""

    translation: tuple
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "translation", tuple(float(c) for c in self.translation))

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) + np.asarray(self.translation)) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale - np.asarray(self.translation)


def filter_by_face_count(mesh: TriangleMesh, max_faces: int = DEFAULT_MAX_FACES) -> bool:
    """Return True (accept) unless the mesh has strictly more than ``max_faces`` faces."""
    if max_faces < 1:
        raise ValueError("max_faces must be >= 1")
    return mesh.n_faces <= max_faces


def normalize_to_unit_sphere(mesh: TriangleMesh):
    """Center on the bounding-box center and scale the farthest vertex to radius 0.95.

    Returns:
        (normalized mesh, NormalizationTransform mapping original → normalized).

    Raises:
        DegenerateGeometryError: the mesh has no vertices or all vertices coincide.
    """
    v = mesh.vertices
    if len(v) == 0:
        raise DegenerateGeometryError("cannot normalize a mesh without vertices")
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    if not radius > 0:
        raise DegenerateGeometryError("all vertices coincide; mesh has zero extent")
    transform = NormalizationTransform(tuple(-center), TARGET_RADIUS / radius)
    return TriangleMesh(transform.apply(v), mesh.faces), transform


def sample_surface(mesh: TriangleMesh, n: int, seed: int, return_face_index=False):
    """Draw ``n`` area-weighted surface samples carrying their face's unit normal.

    Args:
        mesh: source mesh; needs at least one face of positive area.
        n: number of samples.
        seed: RNG seed; identical seeds give bitwise-identical clouds.
        return_face_index: also return the face each sample came from.
    """
    if n < 0:
        raise SizeError("sample count must be non-negative")
    areas = mesh.face_areas() if mesh.n_faces else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise DegenerateGeometryError("mesh has zero surface area")
    rng = make_rng(seed)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    # Guard against the last cdf entry rounding below 1.
    face = np.minimum(face, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face]]
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    normals = mesh.face_normals()[face]
    cloud = PointCloud(pts, normals)
    if return_face_index:
        return cloud, face
    return cloud


def farthest_point_sample(cloud: PointCloud, n: int, seed: int = 0, start_index=None) -> PointCloud:
    """Greedy farthest point sampling over the non-hole entries of ``cloud``.

    The first point is drawn uniformly from ``seed`` unless ``start_index``
    (an index into the non-hole points) is given. Ties go to the lowest index.
    Output order is selection order.
    """
    pts = cloud.valid()
    m = len(pts)
    if n > m:
        raise SizeError(f"cannot select {n} points from a cloud of {m}")
    if n <= 0:
        return PointCloud.empty()
    first = int(make_rng(seed).integers(m)) if start_index is None else int(start_index)
    if not 0 <= first < m:
        raise SizeError(f"start_index {first} outside [0, {m})")
    order = fps_indices(pts.positions, n, first)
    return pts.subset(order)


def fps_indices(positions: np.ndarray, n: int, first: int) -> np.ndarray:
    selected = np.empty(n, dtype=np.int64)
    selected[0] = first
    dist = np.sum((positions - positions[first]) ** 2, axis=1)
    for k in range(1, n):
        nxt = int(np.argmax(dist))
        selected[k] = nxt
        np.minimum(dist, np.sum((positions - positions[nxt]) ** 2, axis=1), out=dist)
    return selected


def pad_with_holes(cloud: PointCloud, n: int) -> PointCloud:
    """Append hole entries so the cloud has exactly ``n`` entries."""
    extra = n - len(cloud)
    if extra < 0:
        raise SizeError(f"cloud already has {len(cloud)} entries, cannot pad to {n}")
    z = np.zeros((extra, 3))
    return PointCloud(
        np.vstack([cloud.positions, z]),
        np.vstack([cloud.normals, z]),
        np.concatenate([cloud.is_hole, np.ones(extra, dtype=bool)]),
    )
