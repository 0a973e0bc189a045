"""Spherical atlas codec: 3D oriented points <-> sqrt(N) x sqrt(N) x 6 image.

A point cloud is matched onto N Fibonacci sites on the unit sphere by a
minimum squared-distance assignment. Each site owns one pixel of the atlas
through ``grid_perm``, a fixed site -> pixel bijection computed once per
lattice by matching the sites' equirectangular coordinates to pixel centers.
A pixel stores the offset from its site to the point plus the point normal;
pixels without a point are holes (zeros, mask False).
"""

from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assignment import EXACT_MAX_SITES, pair_cost, solve_assignment
from .errors import ConsistencyError, DataError, ParseError, SizeError
from .fileio import atomic_write
from .geometry import PointCloud
from .seeding import make_rng

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
LATTICE_MAGIC = b"AFLT"
ATLAS_MAGIC = b"AFAT"
FORMAT_VERSION = 1
N_CHANNELS = 6
UNIT_TOL = 1e-6


class DecodeWarning(RuntimeWarning):
    """A valid atlas pixel carried a zero-length normal."""


# ------------------------------------------------------------------ lattice


@dataclass(frozen=True, eq=False)
class SphereLattice:
    """N unit-sphere sites and their pixel on the side x side grid.

    ``grid_perm[site]`` is the row-major pixel index ``row * side + col``.
    """

    n_sites: int
    phase: float
    sites: np.ndarray
    grid_perm: np.ndarray

    def __post_init__(self):
        side = math.isqrt(self.n_sites)
        if side * side != self.n_sites:
            raise SizeError(f"n_sites={self.n_sites} is not a perfect square")
        perm = np.asarray(self.grid_perm, dtype=np.int64)
        if perm.shape != (self.n_sites,) or not np.array_equal(np.sort(perm), np.arange(self.n_sites)):
            raise ConsistencyError("grid_perm is not a bijection onto the pixels")
        sites = np.asarray(self.sites, dtype=np.float64)
        if sites.shape != (self.n_sites, 3):
            raise ConsistencyError("sites must be (n_sites, 3)")
        for a in (sites, perm):
            a.flags.writeable = False
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(self.n_sites)
        inverse.flags.writeable = False
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "grid_perm", perm)
        object.__setattr__(self, "pixel_to_site", inverse)

    @property
    def side(self) -> int:
        return math.isqrt(self.n_sites)


def spiral_phase(seed) -> float:
    """Golden-angle spiral phase for a lattice seed; seed ``None`` means 0."""
    if seed is None:
        return 0.0
    return float(make_rng(seed).random() * 2.0 * math.pi)


def fibonacci_sites(n_sites: int, phase: float = 0.0) -> np.ndarray:
    i = np.arange(n_sites, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n_sites
    r = np.sqrt(1.0 - z * z)
    theta = i * GOLDEN_ANGLE + phase
    sites = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return sites / np.linalg.norm(sites, axis=1, keepdims=True)


def pixel_centers(side: int) -> np.ndarray:
    """(side*side, 2) array of (u, v) pixel centers in row-major order."""
    c = (np.arange(side) + 0.5) / side
    vv, uu = np.meshgrid(c, c, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def grid_potential(v) -> np.ndarray:
    """Transport potential for the uniform-sphere -> uniform-grid step.

    Uniform sites have equirectangular density (pi/2) sin(pi v) in v and are
    uniform in u, so the continuous optimal map is u -> u, v -> (1 - cos pi v)/2.
    Integrating twice its inverse displacement gives the price field below,
    used only to warm-start the solvers.
    """
    v = np.asarray(v, dtype=np.float64)
    w = 1.0 - 2.0 * v
    return (np.sqrt(np.clip(1.0 - w * w, 0.0, None)) - w * np.arccos(np.clip(w, -1.0, 1.0))) / math.pi - v * v


def equirect_project(p):
    """Map unit vectors to (u, v) in [0, 1]^2.

    ``u = (atan2(y, x) + pi) / 2pi`` and ``v = acos(z) / pi``; at the poles
    u is 0.5. Accepts one point (returns a tuple) or an (N, 3) array
    (returns an (N, 2) array).
    """
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    pts = arr.reshape(-1, 3)
    norms = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("equirect_project expects unit vectors")
    z = np.clip(pts[:, 2], -1.0, 1.0)
    u = (np.arctan2(pts[:, 1], pts[:, 0]) + math.pi) / (2.0 * math.pi)
    pole = (np.abs(z) >= 1.0) | ((pts[:, 0] == 0) & (pts[:, 1] == 0))
    u = np.where(pole, 0.5, u)
    v = np.arccos(z) / math.pi
    if single:
        return float(u[0]), float(v[0])
    return np.stack([u, v], axis=1)


def build_sphere_lattice(n_sites: int, seed=0, solver: str = "auto", cache_dir=None) -> SphereLattice:
    """Build (or load from ``cache_dir``) the lattice for ``n_sites`` sites.

    The seed only sets the spiral phase. ``grid_perm`` solves the site ->
    pixel assignment in equirectangular coordinates under squared planar
    distance (no u wraparound). ``solver="auto"`` is exact up to
    4096 sites and auction above.
    """
    if not isinstance(n_sites, (int, np.integer)) or n_sites < 4:
        raise SizeError("n_sites must be an integer >= 4")
    side = math.isqrt(n_sites)
    if side * side != n_sites:
        raise SizeError(f"n_sites={n_sites} is not a perfect square")
    phase = spiral_phase(seed)
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / lattice_filename(n_sites, phase)
        if cache_path.exists():
            return load_lattice(cache_path)

    sites = fibonacci_sites(n_sites, phase)
    uv = equirect_project(sites)
    _assert_injective(uv)
    pixels = pixel_centers(side)
    method = _pick_solver(solver, n_sites)
    result = solve_assignment(
        uv, pixels, method,
        init_prices=grid_potential(pixels[:, 1]),
        eps_start=0.2 / n_sites,
    )
    lattice = SphereLattice(n_sites, phase, sites, result.col_for_row)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(cache_path, lattice_to_bytes(lattice))
    return lattice


def lattice_filename(n_sites: int, phase: float) -> str:
    return f"lattice_n{n_sites}_p{struct.pack('<d', phase).hex()}.aflt"


def _assert_injective(uv):
    order = np.lexsort((uv[:, 0], uv[:, 1]))
    d = np.abs(np.diff(uv[order], axis=0)).max(axis=1)
    if d.size and d.min() <= 1e-12:
        raise AssertionError("equirectangular projection of the lattice is not injective")


def _pick_solver(solver, n_sites):
    if solver == "auto":
        return "exact" if n_sites <= EXACT_MAX_SITES else "auction"
    if solver == "exact" and n_sites > EXACT_MAX_SITES:
        raise ValueError(f"the exact solver is limited to {EXACT_MAX_SITES} sites")
    if solver not in ("exact", "auction"):
        raise ValueError(f"unknown solver {solver!r}")
    return solver


def lattice_to_bytes(lattice: SphereLattice) -> bytes:
    head = LATTICE_MAGIC + struct.pack("<IId", FORMAT_VERSION, lattice.n_sites, lattice.phase)
    return head + lattice.sites.astype("<f4").tobytes() + lattice.grid_perm.astype("<u4").tobytes()


def lattice_from_bytes(data: bytes) -> SphereLattice:
    """Parse a lattice file. Sites are regenerated in float64 from (n_sites, phase)."""
    if data[:4] != LATTICE_MAGIC:
        raise ParseError("not a lattice file (bad magic)", offset=0)
    if len(data) < 20:
        raise ParseError("truncated lattice header", offset=len(data))
    version, n, phase = struct.unpack_from("<IId", data, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported lattice version {version}", offset=4)
    need = 20 + 12 * n + 4 * n
    if len(data) != need:
        raise ParseError(f"lattice payload is {len(data)} bytes, expected {need}", offset=20)
    stored = np.frombuffer(data, dtype="<f4", count=3 * n, offset=20).reshape(n, 3)
    perm = np.frombuffer(data, dtype="<u4", count=n, offset=20 + 12 * n).astype(np.int64)
    sites = fibonacci_sites(n, phase)
    if np.abs(sites - stored).max() > 1e-6:
        raise ConsistencyError("stored sites disagree with the spiral for this phase")
    return SphereLattice(n, phase, sites, perm)


def save_lattice(lattice: SphereLattice, path):
    atomic_write(path, lattice_to_bytes(lattice))


def load_lattice(path) -> SphereLattice:
    with open(path, "rb") as fh:
        return lattice_from_bytes(fh.read())


# --------------------------------------------------------------- assignment


@dataclass(frozen=True, eq=False)
class Assignment:
    """Cloud entry -> sphere site. ``map[i] == -1`` exactly for hole entries.

    ``cost`` is the sum of squared distances over assigned pairs.
    """

    map: np.ndarray
    cost: float
    solver: str = "exact"
    eps: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        m.flags.writeable = False
        object.__setattr__(self, "map", m)


def assign_to_sphere(cloud: PointCloud, lattice: SphereLattice, solver: str = "auto") -> Assignment:
    """Minimum squared-distance injective matching of non-hole points to sites.

    Raises:
        SizeError: more non-hole points than sites.
        DataError: a point lies outside the unit sphere.
        SolverError: the auction did not converge.
    """
    valid = np.flatnonzero(~cloud.is_hole)
    if len(valid) > lattice.n_sites:
        raise SizeError(f"cloud has {len(valid)} points but the lattice only {lattice.n_sites} sites")
    pts = cloud.positions[valid]
    if len(pts) and np.linalg.norm(pts, axis=1).max() > 1.0 + 1e-9:
        raise DataError("cloud is not normalized: points lie outside the unit sphere")
    method = _pick_solver(solver, lattice.n_sites)
    result = solve_assignment(pts, lattice.sites, method)
    full = np.full(len(cloud), -1, dtype=np.int64)
    full[valid] = result.col_for_row
    return Assignment(full, result.cost, result.method, result.eps)


def assignment_cost(cloud: PointCloud, lattice: SphereLattice, assignment: Assignment) -> float:
    """Recompute the transport cost of ``assignment`` from scratch."""
    valid = assignment.map >= 0
    return pair_cost(cloud.positions[valid], lattice.sites, assignment.map[valid])


# -------------------------------------------------------------------- atlas


@dataclass(frozen=True, eq=False)
class Atlas:
    """(side, side, 6) channels, offsets first then normals, plus a validity mask."""

    channels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        mk = np.array(self.mask, dtype=bool)
        if ch.ndim != 3 or ch.shape[0] != ch.shape[1] or ch.shape[2] != N_CHANNELS:
            raise ConsistencyError(f"atlas channels must be (side, side, 6), got {ch.shape}")
        if mk.shape != ch.shape[:2]:
            raise ConsistencyError("mask must be (side, side)")
        ch.flags.writeable = False
        mk.flags.writeable = False
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "mask", mk)

    @property
    def side(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self):
        return self.channels.shape

    @property
    def offsets(self) -> np.ndarray:
        return self.channels[..., :3]

    @property
    def normals(self) -> np.ndarray:
        return self.channels[..., 3:]

    def replace(self, channels=None, mask=None) -> "Atlas":
        return Atlas(self.channels if channels is None else channels,
                     self.mask if mask is None else mask)

    def invariant_violations(self) -> list:
        """Names of violated atlas invariants (empty for a well-formed atlas)."""
        bad = []
        holes = ~self.mask
        if np.any(self.channels[holes] != 0):
            bad.append("hole_not_zero")
        n = np.linalg.norm(self.normals[self.mask], axis=-1)
        if n.size and np.max(np.abs(n - 1.0)) > 1e-5:
            bad.append("normal_not_unit")
        o = np.linalg.norm(self.offsets[self.mask], axis=-1)
        if o.size and o.max() > 2.0 + 1e-6:
            bad.append("offset_too_large")
        if not np.isfinite(self.channels).all():
            bad.append("non_finite")
        return bad

    @classmethod
    def empty(cls, side: int) -> "Atlas":
        return cls(np.zeros((side, side, N_CHANNELS)), np.zeros((side, side), dtype=bool))


def encode_atlas(cloud: PointCloud, lattice: SphereLattice, assignment: Assignment) -> Atlas:
    """Write each point's (offset to its site, normal) into the site's pixel."""
    amap = assignment.map
    if len(amap) != len(cloud):
        raise ConsistencyError(f"assignment covers {len(amap)} entries, cloud has {len(cloud)}")
    assigned = amap >= 0
    if not np.array_equal(assigned, ~cloud.is_hole):
        raise ConsistencyError("assignment domain must be exactly the non-hole points")
    sites = amap[assigned]
    if sites.size and (sites.max() >= lattice.n_sites or len(np.unique(sites)) != len(sites)):
        raise ConsistencyError("assignment is not an injection into the lattice sites")
    side = lattice.side
    flat = np.zeros((lattice.n_sites, N_CHANNELS))
    mask = np.zeros(lattice.n_sites, dtype=bool)
    pix = lattice.grid_perm[sites]
    flat[pix, :3] = cloud.positions[assigned] - lattice.sites[sites]
    flat[pix, 3:] = cloud.normals[assigned]
    mask[pix] = True
    return Atlas(flat.reshape(side, side, N_CHANNELS), mask.reshape(side, side))


def decode_atlas(atlas: Atlas, lattice: SphereLattice) -> PointCloud:
    """One point per valid pixel, in pixel order: site + offset, unit normal.

    Valid pixels with a zero-length normal get their site direction as
    normal and trigger a single :class:`DecodeWarning`.
    """
    if atlas.side != lattice.side:
        raise ConsistencyError(f"atlas side {atlas.side} does not match lattice side {lattice.side}")
    flat = atlas.channels.reshape(-1, N_CHANNELS)
    pix = np.flatnonzero(atlas.mask.ravel())
    sites = lattice.pixel_to_site[pix]
    pos = lattice.sites[sites] + flat[pix, :3]
    nrm = flat[pix, 3:].copy()
    length = np.linalg.norm(nrm, axis=1)
    zero = length < 1e-12
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} valid pixel(s) have zero-length normals; using site directions",
            DecodeWarning,
            stacklevel=2,
        )
        nrm[zero] = lattice.sites[sites[zero]]
        length[zero] = 1.0
    nrm /= length[:, None]
    return PointCloud(pos, nrm)


def encode_cloud(cloud: PointCloud, lattice: SphereLattice, solver: str = "auto"):
    """Assign and encode in one step. Returns (atlas, assignment)."""
    assignment = assign_to_sphere(cloud, lattice, solver)
    return encode_atlas(cloud, lattice, assignment), assignment


def atlas_to_bytes(atlas: Atlas, include_mask: bool = True) -> bytes:
    side = atlas.side
    head = ATLAS_MAGIC + struct.pack("<III", FORMAT_VERSION, side, N_CHANNELS) + bytes([int(include_mask)])
    planes = np.ascontiguousarray(atlas.channels.transpose(2, 0, 1)).astype("<f4").tobytes()
    tail = np.packbits(atlas.mask.ravel()).tobytes() if include_mask else b""
    return head + planes + tail


def atlas_from_bytes(data: bytes) -> Atlas:
    """Parse an atlas file. Without a stored mask every pixel is valid."""
    if data[:4] != ATLAS_MAGIC:
        raise ParseError("not an atlas file (bad magic)", offset=0)
    if len(data) < 17:
        raise ParseError("truncated atlas header", offset=len(data))
    version, side, nch = struct.unpack_from("<III", data, 4)
    has_mask = data[16]
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported atlas version {version}", offset=4)
    if nch != N_CHANNELS:
        raise ParseError(f"atlas has {nch} channels, expected {N_CHANNELS}", offset=12)
    n = side * side
    plane_bytes = 4 * N_CHANNELS * n
    mask_bytes = (n + 7) // 8 if has_mask else 0
    if len(data) != 17 + plane_bytes + mask_bytes:
        raise ParseError(
            f"atlas payload is {len(data) - 17} bytes, expected {plane_bytes + mask_bytes}", offset=17
        )
    planes = np.frombuffer(data, dtype="<f4", count=N_CHANNELS * n, offset=17)
    channels = planes.reshape(N_CHANNELS, side, side).transpose(1, 2, 0).astype(np.float64)
    if has_mask:
        bits = np.frombuffer(data, dtype=np.uint8, count=mask_bytes, offset=17 + plane_bytes)
        mask = np.unpackbits(bits)[:n].astype(bool).reshape(side, side)
    else:
        mask = np.ones((side, side), dtype=bool)
    return Atlas(channels, mask)


def save_atlas(atlas: Atlas, path):
    atomic_write(path, atlas_to_bytes(atlas))


def load_atlas(path) -> Atlas:
    with open(path, "rb") as fh:
        return atlas_from_bytes(fh.read())


def atlas_preview_png(atlas: Atlas) -> bytes:
    """Offset channels min-max normalized to RGB, holes black. For eyeballing only."""
    from PIL import Image

    off = atlas.offsets
    rgb = np.zeros(off.shape)
    if atlas.mask.any():
        vals = off[atlas.mask]
        lo, hi = vals.min(axis=0), vals.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        rgb[atlas.mask] = (vals - lo) / span
    img = Image.fromarray((rgb * 255.0 + 0.5).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
