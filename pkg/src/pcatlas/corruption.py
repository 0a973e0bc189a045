"""Synthetic occlusion and sensor noise for clean point clouds.

A corruption drops ``ceil(fraction * n)`` points, either uniformly at random
or as the nearest neighbors of a random seed point, and then jitters the
survivors with isotropic Gaussian noise. Normals are never touched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .geometry import PointCloud
from .seeding import derive_seed, make_rng

DEFAULT_FRACTION = 0.2
DEFAULT_SIGMA = 0.005


class Strategy(str, Enum):
    RANDOM = "random"
    CENTER = "center"


@dataclass(frozen=True)
class CorruptionSpec:
    strategy: Strategy = Strategy.RANDOM
    crop_fraction: float = DEFAULT_FRACTION
    sigma: float = DEFAULT_SIGMA
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        _check_fraction(self.crop_fraction)
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @classmethod
    def from_dict(cls, d) -> "CorruptionSpec":
        return cls(Strategy(d["strategy"]), float(d["crop_fraction"]), float(d["sigma"]), int(d["seed"]))


def _check_fraction(fraction):
    if not 0 <= fraction < 1:
        raise ValueError(f"crop fraction must lie in [0, 1), got {fraction}")


def removal_count(n: int, fraction: float) -> int:
    """``ceil(fraction * n)``, immune to binary round-up such as 0.2 * 15 = 3.0000000000000004."""
    _check_fraction(fraction)
    return min(n, math.ceil(fraction * n - 1e-9))


def crop_random_indices(cloud: PointCloud, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices (into the non-hole points) of the survivors of a random crop."""
    n = cloud.n_valid
    k = removal_count(n, fraction)
    removed = make_rng(seed).choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[removed] = False
    return np.flatnonzero(keep)


def crop_center_indices(cloud: PointCloud, fraction: float, seed: int) -> np.ndarray:
    """Survivor indices after removing the k nearest points to a random seed point.

    The seed point counts as its own nearest neighbor; distance ties are
    removed lowest index first.
    """
    pts = cloud.valid().positions
    n = len(pts)
    k = removal_count(n, fraction)
    if k == 0 or n == 0:
        return np.arange(n)
    center = int(make_rng(seed).integers(n))
    d2 = np.sum((pts - pts[center]) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    keep = np.ones(n, dtype=bool)
    keep[order[:k]] = False
    return np.flatnonzero(keep)


def crop_random(cloud: PointCloud, fraction: float, seed: int) -> PointCloud:
    return cloud.valid().subset(crop_random_indices(cloud, fraction, seed))


def crop_center_region(cloud: PointCloud, fraction: float, seed: int) -> PointCloud:
    return cloud.valid().subset(crop_center_indices(cloud, fraction, seed))


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int) -> PointCloud:
    """Add i.i.d. N(0, sigma^2 I) offsets to every non-hole position."""
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0 or cloud.n_valid == 0:
        return cloud
    pos = cloud.positions.copy()
    valid = ~cloud.is_hole
    pos[valid] += make_rng(seed).normal(0.0, sigma, size=(int(valid.sum()), 3))
    return PointCloud(pos, cloud.normals, cloud.is_hole)


def corrupt(cloud: PointCloud, spec: CorruptionSpec, return_indices: bool = False):
    """Crop then add noise, with independent sub-seeds for the two stages.

    With ``return_indices`` also returns the survivors' indices into the
    non-hole points of ``cloud``.
    """
    crop_seed = derive_seed(spec.seed, "crop")
    if spec.strategy is Strategy.RANDOM:
        keep = crop_random_indices(cloud, spec.crop_fraction, crop_seed)
    else:
        keep = crop_center_indices(cloud, spec.crop_fraction, crop_seed)
    out = add_gaussian_noise(cloud.valid().subset(keep), spec.sigma, derive_seed(spec.seed, "noise"))
    if return_indices:
        return out, keep
    return out
