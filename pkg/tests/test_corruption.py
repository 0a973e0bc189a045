import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcatlas.corruption import (CorruptionSpec, Strategy, add_gaussian_noise, corrupt, crop_center_indices,
                                crop_center_region, crop_random, crop_random_indices, removal_count)
from pcatlas.geometry import PointCloud, pad_with_holes
from pcatlas.seeding import make_rng
from pcatlas.shapes import sample_sphere


def _cloud(points):
    points = np.asarray(points, dtype=float)
    return PointCloud(points, np.tile([1.0, 0.0, 0.0], (len(points), 1)))


def _rows(cloud):
    return {tuple(r) for r in np.hstack([cloud.positions, cloud.normals])}


def test_removal_count_rounds_up():
    assert removal_count(16384, 0.2) == 3277
    assert removal_count(1000, 0.2) == 200
    assert removal_count(15, 0.2) == 3  # 0.2 * 15 is 3.0000000000000004 in binary
    assert removal_count(7, 0.2) == 2
    assert removal_count(10, 0.0) == 0


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
def test_removal_count_rejects_bad_fraction(bad):
    with pytest.raises(ValueError):
        removal_count(10, bad)


def test_crop_random_16384():
    cloud = sample_sphere(16384, 1)
    out = crop_random(cloud, 0.2, seed=3)
    assert len(out) == 13107


def test_crop_random_identity_at_zero():
    cloud = sample_sphere(100, 1)
    assert crop_random(cloud, 0.0, seed=3).same_as(cloud)


def test_crop_random_deterministic():
    cloud = sample_sphere(100, 1)
    a = crop_random_indices(cloud, 0.3, seed=9)
    b = crop_random_indices(cloud, 0.3, seed=9)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, crop_random_indices(cloud, 0.3, seed=10))


def test_crop_random_is_roughly_uniform():
    cloud = sample_sphere(20, 1)
    hits = np.zeros(20)
    for s in range(2000):
        keep = crop_random_indices(cloud, 0.5, seed=s)
        hits[keep] += 1
    # Each point survives with probability 1/2; 5 sigma band.
    assert np.all(np.abs(hits / 2000 - 0.5) < 5 * math.sqrt(0.25 / 2000))


def test_crop_center_removes_one_cluster():
    rng = make_rng(0)
    a = rng.normal(scale=0.05, size=(50, 3)) + [-0.5, 0, 0]
    b = rng.normal(scale=0.05, size=(50, 3)) + [0.5, 0, 0]
    cloud = _cloud(np.vstack([a, b]))
    for seed in range(20):
        center = int(make_rng(seed).integers(100))
        keep = crop_center_indices(cloud, 0.2, seed)
        removed = np.setdiff1d(np.arange(100), keep)
        assert len(removed) == 20
        in_a = removed < 50
        assert in_a.all() if center < 50 else (~in_a).all()


def test_crop_center_identity_at_zero():
    cloud = sample_sphere(60, 4)
    assert crop_center_region(cloud, 0.0, seed=1).same_as(cloud)


def test_crop_center_single_survivor_is_farthest():
    cloud = sample_sphere(10, 4)
    # ceil(0.9 * 10) = 9 removed.
    keep = crop_center_indices(cloud, 0.9, seed=6)
    assert len(keep) == 1
    center = int(make_rng(6).integers(10))
    d = np.linalg.norm(cloud.positions - cloud.positions[center], axis=1)
    assert keep[0] == int(np.argmax(d))


def test_crop_center_ties_by_lowest_index():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
    cloud = _cloud(pts)
    center = int(make_rng(2).integers(5))
    keep = crop_center_indices(cloud, 0.4, seed=2)
    removed = np.setdiff1d(np.arange(5), keep)
    d = np.linalg.norm(pts - pts[center], axis=1)
    expected = sorted(range(5), key=lambda i: (d[i], i))[:2]
    np.testing.assert_array_equal(removed, sorted(expected))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=1, max_value=300),
    st.floats(min_value=0.0, max_value=0.99),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_crop_counts_and_ball_property(n, fraction, seed):
    cloud = _cloud(make_rng(seed).uniform(-0.5, 0.5, (n, 3)))
    k = math.ceil(fraction * n - 1e-9)
    assert len(crop_random_indices(cloud, fraction, seed)) == n - k
    keep = crop_center_indices(cloud, fraction, seed)
    assert len(keep) == n - k
    if 0 < k < n:
        center = int(make_rng(seed).integers(n))
        d = np.linalg.norm(cloud.positions - cloud.positions[center], axis=1)
        removed = np.setdiff1d(np.arange(n), keep)
        assert d[removed].max() <= d[keep].min()


def test_noise_identity_at_zero_sigma():
    cloud = sample_sphere(100, 2)
    assert add_gaussian_noise(cloud, 0.0, seed=1).same_as(cloud)


def test_noise_statistics():
    cloud = sample_sphere(100_000, 2)
    out = add_gaussian_noise(cloud, 0.01, seed=5)
    off = out.positions - cloud.positions
    std = off.std(axis=0, ddof=1)
    assert np.all(np.abs(std - 0.01) < 0.03 * 0.01)
    assert np.all(np.abs(off.mean(axis=0)) < 5 * 0.01 / math.sqrt(100_000))


def test_noise_leaves_normals_alone():
    cloud = sample_sphere(500, 2)
    out = add_gaussian_noise(cloud, 0.05, seed=5)
    np.testing.assert_array_equal(out.normals, cloud.normals)
    assert not np.array_equal(out.positions, cloud.positions)


def test_noise_skips_holes():
    cloud = pad_with_holes(sample_sphere(5, 1), 8)
    out = add_gaussian_noise(cloud, 0.1, seed=3)
    assert np.all(out.positions[5:] == 0)
    assert out.n_valid == 5


def test_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        add_gaussian_noise(sample_sphere(5, 1), -1.0, seed=0)


def test_corrupt_random_without_noise():
    cloud = sample_sphere(1000, 3)
    out, keep = corrupt(cloud, CorruptionSpec(Strategy.RANDOM, 0.2, 0.0, seed=0), return_indices=True)
    assert len(out) == 800
    np.testing.assert_array_equal(out.positions, cloud.positions[keep])
    assert _rows(out) <= _rows(cloud)


def test_corrupt_center_with_noise():
    cloud = sample_sphere(1000, 3)
    out = corrupt(cloud, CorruptionSpec(Strategy.CENTER, 0.2, 0.005, seed=0))
    assert len(out) == 800
    original = {tuple(p) for p in cloud.positions}
    assert not any(tuple(p) in original for p in out.positions)


def test_corrupt_deterministic():
    cloud = sample_sphere(300, 3)
    spec = CorruptionSpec(Strategy.CENTER, 0.2, 0.01, seed=42)
    assert corrupt(cloud, spec).same_as(corrupt(cloud, spec))


def test_corrupt_sigma_zero_equals_crop_alone():
    from pcatlas.seeding import derive_seed

    cloud = sample_sphere(300, 3)
    for strategy, crop in ((Strategy.RANDOM, crop_random), (Strategy.CENTER, crop_center_region)):
        out = corrupt(cloud, CorruptionSpec(strategy, 0.2, 0.0, seed=11))
        assert out.same_as(crop(cloud, 0.2, derive_seed(11, "crop")))


def test_spec_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        CorruptionSpec(crop_fraction=1.0)
    with pytest.raises(ValueError):
        CorruptionSpec(sigma=-0.1)
    with pytest.raises(ValueError):
        CorruptionSpec(strategy="lidar")
    spec = CorruptionSpec("center", 0.25, 0.01, 7)
    assert spec.strategy is Strategy.CENTER
    d = spec.to_dict()
    assert d == {"strategy": "center", "crop_fraction": 0.25, "sigma": 0.01, "seed": 7}
    assert CorruptionSpec.from_dict(d) == spec
