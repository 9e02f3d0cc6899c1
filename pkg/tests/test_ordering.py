"""Morton codes, quantization, deterministic shuffles and batch shuffling."""

import numpy as np
import pytest

from pointraster.core import PointCloud
from pointraster.io import SceneSpec, generate_scene
from pointraster.ordering import (
    GRID_SIZE,
    OrderingSpec,
    apply_permutation,
    morton_decode21,
    morton_decode_array,
    morton_encode21,
    morton_encode_array,
    quantize_to_grid,
    shuffle,
    shuffle_morton,
    sort_morton,
)

from helpers import morton_oracle, octree_dfs_order, xoshiro_fisher_yates_oracle


def _grid_cloud(coords, extent=1.0, k=None):
    """Cloud with one point per integer grid cell center, in given order."""
    coords = np.asarray(coords, dtype=np.float64)
    k = k or int(coords.max()) + 1
    pos = (coords + 0.5) / k * extent
    colors = np.zeros((len(coords), 3), dtype=np.uint8)
    return PointCloud.from_arrays(pos.astype(np.float32), colors)


class TestMortonCode:
    def test_spec_corner_values(self):
        assert morton_encode21(0, 0, 0) == 0
        assert morton_encode21(1, 1, 1) == 7
        top = GRID_SIZE - 1
        assert morton_encode21(top, top, top) == 2**63 - 1  # all 63 bits set
        assert morton_oracle(top, top, top) == 2**63 - 1

    def test_matches_loop_interleave_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            ix, iy, iz = (int(v) for v in rng.integers(0, GRID_SIZE, 3))
            assert morton_encode21(ix, iy, iz) == morton_oracle(ix, iy, iz)

    def test_roundtrip_scalar_and_vectorized(self):
        rng = np.random.default_rng(2)
        grid = rng.integers(0, GRID_SIZE, (100_000, 3)).astype(np.uint64)
        codes = morton_encode_array(grid)
        back = morton_decode_array(codes)
        assert np.array_equal(back.astype(np.uint64), grid)
        for ix, iy, iz in grid[:50].tolist():
            assert morton_decode21(morton_encode21(ix, iy, iz)) == (ix, iy, iz)

    def test_monotone_per_axis(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            ix, iy, iz = (int(v) for v in rng.integers(0, GRID_SIZE - 1, 3))
            base = morton_encode21(ix, iy, iz)
            assert morton_encode21(ix + 1, iy, iz) > base
            assert morton_encode21(ix, iy + 1, iz) > base
            assert morton_encode21(ix, iy, iz + 1) > base

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError):
            morton_encode21(GRID_SIZE, 0, 0)
        with pytest.raises(ValueError):
            morton_encode21(-1, 0, 0)
        with pytest.raises(ValueError):
            morton_decode21(1 << 63)


class TestQuantize:
    def test_single_point_maps_to_origin_cell(self):
        cloud = PointCloud.from_arrays([[3.5, -1.0, 2.25]], [[1, 2, 3]])
        assert (quantize_to_grid(cloud) == 0).all()

    def test_unit_cube_corners_and_center(self):
        cloud = PointCloud.from_arrays(
            [[0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5]],
            np.zeros((3, 3)))
        grid = quantize_to_grid(cloud)
        assert (grid[0] == 0).all()
        assert (grid[1] == GRID_SIZE - 1).all()  # clamped top cell
        assert (grid[2] == 1 << 20).all()  # exact floor of the midpoint

    def test_cells_are_cubic_across_unequal_extents(self):
        # max extent 4 on x; a y offset of 1 must land 2^19 cells up
        cloud = PointCloud.from_arrays(
            [[0, 0, 0], [4, 1, 0]], np.zeros((2, 3)))
        grid = quantize_to_grid(cloud)
        assert grid[1, 0] == GRID_SIZE - 1
        assert grid[1, 1] == 1 << 19

    def test_non_finite_coordinates_raise(self):
        cloud = PointCloud.from_arrays([[np.nan, 0, 0], [1, 1, 1]],
                                       np.zeros((2, 3)))
        with pytest.raises(ValueError, match="finite"):
            quantize_to_grid(cloud)

    def test_empty_cloud_raises(self):
        cloud = PointCloud.from_arrays(np.empty((0, 3)), np.empty((0, 3)))
        with pytest.raises(ValueError):
            quantize_to_grid(cloud)


class TestSortMorton:
    def test_already_sorted_gives_identity(self):
        cloud = _grid_cloud([(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 1)], k=2)
        order = sort_morton(cloud)
        codes = morton_encode_array(quantize_to_grid(cloud).astype(np.uint64))
        assert (np.diff(codes[order].astype(np.int64)) >= 0).all()
        resorted = sort_morton(cloud.take(order))
        assert np.array_equal(resorted, np.arange(cloud.count))

    def test_matches_octree_dfs_on_2x2x2_grid(self):
        coords = [(x, y, z) for z in range(2) for y in range(2) for x in range(2)]
        rng = np.random.default_rng(9)
        scrambled = [coords[i] for i in rng.permutation(8)]
        cloud = _grid_cloud(scrambled, k=2)
        expected = octree_dfs_order(scrambled, bits=1)
        assert sort_morton(cloud).tolist() == expected

    def test_coincident_points_keep_input_order(self):
        cloud = PointCloud.from_arrays(np.ones((5, 3)), np.zeros((5, 3)))
        assert sort_morton(cloud).tolist() == [0, 1, 2, 3, 4]


class TestShuffle:
    def test_edge_counts(self):
        assert shuffle(0, 1).tolist() == []
        assert shuffle(1, 1).tolist() == [0]

    def test_golden_value_from_specified_prng(self):
        # frozen from the pure-python splitmix64+xoshiro256** oracle
        expected = xoshiro_fisher_yates_oracle(10, 42)
        assert expected == [7, 3, 8, 9, 5, 6, 4, 1, 0, 2]
        assert shuffle(10, 42).tolist() == expected

    def test_matches_oracle_for_various_sizes(self):
        for n, seed in [(2, 0), (17, 123), (100, 2**63), (257, 7)]:
            assert shuffle(n, seed).tolist() == \
                xoshiro_fisher_yates_oracle(n, seed)

    def test_reproducible_and_permutation(self):
        a = shuffle(1000, 5)
        b = shuffle(1000, 5)
        assert np.array_equal(a, b)
        assert np.array_equal(np.sort(a), np.arange(1000))
        assert not np.array_equal(a, shuffle(1000, 6))


class TestShuffleMorton:
    def _batches_of(self, cloud, batch_size):
        perm = sort_morton(cloud)
        return [tuple(perm[i:i + batch_size])
                for i in range(0, len(perm), batch_size)]

    def test_300_points_make_three_intact_batches(self):
        cloud = generate_scene(SceneSpec("uniform_cube", 300, seed=4))
        result = shuffle_morton(cloud, seed=11, batch_size=128)
        batches = self._batches_of(cloud, 128)
        assert sorted(len(b) for b in batches) == [44, 128, 128]
        # output must be a concatenation of whole batches
        remaining = list(result)
        seen = []
        while remaining:
            for batch in batches:
                if tuple(remaining[:len(batch)]) == batch:
                    seen.append(batch)
                    remaining = remaining[len(batch):]
                    break
            else:
                pytest.fail("output is not a concatenation of intact batches")
        assert sorted(map(len, seen)) == [44, 128, 128]

    def test_small_cloud_equals_plain_morton(self):
        cloud = generate_scene(SceneSpec("uniform_cube", 100, seed=4))
        assert np.array_equal(shuffle_morton(cloud, seed=3, batch_size=128),
                              sort_morton(cloud))

    @pytest.mark.parametrize("n", [1, 127, 128, 129, 300])
    def test_always_a_permutation(self, n):
        cloud = generate_scene(SceneSpec("uniform_cube", n, seed=n))
        result = shuffle_morton(cloud, seed=1)
        assert np.array_equal(np.sort(result), np.arange(n))

    def test_within_batch_codes_non_decreasing(self):
        cloud = generate_scene(SceneSpec("uniform_cube", 1000, seed=5))
        result = shuffle_morton(cloud, seed=2, batch_size=128)
        codes = morton_encode_array(quantize_to_grid(cloud).astype(np.uint64))
        batches = self._batches_of(cloud, 128)
        pos = 0
        for batch in sorted(batches, key=lambda b: result.tolist().index(b[0])):
            segment = codes[np.array(batch)]
            assert (np.diff(segment.astype(np.int64)) >= 0).all()
            pos += len(batch)
        assert pos == 1000


class TestApplyPermutation:
    def test_identity_and_involution(self):
        cloud = generate_scene(SceneSpec("sphere_surface", 50, seed=1))
        same = apply_permutation(cloud, np.arange(50))
        assert np.array_equal(same.x, cloud.x)
        rev = np.arange(49, -1, -1)
        twice = apply_permutation(apply_permutation(cloud, rev), rev)
        assert np.array_equal(twice.x, cloud.x)
        assert np.array_equal(twice.b, cloud.b)

    def test_multiset_of_records_preserved(self):
        cloud = generate_scene(SceneSpec("uniform_cube", 200, seed=2))
        perm = shuffle(200, 9)
        out = apply_permutation(cloud, perm)

        def key(c):
            return sorted(zip(c.x.tolist(), c.y.tolist(), c.z.tolist(),
                              c.r.tolist(), c.g.tolist(), c.b.tolist()))

        assert key(out) == key(cloud)
        assert np.array_equal(out.aabb_min, cloud.aabb_min)

    @pytest.mark.parametrize("perm", [[0, 0, 2], [0, 1], [0, 1, 3]])
    def test_non_permutations_raise(self, perm):
        cloud = generate_scene(SceneSpec("uniform_cube", 3, seed=0))
        with pytest.raises(ValueError):
            apply_permutation(cloud, np.array(perm))


class TestOrderingSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            OrderingSpec(kind="sorted_by_vibes")

    def test_bad_batch_size_rejected(self):
        with pytest.raises(ValueError):
            OrderingSpec(kind="shuffled_morton", batch_size=0)

    def test_labels_carry_seeds_only_when_seeded(self):
        assert OrderingSpec("morton").label() == "morton"
        assert OrderingSpec("shuffled", seed=9).label() == "shuffled[seed=9]"
