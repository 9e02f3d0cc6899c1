"""Vertex-order transformations: Morton sort, shuffle, shuffled-Morton batches.

Points are quantized onto a 21-bit grid of cubic cells spanning the cloud's
bounding box, encoded by bit interleaving (x in the least significant slot),
and stably sorted; that order equals a depth-first octree traversal.  The
shuffled orders use a splitmix64-seeded xoshiro256** generator with a
Fisher-Yates pass so permutations are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import PointCloud

GRID_BITS = 21
GRID_SIZE = 1 << GRID_BITS  # cells per axis

ORDERING_KINDS = ("original", "morton", "shuffled", "shuffled_morton")

_U = np.uint64

# splitmix64 / xoshiro256** constants, hoisted so the jitted shuffle can
# reference them as uint64 globals
_SM_GAMMA = _U(0x9E3779B97F4A7C15)
_SM_MIX1 = _U(0xBF58476D1CE4E5B9)
_SM_MIX2 = _U(0x94D049BB133111EB)


@dataclass(frozen=True)
class OrderingSpec:
    """Named vertex order plus the parameters that make it reproducible."""

    kind: str = "original"
    seed: int = 0
    batch_size: int = 128

    def __post_init__(self):
        if self.kind not in ORDERING_KINDS:
            raise ValueError(f"unknown ordering {self.kind!r}, "
                             f"expected one of {ORDERING_KINDS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def label(self) -> str:
        if self.kind in ("shuffled", "shuffled_morton"):
            return f"{self.kind}[seed={self.seed}]"
        return self.kind


def _spread21(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & _U(0x1FFFFF)
    v = (v | (v << _U(32))) & _U(0x1F00000000FFFF)
    v = (v | (v << _U(16))) & _U(0x1F0000FF0000FF)
    v = (v | (v << _U(8))) & _U(0x100F00F00F00F00F)
    v = (v | (v << _U(4))) & _U(0x10C30C30C30C30C3)
    v = (v | (v << _U(2))) & _U(0x1249249249249249)
    return v


def _compact21(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & _U(0x1249249249249249)
    v = (v ^ (v >> _U(2))) & _U(0x10C30C30C30C30C3)
    v = (v ^ (v >> _U(4))) & _U(0x100F00F00F00F00F)
    v = (v ^ (v >> _U(8))) & _U(0x1F0000FF0000FF)
    v = (v ^ (v >> _U(16))) & _U(0x1F00000000FFFF)
    v = (v ^ (v >> _U(32))) & _U(0x1FFFFF)
    return v


def morton_encode21(ix: int, iy: int, iz: int) -> int:
    """Interleave three 21-bit coordinates (bit i of x lands at bit 3i)."""
    for name, v in (("ix", ix), ("iy", iy), ("iz", iz)):
        if not 0 <= v < GRID_SIZE:
            raise ValueError(f"{name}={v} is outside [0, 2^21)")
    arr = np.array([ix, iy, iz], dtype=np.uint64)
    sx, sy, sz = _spread21(arr)
    return int(sx | (sy << _U(1)) | (sz << _U(2)))


def morton_decode21(code: int):
    """Inverse of :func:`morton_encode21`."""
    if not 0 <= code < (1 << 63):
        raise ValueError(f"code={code} is outside [0, 2^63)")
    c = np.array([code, code >> 1, code >> 2], dtype=np.uint64)
    ix, iy, iz = _compact21(c)
    return int(ix), int(iy), int(iz)


def morton_encode_array(grid: np.ndarray) -> np.ndarray:
    """Vectorized interleave of an (n, 3) array of 21-bit coordinates."""
    return _spread21(grid[:, 0]) | (_spread21(grid[:, 1]) << _U(1)) \
        | (_spread21(grid[:, 2]) << _U(2))


def morton_decode_array(codes: np.ndarray) -> np.ndarray:
    """Vectorized inverse of :func:`morton_encode_array`; returns (n, 3)."""
    codes = codes.astype(np.uint64)
    return np.stack([
        _compact21(codes),
        _compact21(codes >> _U(1)),
        _compact21(codes >> _U(2)),
    ], axis=1).astype(np.uint32)


def quantize_to_grid(cloud: PointCloud) -> np.ndarray:
    """Map positions onto the 21-bit grid; returns an (n, 3) uint32 array.

    Cells are cubic (side = largest AABB extent / 2^21) so the resulting
    Morton order matches an octree traversal; degenerate extents map to 0.
    """
    if cloud.count == 0:
        raise ValueError("cannot quantize an empty cloud")
    pos = (cloud.x, cloud.y, cloud.z)
    for axis in pos:
        if not np.isfinite(axis).all():
            raise ValueError("cloud contains non-finite coordinates")
    extent = float((cloud.aabb_max - cloud.aabb_min).max())
    out = np.zeros((cloud.count, 3), dtype=np.uint32)
    if extent <= 0.0:
        return out
    cell = extent / GRID_SIZE
    for k, axis in enumerate(pos):
        q = np.floor((axis.astype(np.float64) - cloud.aabb_min[k]) / cell)
        np.clip(q, 0, GRID_SIZE - 1, out=q)
        out[:, k] = q.astype(np.uint32)
    return out


def sort_morton(cloud: PointCloud) -> np.ndarray:
    """Indices that stably sort the cloud by Morton code."""
    codes = morton_encode_array(quantize_to_grid(cloud))
    return np.argsort(codes, kind="stable").astype(np.int64)


@njit(cache=True)
def _fisher_yates(n, seed):
    # xoshiro256** seeded from four successive splitmix64 outputs
    s0 = _U(0)
    s1 = _U(0)
    s2 = _U(0)
    s3 = _U(0)
    z = _U(seed)
    for k in range(4):
        z = z + _SM_GAMMA
        t = z
        t = (t ^ (t >> _U(30))) * _SM_MIX1
        t = (t ^ (t >> _U(27))) * _SM_MIX2
        t = t ^ (t >> _U(31))
        if k == 0:
            s0 = t
        elif k == 1:
            s1 = t
        elif k == 2:
            s2 = t
        else:
            s3 = t

    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        r = s1 * _U(5)
        r = ((r << _U(7)) | (r >> _U(57))) * _U(9)
        t = s1 << _U(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << _U(45)) | (s3 >> _U(19))
        j = np.int64(r % _U(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm


def shuffle(count: int, seed: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of ``range(count)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return _fisher_yates(count, np.uint64(seed & 0xFFFFFFFFFFFFFFFF))


def shuffle_morton(cloud: PointCloud, seed: int, batch_size: int = 128) -> np.ndarray:
    """Morton order cut into fixed-size batches whose order is shuffled.

    Batch interiors keep their Morton order; only whole batches move.  The
    tail batch may be short and travels as a unit like any other.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = sort_morton(cloud)
    n = len(perm)
    n_batches = math.ceil(n / batch_size)
    order = shuffle(n_batches, seed)
    parts = [perm[b * batch_size:(b + 1) * batch_size] for b in order]
    return np.concatenate(parts) if parts else perm


def apply_permutation(cloud: PointCloud, perm) -> PointCloud:
    """Reorder positions and colors in lockstep; the AABB is unchanged."""
    perm = np.asarray(perm, dtype=np.int64)
    n = cloud.count
    if len(perm) != n or (n > 0 and (
            perm.min() < 0 or perm.max() >= n
            or not (np.bincount(perm, minlength=n) == 1).all())):
        raise ValueError("perm is not a permutation of range(count)")
    return cloud.take(perm)


def ordering_permutation(cloud: PointCloud, spec: OrderingSpec) -> np.ndarray:
    """Permutation realizing ``spec`` for ``cloud``."""
    if spec.kind == "original":
        return np.arange(cloud.count, dtype=np.int64)
    if cloud.count == 0:
        return np.empty(0, dtype=np.int64)
    if spec.kind == "morton":
        return sort_morton(cloud)
    if spec.kind == "shuffled":
        return shuffle(cloud.count, spec.seed)
    return shuffle_morton(cloud, spec.seed, spec.batch_size)


def apply_ordering(cloud: PointCloud, spec: OrderingSpec) -> PointCloud:
    if spec.kind == "original":
        return cloud
    return apply_permutation(cloud, ordering_permutation(cloud, spec))
