"""Shared test utilities: independent oracles and scene constructors.

The oracles here are deliberately written from scratch (pure python, loops,
struct) so they share no code with the package paths they check.
"""

from __future__ import annotations

import struct

import numpy as np

from pointraster.core import CameraView, PointCloud

M64 = (1 << 64) - 1


# ------------------------------------------------------------- bit oracles

def f32_bits_oracle(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def f32_value_oracle(bits: int) -> float:
    return struct.unpack("<f", struct.pack("<I", bits))[0]


def encode_oracle(depth: float, rgb: int) -> int:
    """Big-integer shift/or composition of the packed point word."""
    return (f32_bits_oracle(depth) << 24) | rgb


def morton_oracle(ix: int, iy: int, iz: int) -> int:
    """Loop-based bit interleave: bit i of x at 3i, y at 3i+1, z at 3i+2."""
    code = 0
    for bit in range(21):
        code |= ((ix >> bit) & 1) << (3 * bit)
        code |= ((iy >> bit) & 1) << (3 * bit + 1)
        code |= ((iz >> bit) & 1) << (3 * bit + 2)
    return code


# ----------------------------------------------------------- PRNG oracle

def xoshiro_fisher_yates_oracle(n: int, seed: int) -> list[int]:
    """Pure-python splitmix64-seeded xoshiro256** Fisher-Yates shuffle."""
    state = seed & M64
    s = []
    for _ in range(4):
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        s.append(z ^ (z >> 31))

    def rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & M64

    def next_value() -> int:
        result = (rotl((s[1] * 5) & M64, 7) * 9) & M64
        t = (s[1] << 17) & M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next_value() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


# ---------------------------------------------------------- octree oracle

def octree_dfs_order(coords, bits: int) -> list[int]:
    """Depth-first octree traversal order of integer grid coordinates.

    Children are visited in (z, y, x)-major order, matching a Morton code
    with x in the least significant interleave slot.  Ties (points in one
    leaf cell) keep their input order.
    """
    order: list[int] = []

    def visit(indices, level):
        if not indices:
            return
        if level < 0:
            order.extend(indices)
            return
        buckets = [[] for _ in range(8)]
        for idx in indices:
            x, y, z = coords[idx]
            child = (((z >> level) & 1) << 2) | (((y >> level) & 1) << 1) \
                | ((x >> level) & 1)
            buckets[child].append(idx)
        for bucket in buckets:
            visit(bucket, level - 1)

    visit(list(range(len(coords))), bits - 1)
    return order


# ------------------------------------------------------ scene construction

def direct_view(width: int, height: int) -> CameraView:
    """A view whose clip space is trivial: w = z, ndc = (x/z, y/z).

    Lets tests place points at exact pixels/depths: a point aimed at NDC
    (u, v) with depth d sits at position (u*d, v*d, d).
    """
    wvp = np.zeros((4, 4))
    wvp[0, 0] = 1.0
    wvp[1, 1] = 1.0
    wvp[3, 2] = 1.0
    return CameraView(wvp=wvp, width=width, height=height)


def pixel_center_ndc(px: int, py: int, width: int, height: int):
    """Exact binary-fraction NDC of a pixel center (use power-of-two sizes)."""
    return (2 * px + 1) / width - 1.0, (2 * py + 1) / height - 1.0


def cloud_at_pixels(pixels, depths, colors, width: int, height: int) -> PointCloud:
    """Cloud whose i-th point lands exactly at pixels[i] with depths[i].

    Meant for the direct view; depths should be small binary fractions so
    the float32 roundtrip of positions is exact.
    """
    positions = []
    for (px, py), d in zip(pixels, depths):
        u, v = pixel_center_ndc(px, py, width, height)
        positions.append((u * d, v * d, d))
    return PointCloud.from_arrays(np.array(positions, dtype=np.float32),
                                  np.array(colors, dtype=np.uint8))


def fold_min_oracle(pids, packed, npix: int) -> list[int]:
    """Sequential dictionary fold of min(packed) per pixel (python ints)."""
    fb = [M64] * npix
    for pid, value in zip(pids, packed):
        if value < fb[pid]:
            fb[pid] = value
    return fb


def random_camera(seed: int, width: int, height: int) -> CameraView:
    """Randomized orbit camera around the unit-ish cube scenes."""
    from pointraster.core import build_camera

    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi)
    phi = rng.uniform(-0.9, 0.9)
    radius = rng.uniform(1.8, 3.2)
    eye = (radius * np.cos(phi) * np.cos(theta),
           radius * np.sin(phi),
           radius * np.cos(phi) * np.sin(theta))
    fovy = rng.uniform(0.7, 1.5)
    return build_camera(eye, (0.0, 0.0, 0.0), (0.0, 1.0, 0.0), fovy,
                        width, height, 0.05, 50.0)
