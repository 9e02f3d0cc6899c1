"""Single-threaded vectorized reference renderer.

This is the independent check that every parallel render pass is measured
against: a plain numpy fold with no lane groups, no atomics and no worker
pool.  Float expressions are written with the exact association order of the
scalar projection in :mod:`pointraster.core` so that results are comparable
bit for bit.
"""

from __future__ import annotations

import numpy as np

from .core import CLEAR64, CULL_EPSILON, CameraView, PointCloud


def project_all(cloud: PointCloud, view: CameraView):
    """Project every point with the canonical pixel mapping.

    Returns ``(indices, pixel_ids, packed_words, depths)`` restricted to the
    points that survive culling, in input order.
    """
    m = view.wvp
    x = cloud.x.astype(np.float64)
    y = cloud.y.astype(np.float64)
    z = cloud.z.astype(np.float64)

    w = x * m[3, 0] + y * m[3, 1] + z * m[3, 2] + m[3, 3]
    cx = x * m[0, 0] + y * m[0, 1] + z * m[0, 2] + m[0, 3]
    cy = x * m[1, 0] + y * m[1, 1] + z * m[1, 2] + m[1, 3]

    keep = w > CULL_EPSILON
    with np.errstate(divide="ignore", invalid="ignore"):
        nx = cx / w
        ny = cy / w
    keep &= (nx >= -1.0) & (nx < 1.0) & (ny >= -1.0) & (ny < 1.0)
    idx = np.nonzero(keep)[0]

    nx = nx[idx]
    ny = ny[idx]
    w = w[idx]
    px = np.floor((nx * 0.5 + 0.5) * view.width).astype(np.int64)
    py = np.floor((ny * 0.5 + 0.5) * view.height).astype(np.int64)
    # same right-edge guard as the scalar mapping
    np.minimum(px, view.width - 1, out=px)
    np.minimum(py, view.height - 1, out=py)
    pids = px + py * view.width

    bits = w.astype(np.float32).view(np.uint32).astype(np.uint64)
    rgb = (cloud.r[idx].astype(np.uint64) << np.uint64(16)) \
        | (cloud.g[idx].astype(np.uint64) << np.uint64(8)) \
        | cloud.b[idx].astype(np.uint64)
    packed = (bits << np.uint64(24)) | rgb
    return idx, pids, packed, w


def reference_framebuffer(cloud: PointCloud, view: CameraView) -> np.ndarray:
    """Sequential per-pixel fold ``min(clear, packed points)``."""
    fb = np.full(view.pixel_count, CLEAR64, dtype=np.uint64)
    _, pids, packed, _ = project_all(cloud, view)
    np.minimum.at(fb, pids, packed)
    return fb


def reference_depth_bits(cloud: PointCloud, view: CameraView) -> np.ndarray:
    """Per-pixel minimum float32 depth bits (clear value 2^32 - 1)."""
    db = np.full(view.pixel_count, 0xFFFFFFFF, dtype=np.uint32)
    _, pids, _, w = project_all(cloud, view)
    np.minimum.at(db, pids, w.astype(np.float32).view(np.uint32))
    return db


def reference_hqs_sums(cloud: PointCloud, view: CameraView,
                       depth_bits: np.ndarray, epsilon_factor: float):
    """Exact per-pixel color sums and counts of the epsilon-range blend.

    A point is accepted when its float32-rounded depth is within
    ``closest * epsilon_factor``; returns int64 arrays (sum_r, sum_g, sum_b,
    count) over all pixels.
    """
    idx, pids, _, w = project_all(cloud, view)
    d32 = w.astype(np.float32).astype(np.float64)
    closest = depth_bits[pids].view(np.float32).astype(np.float64)
    accept = d32 <= closest * float(epsilon_factor)

    idx = idx[accept]
    pids = pids[accept]
    npix = view.pixel_count
    sum_r = np.zeros(npix, dtype=np.int64)
    sum_g = np.zeros(npix, dtype=np.int64)
    sum_b = np.zeros(npix, dtype=np.int64)
    count = np.zeros(npix, dtype=np.int64)
    np.add.at(sum_r, pids, cloud.r[idx].astype(np.int64))
    np.add.at(sum_g, pids, cloud.g[idx].astype(np.int64))
    np.add.at(sum_b, pids, cloud.b[idx].astype(np.int64))
    np.add.at(count, pids, 1)
    return sum_r, sum_g, sum_b, count


def reference_hqs_image(cloud: PointCloud, view: CameraView,
                        epsilon_factor: float, background=(0, 0, 0)) -> np.ndarray:
    """Resolved epsilon-range blend image computed entirely in numpy."""
    db = reference_depth_bits(cloud, view)
    sum_r, sum_g, sum_b, count = reference_hqs_sums(cloud, view, db, epsilon_factor)
    img = np.empty((view.pixel_count, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    hit = count > 0
    n = count[hit]
    img[hit, 0] = (sum_r[hit] // n).astype(np.uint8)
    img[hit, 1] = (sum_g[hit] // n).astype(np.uint8)
    img[hit, 2] = (sum_b[hit] // n).astype(np.uint8)
    return img.reshape(view.height, view.width, 3)
