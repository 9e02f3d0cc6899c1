"""Closest-point render passes over a shared packed framebuffer.

GPU warps are modeled as contiguous 32-index lane groups.  Every group is
executed by exactly one worker thread as a unit, so intra-group reductions
(all-equal, clustered pairs, full per-pixel deduplication) see a consistent
snapshot of their own lanes, while all cross-worker coordination goes through
lock-free atomics on the framebuffer.  All methods except ``just_set`` leave
the framebuffer bit-identical to the sequential reference fold regardless of
worker count or input order; only the op counters of the gated methods are
schedule dependent.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .atomics import (
    atomic_cas_u32,
    atomic_load_u64,
    atomic_min_u64,
    atomic_store_release_u32,
    atomic_store_u64,
    f32_bits,
    sched_yield,
)
from .core import (
    CLEAR64,
    CULL_EPSILON,
    AtomicOpCounters,
    CameraView,
    PackedFramebuffer64,
    PointCloud,
)
from .reference import project_all

LANES = 32  # lanes per emulated warp

_U = np.uint64
_SH_DEPTH = _U(24)
_SH_R = _U(16)
_SH_G = _U(8)


class RenderMethod(str, Enum):
    JUST_SET = "just_set"
    BUSY_LOOP = "busy_loop"
    ATOMIC_MIN = "atomic_min"
    EARLY_Z = "early_z"
    REDUCE = "reduce"
    REDUCE_EARLY_Z = "reduce_early_z"
    DEDUP = "dedup"


METHOD_NAMES = tuple(m.value for m in RenderMethod)


def default_workers() -> int:
    env = os.environ.get("POINTRASTER_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@njit
def _project_lane(xs, ys, zs, i, m, width, height):
    # must mirror core.project_to_pixel / reference.project_all bit for bit
    x = np.float64(xs[i])
    y = np.float64(ys[i])
    z = np.float64(zs[i])
    w = x * m[3, 0] + y * m[3, 1] + z * m[3, 2] + m[3, 3]
    if not (w > CULL_EPSILON):
        return False, np.int64(0), 0.0
    cx = x * m[0, 0] + y * m[0, 1] + z * m[0, 2] + m[0, 3]
    cy = x * m[1, 0] + y * m[1, 1] + z * m[1, 2] + m[1, 3]
    nx = cx / w
    ny = cy / w
    if not (nx >= -1.0 and nx < 1.0 and ny >= -1.0 and ny < 1.0):
        return False, np.int64(0), 0.0
    px = np.int64(math.floor((nx * 0.5 + 0.5) * width))
    py = np.int64(math.floor((ny * 0.5 + 0.5) * height))
    if px > width - 1:
        px = width - 1
    if py > height - 1:
        py = height - 1
    return True, px + py * width, w


@njit
def _project_group(xs, ys, zs, rs, gs, bs, base, cnt, m, width, height,
                   pid_buf, pk_buf):
    """Branchless lane-group projection so LLVM can vectorize it.

    Culled lanes get the unique sentinel pid ``-1 - lane`` (their packed
    value is garbage and must not be read).  Alive lanes produce results bit
    identical to :func:`_project_lane`.
    """
    m00 = m[0, 0]; m01 = m[0, 1]; m02 = m[0, 2]; m03 = m[0, 3]
    m10 = m[1, 0]; m11 = m[1, 1]; m12 = m[1, 2]; m13 = m[1, 3]
    m30 = m[3, 0]; m31 = m[3, 1]; m32 = m[3, 2]; m33 = m[3, 3]
    for l in range(cnt):
        i = base + l
        x = np.float64(xs[i])
        y = np.float64(ys[i])
        z = np.float64(zs[i])
        w = x * m30 + y * m31 + z * m32 + m33
        ok = w > CULL_EPSILON
        wsafe = w if ok else 1.0
        cx = x * m00 + y * m01 + z * m02 + m03
        cy = x * m10 + y * m11 + z * m12 + m13
        nx = cx / wsafe
        ny = cy / wsafe
        ok = ok and nx >= -1.0 and nx < 1.0 and ny >= -1.0 and ny < 1.0
        px = np.int64(math.floor((nx * 0.5 + 0.5) * width)) if ok else np.int64(0)
        py = np.int64(math.floor((ny * 0.5 + 0.5) * height)) if ok else np.int64(0)
        px = min(px, np.int64(width - 1))
        py = min(py, np.int64(height - 1))
        rgb = (_U(rs[i]) << _SH_R) | (_U(gs[i]) << _SH_G) | _U(bs[i])
        pk_buf[l] = (_U(f32_bits(wsafe)) << _SH_DEPTH) | rgb
        pid_buf[l] = px + py * width if ok else np.int64(-1 - l)


@njit
def _lane(xs, ys, zs, rs, gs, bs, i, m, width, height):
    alive, pid, w = _project_lane(xs, ys, zs, i, m, width, height)
    if not alive:
        return False, np.int64(0), _U(0)
    rgb = (_U(rs[i]) << _SH_R) | (_U(gs[i]) << _SH_G) | _U(bs[i])
    packed = (_U(f32_bits(w)) << _SH_DEPTH) | rgb
    return True, pid, packed


@njit(nogil=True, cache=True)
def _pass_just_set(xs, ys, zs, rs, gs, bs, m, width, height, fb, lo, hi, counters):
    n = len(xs)
    cand = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, packed = _lane(xs, ys, zs, rs, gs, bs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        fb[pid] = packed  # deliberately non-atomic
    counters[0] += cand


@njit(nogil=True, cache=True)
def _pass_atomic_min(xs, ys, zs, rs, gs, bs, m, width, height, fb, lo, hi, counters):
    n = len(xs)
    cand = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, packed = _lane(xs, ys, zs, rs, gs, bs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        atomic_min_u64(fb, pid, packed)
    counters[0] += cand
    counters[1] += cand  # one unconditional atomic min per survivor


@njit(nogil=True, cache=True)
def _pass_early_z(xs, ys, zs, rs, gs, bs, m, width, height, fb, lo, hi, counters):
    n = len(xs)
    cand = 0
    mins = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, packed = _lane(xs, ys, zs, rs, gs, bs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        # unsynchronized pre-read is safe: the stored value only decreases
        if packed < atomic_load_u64(fb, pid):
            atomic_min_u64(fb, pid, packed)
            mins += 1
    counters[0] += cand
    counters[1] += mins


@njit(nogil=True)
def _pass_busy_loop(xs, ys, zs, rs, gs, bs, m, width, height, fb, lock, lo, hi,
                    counters):
    n = len(xs)
    cand = 0
    attempts = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, packed = _lane(xs, ys, zs, rs, gs, bs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        if packed >= atomic_load_u64(fb, pid):
            continue
        spins = 0
        while True:
            attempts += 1
            if atomic_cas_u32(lock, pid, np.uint32(0), np.uint32(1)) == np.uint32(0):
                break
            spins += 1
            if spins >= 32:
                # the lock holder may be preempted; let it run
                sched_yield()
                spins = 0
        if packed < atomic_load_u64(fb, pid):
            atomic_store_u64(fb, pid, packed)
        atomic_store_release_u32(lock, pid, np.uint32(0))
    counters[0] += cand
    counters[3] += attempts


@njit(nogil=True, cache=True)
def _pass_reduce(xs, ys, zs, rs, gs, bs, m, width, height, fb, use_early_z,
                 lo, hi, counters):
    n = len(xs)
    cand = 0
    mins = 0
    # culled lanes get a unique negative pid so they can never look paired
    pid_buf = np.empty(LANES, dtype=np.int64)
    pk_buf = np.empty(LANES, dtype=np.uint64)
    for g in range(lo, hi):
        base = g * LANES
        cnt = min(base + LANES, n) - base
        _project_group(xs, ys, zs, rs, gs, bs, base, cnt, m, width, height,
                       pid_buf, pk_buf)
        survivors = 0
        all_equal = True
        shared_pid = np.int64(-1)
        best = CLEAR64
        for l in range(cnt):
            pid = pid_buf[l]
            if pid >= 0:
                if survivors == 0:
                    shared_pid = pid
                elif pid != shared_pid:
                    all_equal = False
                if pk_buf[l] < best:
                    best = pk_buf[l]
                survivors += 1
        if survivors == 0:
            continue
        cand += survivors

        if all_equal:
            # single update carrying the group minimum
            if not use_early_z or best < atomic_load_u64(fb, shared_pid):
                atomic_min_u64(fb, shared_pid, best)
                mins += 1
            continue

        # clustered-pair rule: merge adjacent lanes aimed at the same pixel
        for k in range(0, cnt, 2):
            if k + 1 < cnt and pid_buf[k] == pid_buf[k + 1]:
                pair_min = min(pk_buf[k], pk_buf[k + 1])
                for l in range(k, k + 2):
                    if pk_buf[l] == pair_min:
                        if not use_early_z or \
                                pk_buf[l] < atomic_load_u64(fb, pid_buf[l]):
                            atomic_min_u64(fb, pid_buf[l], pk_buf[l])
                            mins += 1
            else:
                for l in range(k, min(k + 2, cnt)):
                    if pid_buf[l] >= 0:
                        if not use_early_z or \
                                pk_buf[l] < atomic_load_u64(fb, pid_buf[l]):
                            atomic_min_u64(fb, pid_buf[l], pk_buf[l])
                            mins += 1
    counters[0] += cand
    counters[1] += mins


@njit(nogil=True, cache=True)
def _pass_dedup(xs, ys, zs, rs, gs, bs, m, width, height, fb, lo, hi, counters):
    n = len(xs)
    cand = 0
    mins = 0
    pid_buf = np.empty(LANES, dtype=np.int64)
    pk_buf = np.empty(LANES, dtype=np.uint64)
    for g in range(lo, hi):
        base = g * LANES
        cnt = min(base + LANES, n) - base
        _project_group(xs, ys, zs, rs, gs, bs, base, cnt, m, width, height,
                       pid_buf, pk_buf)
        survivors = 0
        for l in range(cnt):
            if pid_buf[l] >= 0:
                survivors += 1
        if survivors == 0:
            continue
        cand += survivors

        # partition lanes by pixel; only partition minima write (ties both)
        for l in range(cnt):
            if pid_buf[l] < 0:
                continue
            part_min = pk_buf[l]
            for o in range(cnt):
                if pid_buf[o] == pid_buf[l] and pk_buf[o] < part_min:
                    part_min = pk_buf[o]
            if pk_buf[l] == part_min:
                if pk_buf[l] < atomic_load_u64(fb, pid_buf[l]):
                    atomic_min_u64(fb, pid_buf[l], pk_buf[l])
                    mins += 1
    counters[0] += cand
    counters[1] += mins


_POOLS: dict[int, ThreadPoolExecutor] = {}
_POOLS_LOCK = threading.Lock()


def _pool(workers: int) -> ThreadPoolExecutor:
    with _POOLS_LOCK:
        pool = _POOLS.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers,
                                      thread_name_prefix="pointraster")
            _POOLS[workers] = pool
        return pool


def _chunks(n_groups: int, workers: int):
    n_parts = max(1, min(workers, n_groups))
    return [((k * n_groups) // n_parts, ((k + 1) * n_groups) // n_parts)
            for k in range(n_parts)]


def _launch(kernel, static_args, n_groups: int, workers: int) -> AtomicOpCounters:
    parts = _chunks(n_groups, workers)
    counters = np.zeros((len(parts), 4), dtype=np.int64)
    if len(parts) == 1:
        kernel(*static_args, 0, n_groups, counters[0])
    else:
        pool = _pool(workers)
        futures = [pool.submit(kernel, *static_args, lo, hi, counters[k])
                   for k, (lo, hi) in enumerate(parts)]
        for fut in futures:
            fut.result()
    return AtomicOpCounters.from_rows(counters)


def render(method, cloud: PointCloud, view: CameraView, fb: PackedFramebuffer64,
           workers: int | None = None) -> AtomicOpCounters:
    """Run one render pass of ``method`` into ``fb``.

    ``fb`` must be cleared and sized to the view.  Never run two passes on
    one framebuffer concurrently.
    """
    method = RenderMethod(method)
    if fb.width != view.width or fb.height != view.height:
        raise ValueError(f"framebuffer is {fb.width}x{fb.height} but the view "
                         f"needs {view.width}x{view.height}")
    if cloud.count == 0:
        return AtomicOpCounters()
    workers = workers if workers is not None else default_workers()
    if workers < 1:
        raise ValueError("workers must be >= 1")

    n_groups = (cloud.count + LANES - 1) // LANES
    base = (cloud.x, cloud.y, cloud.z, cloud.r, cloud.g, cloud.b,
            view.wvp, view.width, view.height, fb.data)

    if method == RenderMethod.JUST_SET:
        return _launch(_pass_just_set, base, n_groups, workers)
    if method == RenderMethod.ATOMIC_MIN:
        return _launch(_pass_atomic_min, base, n_groups, workers)
    if method == RenderMethod.EARLY_Z:
        return _launch(_pass_early_z, base, n_groups, workers)
    if method == RenderMethod.BUSY_LOOP:
        lock_plane = np.zeros(view.pixel_count, dtype=np.uint32)
        return _launch(_pass_busy_loop, base + (lock_plane,), n_groups, workers)
    if method == RenderMethod.REDUCE:
        return _launch(_pass_reduce, base + (False,), n_groups, workers)
    if method == RenderMethod.REDUCE_EARLY_Z:
        return _launch(_pass_reduce, base + (True,), n_groups, workers)
    if method == RenderMethod.DEDUP:
        return _launch(_pass_dedup, base, n_groups, workers)
    raise ValueError(f"unhandled method {method!r}")


@dataclass
class FragmentHistogram:
    """Per-pixel candidate counts plus the summary statistics."""

    counts: np.ndarray
    width: int
    height: int
    threshold: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def max_count(self) -> int:
        return int(self.counts.max()) if len(self.counts) else 0

    @property
    def mean_count(self) -> float:
        return self.total / len(self.counts) if len(self.counts) else 0.0

    @property
    def pixels_over_threshold(self) -> int:
        return int((self.counts > self.threshold).sum())


def fragment_histogram(cloud: PointCloud, view: CameraView,
                       threshold: int = 10_000) -> FragmentHistogram:
    """Exact count of culling survivors per pixel."""
    counts = np.zeros(view.pixel_count, dtype=np.int64)
    if cloud.count:
        _, pids, _, _ = project_all(cloud, view)
        counts = np.bincount(pids, minlength=view.pixel_count).astype(np.int64)
    return FragmentHistogram(counts=counts, width=view.width,
                             height=view.height, threshold=threshold)
