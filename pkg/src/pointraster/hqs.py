"""High-quality blending: average all points near the closest depth per pixel.

Two geometry passes run over the points.  The depth pass builds a 32-bit
per-pixel minimum of float32 depth bits; the color pass accepts a point when
its depth is within ``closest * epsilon_factor`` and accumulates color sums
and a count, in one of three layouts:

* ``hqs``    - two 64-bit words per pixel, 32 bits per channel lane.
* ``hqs1x``  - one word, 18-18-18-10 bit split; overflows silently corrupt
  once a pixel receives more than 1023 points (kept that way on purpose).
* ``hqs1r``  - one word, 16-16-16-16 split with an overflow protocol: the
  add that observes a prior count of exactly 255 zeroes the word and moves
  the accumulated sums into a wide fallback pair, so totals stay exact.

Because all accumulation is integer addition, resolved images are identical
across worker counts and input orders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .atomics import (
    atomic_add_u64,
    atomic_load_u32,
    atomic_load_u64,
    atomic_min_u32,
    atomic_xchg_u64,
    f32_bits,
    f32_from_bits,
    sched_yield,
)
from .core import AtomicOpCounters, CameraView, PointCloud
from .raster import LANES, _launch, _project_lane, default_workers

DEPTH_CLEAR32 = np.uint32(0xFFFFFFFF)

HQS_VARIANTS = ("hqs", "hqs1x", "hqs1r")

_U = np.uint64
_MASK16 = _U(0xFFFF)
_MASK18 = _U(0x3FFFF)
_MASK32 = _U(0xFFFFFFFF)

# hqs1r overflow handling: counts beyond 255 mean some thread owes an
# exchange; racers that observe the count this far past the threshold spin
# until the exchange lands, which keeps the count field (16 bits) from
# wrapping even if the detecting thread gets preempted.
_BACKOFF_COUNT = _U(2048)


@dataclass
class HqsParams:
    """Acceptance band: depth <= closest * epsilon_factor."""

    epsilon_factor: float = 1.01

    def __post_init__(self):
        if not self.epsilon_factor >= 1.0:
            raise ValueError("epsilon_factor must be >= 1")


@dataclass
class DepthBuffer32:
    """Per-pixel minimum float32 depth bits, cleared to all ones."""

    width: int
    height: int
    data: np.ndarray = field(init=False)

    def __post_init__(self):
        self.data = np.full(self.width * self.height, DEPTH_CLEAR32,
                            dtype=np.uint32)

    def clear(self) -> None:
        self.data.fill(DEPTH_CLEAR32)


@dataclass
class HqsAccumulator:
    """Two words per pixel: rg = (sum_r << 32 | sum_g), ba = (sum_b << 32 | n)."""

    width: int
    height: int
    rg: np.ndarray = field(init=False)
    ba: np.ndarray = field(init=False)

    def __post_init__(self):
        npix = self.width * self.height
        self.rg = np.zeros(npix, dtype=np.uint64)
        self.ba = np.zeros(npix, dtype=np.uint64)

    def clear(self) -> None:
        self.rg.fill(0)
        self.ba.fill(0)


@dataclass
class Hqs1xAccumulator:
    """One word per pixel, bits r[46:64) g[28:46) b[10:28) count[0:10)."""

    width: int
    height: int
    words: np.ndarray = field(init=False)

    def __post_init__(self):
        self.words = np.zeros(self.width * self.height, dtype=np.uint64)

    def clear(self) -> None:
        self.words.fill(0)


@dataclass
class Hqs1rAccumulator:
    """Main word r[48) g[32) b[16) count[0) plus a wide fallback pair."""

    width: int
    height: int
    main: np.ndarray = field(init=False)
    fallback_rg: np.ndarray = field(init=False)
    fallback_ba: np.ndarray = field(init=False)

    def __post_init__(self):
        npix = self.width * self.height
        self.main = np.zeros(npix, dtype=np.uint64)
        self.fallback_rg = np.zeros(npix, dtype=np.uint64)
        self.fallback_ba = np.zeros(npix, dtype=np.uint64)

    def clear(self) -> None:
        self.main.fill(0)
        self.fallback_rg.fill(0)
        self.fallback_ba.fill(0)


def make_accumulator(variant: str, width: int, height: int):
    if variant == "hqs":
        return HqsAccumulator(width, height)
    if variant == "hqs1x":
        return Hqs1xAccumulator(width, height)
    if variant == "hqs1r":
        return Hqs1rAccumulator(width, height)
    raise ValueError(f"unknown hqs variant {variant!r}")


@njit(nogil=True, cache=True)
def _depth_kernel(xs, ys, zs, m, width, height, db, lo, hi, counters):
    n = len(xs)
    cand = 0
    mins = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, w = _project_lane(xs, ys, zs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        bits = f32_bits(w)
        if bits < atomic_load_u32(db, pid):
            atomic_min_u32(db, pid, bits)
            mins += 1
    counters[0] += cand
    counters[1] += mins


@njit
def _accepted(db, pid, w, epsilon):
    # GLSL compares float32 pos.w, so use the float32-rounded depth here too
    d = f32_from_bits(f32_bits(w))
    closest = f32_from_bits(db[pid])
    return d <= closest * epsilon


@njit(nogil=True, cache=True)
def _color_kernel_hqs(xs, ys, zs, rs, gs, bs, m, width, height, db, rg, ba,
                      epsilon, lo, hi, counters):
    n = len(xs)
    cand = 0
    adds = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, w = _project_lane(xs, ys, zs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        if not _accepted(db, pid, w, epsilon):
            continue
        atomic_add_u64(rg, pid, (_U(rs[i]) << _U(32)) | _U(gs[i]))
        atomic_add_u64(ba, pid, (_U(bs[i]) << _U(32)) | _U(1))
        adds += 2
    counters[0] += cand
    counters[2] += adds


@njit(nogil=True, cache=True)
def _color_kernel_hqs1x(xs, ys, zs, rs, gs, bs, m, width, height, db, words,
                        epsilon, lo, hi, counters):
    n = len(xs)
    cand = 0
    adds = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, w = _project_lane(xs, ys, zs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        if not _accepted(db, pid, w, epsilon):
            continue
        add = (_U(rs[i]) << _U(46)) | (_U(gs[i]) << _U(28)) \
            | (_U(bs[i]) << _U(10)) | _U(1)
        atomic_add_u64(words, pid, add)
        adds += 1
    counters[0] += cand
    counters[2] += adds


@njit(nogil=True)
def _color_kernel_hqs1r(xs, ys, zs, rs, gs, bs, m, width, height, db, main,
                        fb_rg, fb_ba, epsilon, lo, hi, counters):
    n = len(xs)
    cand = 0
    adds = 0
    exchanges = 0
    for i in range(lo * LANES, min(hi * LANES, n)):
        alive, pid, w = _project_lane(xs, ys, zs, i, m, width, height)
        if not alive:
            continue
        cand += 1
        if not _accepted(db, pid, w, epsilon):
            continue
        add = (_U(rs[i]) << _U(48)) | (_U(gs[i]) << _U(32)) \
            | (_U(bs[i]) << _U(16)) | _U(1)
        old = atomic_add_u64(main, pid, add)
        adds += 1
        cnt = old & _MASK16
        if cnt >= _U(255):
            a = _U(1)
            rr = _U(rs[i])
            gg = _U(gs[i])
            bb = _U(bs[i])
            if cnt == _U(255):
                # first overflowing thread: reset the word and carry the
                # pre-overflow sums (its own count of 1 plus the 255 moved)
                atomic_xchg_u64(main, pid, _U(0))
                exchanges += 1
                rr += (old >> _U(48)) & _MASK16
                gg += (old >> _U(32)) & _MASK16
                bb += (old >> _U(16)) & _MASK16
                a += _U(255)
            atomic_add_u64(fb_rg, pid, (rr << _U(32)) | gg)
            atomic_add_u64(fb_ba, pid, (bb << _U(32)) | a)
            adds += 2
            if cnt >= _BACKOFF_COUNT:
                spins = 0
                while (atomic_load_u64(main, pid) & _MASK16) >= _BACKOFF_COUNT:
                    spins += 1
                    if spins >= 32:
                        sched_yield()
                        spins = 0
    counters[0] += cand
    counters[2] += adds
    counters[3] += exchanges


def _check_geometry(view: CameraView, buf, name: str) -> None:
    if buf.width != view.width or buf.height != view.height:
        raise ValueError(f"{name} is {buf.width}x{buf.height} but the view "
                         f"needs {view.width}x{view.height}")


def depth_pass(cloud: PointCloud, view: CameraView, db: DepthBuffer32,
               workers: int | None = None) -> AtomicOpCounters:
    """32-bit atomic-min of float depth bits, with an early depth gate."""
    _check_geometry(view, db, "depth buffer")
    if cloud.count == 0:
        return AtomicOpCounters()
    workers = workers if workers is not None else default_workers()
    n_groups = (cloud.count + LANES - 1) // LANES
    args = (cloud.x, cloud.y, cloud.z, view.wvp, view.width, view.height,
            db.data)
    return _launch(_depth_kernel, args, n_groups, workers)


def _color_pass(kernel, cloud, view, db, bufs, params, workers):
    _check_geometry(view, db, "depth buffer")
    if cloud.count == 0:
        return AtomicOpCounters()
    workers = workers if workers is not None else default_workers()
    n_groups = (cloud.count + LANES - 1) // LANES
    args = (cloud.x, cloud.y, cloud.z, cloud.r, cloud.g, cloud.b,
            view.wvp, view.width, view.height, db.data) + bufs \
        + (float(params.epsilon_factor),)
    return _launch(kernel, args, n_groups, workers)


def color_pass_hqs(cloud: PointCloud, view: CameraView, db: DepthBuffer32,
                   acc: HqsAccumulator, params: HqsParams | None = None,
                   workers: int | None = None) -> AtomicOpCounters:
    """Two 64-bit adds per accepted point into the rg/ba word pair."""
    _check_geometry(view, acc, "accumulator")
    params = params or HqsParams()
    return _color_pass(_color_kernel_hqs, cloud, view, db, (acc.rg, acc.ba),
                       params, workers)


def color_pass_hqs1x(cloud: PointCloud, view: CameraView, db: DepthBuffer32,
                     acc: Hqs1xAccumulator, params: HqsParams | None = None,
                     workers: int | None = None) -> AtomicOpCounters:
    """One 64-bit add per accepted point; no overflow protection at all."""
    _check_geometry(view, acc, "accumulator")
    params = params or HqsParams()
    return _color_pass(_color_kernel_hqs1x, cloud, view, db, (acc.words,),
                       params, workers)


def color_pass_hqs1r(cloud: PointCloud, view: CameraView, db: DepthBuffer32,
                     acc: Hqs1rAccumulator, params: HqsParams | None = None,
                     workers: int | None = None) -> AtomicOpCounters:
    """One add on the fast path, exchange-to-fallback past 255 points."""
    _check_geometry(view, acc, "accumulator")
    params = params or HqsParams()
    w = workers if workers is not None else default_workers()
    # the 16-bit count field must not wrap while an exchange is pending:
    # racers stall at _BACKOFF_COUNT, plus at most one in-flight add each
    if w + int(_BACKOFF_COUNT) >= (1 << 16) - 255:
        raise ValueError(f"worker count {w} breaks the hqs1r overflow margin")
    return _color_pass(_color_kernel_hqs1r, cloud, view, db,
                       (acc.main, acc.fallback_rg, acc.fallback_ba),
                       params, w)


def _resolve(sum_r, sum_g, sum_b, count, width, height, background):
    img = np.empty((width * height, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    hit = count > 0
    n = count[hit]
    img[hit, 0] = (sum_r[hit] // n).astype(np.uint8)
    img[hit, 1] = (sum_g[hit] // n).astype(np.uint8)
    img[hit, 2] = (sum_b[hit] // n).astype(np.uint8)
    return img.reshape(height, width, 3)


def resolve_hqs(acc: HqsAccumulator, background=(0, 0, 0)) -> np.ndarray:
    """Truncating integer division of the channel sums by the point count."""
    sum_r = acc.rg >> _U(32)
    sum_g = acc.rg & _MASK32
    sum_b = acc.ba >> _U(32)
    count = acc.ba & _MASK32
    return _resolve(sum_r, sum_g, sum_b, count, acc.width, acc.height,
                    background)


def resolve_hqs1x(acc: Hqs1xAccumulator, background=(0, 0, 0)) -> np.ndarray:
    w = acc.words
    sum_r = (w >> _U(46)) & _MASK18
    sum_g = (w >> _U(28)) & _MASK18
    sum_b = (w >> _U(10)) & _MASK18
    count = w & _U(0x3FF)
    return _resolve(sum_r, sum_g, sum_b, count, acc.width, acc.height,
                    background)


def resolve_hqs1r(acc: Hqs1rAccumulator, background=(0, 0, 0)) -> np.ndarray:
    m = acc.main
    sum_r = ((m >> _U(48)) & _MASK16) + (acc.fallback_rg >> _U(32))
    sum_g = ((m >> _U(32)) & _MASK16) + (acc.fallback_rg & _MASK32)
    sum_b = ((m >> _U(16)) & _MASK16) + (acc.fallback_ba >> _U(32))
    count = (m & _MASK16) + (acc.fallback_ba & _MASK32)
    return _resolve(sum_r, sum_g, sum_b, count, acc.width, acc.height,
                    background)


_COLOR_PASSES = {
    "hqs": (color_pass_hqs, resolve_hqs),
    "hqs1x": (color_pass_hqs1x, resolve_hqs1x),
    "hqs1r": (color_pass_hqs1r, resolve_hqs1r),
}


def render_hqs(variant: str, cloud: PointCloud, view: CameraView,
               params: HqsParams | None = None, workers: int | None = None,
               background=(0, 0, 0)):
    """Convenience wrapper: both passes plus resolve; returns (image, counters).

    Candidates are reported once (both geometry passes see the same set);
    atomic-op counts are summed over the two passes.
    """
    if variant not in HQS_VARIANTS:
        raise ValueError(f"unknown hqs variant {variant!r}")
    params = params or HqsParams()
    color_pass, resolve = _COLOR_PASSES[variant]
    db = DepthBuffer32(view.width, view.height)
    acc = make_accumulator(variant, view.width, view.height)
    depth = depth_pass(cloud, view, db, workers=workers)
    color = color_pass(cloud, view, db, acc, params, workers)
    counters = AtomicOpCounters(
        candidate_points=color.candidate_points,
        min_calls=depth.min_calls + color.min_calls,
        add_calls=depth.add_calls + color.add_calls,
        exchange_calls=depth.exchange_calls + color.exchange_calls,
    )
    return resolve(acc, background), counters
