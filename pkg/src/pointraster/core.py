"""Domain types, camera math and the packed 64-bit point encoding.

A point is packed into one 64-bit word as ``float32-bits(depth) << 24 | rgb``
with 8 bits per color channel (red highest).  Because the bit patterns of
positive IEEE-754 floats order like the floats themselves, a 64-bit unsigned
minimum over packed words picks the closest point per pixel and resolves
depth ties toward the numerically smaller color, which makes every
atomic-min render method schedule independent.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

# framebuffer clear value: all bits set, so any valid packed point wins a min
CLEAR64 = np.uint64(0xFFFFFFFFFFFFFFFF)
# points closer than this view depth are culled instead of divided by ~0
CULL_EPSILON = 1e-6

COLOR_MASK = 0xFFFFFF
DEPTH_SHIFT = 24


class PointCloudError(ValueError):
    """Raised for inconsistent point-cloud construction arguments."""


@dataclass(frozen=True)
class PointCloud:
    """Structure-of-arrays point set: float32 positions, uint8 colors.

    The arrays are treated as immutable after construction and may be shared
    freely across worker threads.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        for name in ("y", "z", "r", "g", "b"):
            if len(getattr(self, name)) != n:
                raise PointCloudError(f"attribute array {name!r} has length "
                                      f"{len(getattr(self, name))}, expected {n}")

    @property
    def count(self) -> int:
        return len(self.x)

    @staticmethod
    def from_arrays(positions, colors) -> "PointCloud":
        """Build a cloud from (n, 3) position/color arrays; computes the AABB."""
        pos = np.ascontiguousarray(positions, dtype=np.float32).reshape(-1, 3)
        col = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
        if len(pos) != len(col):
            raise PointCloudError(f"{len(pos)} positions vs {len(col)} colors")
        if len(pos):
            amin = pos.min(axis=0).astype(np.float64)
            amax = pos.max(axis=0).astype(np.float64)
        else:
            amin = np.zeros(3)
            amax = np.zeros(3)
        return PointCloud(
            x=np.ascontiguousarray(pos[:, 0]),
            y=np.ascontiguousarray(pos[:, 1]),
            z=np.ascontiguousarray(pos[:, 2]),
            r=np.ascontiguousarray(col[:, 0]),
            g=np.ascontiguousarray(col[:, 1]),
            b=np.ascontiguousarray(col[:, 2]),
            aabb_min=amin,
            aabb_max=amax,
        )

    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.z], axis=1)

    def colors(self) -> np.ndarray:
        return np.stack([self.r, self.g, self.b], axis=1)

    def take(self, indices) -> "PointCloud":
        """Reorder/subset the cloud; the AABB is kept as-is for permutations."""
        idx = np.asarray(indices)
        return PointCloud(
            x=np.ascontiguousarray(self.x[idx]),
            y=np.ascontiguousarray(self.y[idx]),
            z=np.ascontiguousarray(self.z[idx]),
            r=np.ascontiguousarray(self.r[idx]),
            g=np.ascontiguousarray(self.g[idx]),
            b=np.ascontiguousarray(self.b[idx]),
            aabb_min=self.aabb_min,
            aabb_max=self.aabb_max,
        )


@dataclass(frozen=True)
class CameraView:
    """World-view-projection matrix plus target image size.

    ``wvp`` is a row-major 4x4 float64 matrix applied to column vectors
    ``(x, y, z, 1)``; ``clip.w`` must come out as the linear view-space depth
    (positive in front of the camera).
    """

    wvp: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        m = np.ascontiguousarray(self.wvp, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"wvp must be 4x4, got {m.shape}")
        object.__setattr__(self, "wvp", m)
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.width * self.height > 2**31:
            raise ValueError("width*height must fit a signed 32-bit pixel ID")

    @property
    def pixel_count(self) -> int:
        return self.width * self.height


@dataclass
class AtomicOpCounters:
    """Per-pass instrumentation: culled-survivor count and atomic-op calls.

    ``min_calls`` counts atomic-min invocations of either width (64-bit on
    the packed framebuffer, 32-bit on the depth buffer); ``exchange_calls``
    counts exchange and compare-and-swap invocations, including failed CAS
    attempts of the busy-loop lock.
    """

    candidate_points: int = 0
    min_calls: int = 0
    add_calls: int = 0
    exchange_calls: int = 0

    def __add__(self, other: "AtomicOpCounters") -> "AtomicOpCounters":
        return AtomicOpCounters(
            self.candidate_points + other.candidate_points,
            self.min_calls + other.min_calls,
            self.add_calls + other.add_calls,
            self.exchange_calls + other.exchange_calls,
        )

    @staticmethod
    def from_rows(rows: np.ndarray) -> "AtomicOpCounters":
        """Sum per-worker counter rows (candidates, min, add, exchange)."""
        total = rows.sum(axis=0)
        return AtomicOpCounters(int(total[0]), int(total[1]), int(total[2]), int(total[3]))


@dataclass
class PackedFramebuffer64:
    """One 64-bit word per pixel: depth bits high, RGB low, min-updated."""

    width: int
    height: int
    data: np.ndarray = field(init=False)

    def __post_init__(self):
        self.data = np.full(self.width * self.height, CLEAR64, dtype=np.uint64)

    def clear(self) -> None:
        self.data.fill(CLEAR64)


def pack_rgb(r: int, g: int, b: int) -> int:
    return (int(r) << 16) | (int(g) << 8) | int(b)


def unpack_rgb(rgb: int):
    return ((rgb >> 16) & 0xFF, (rgb >> 8) & 0xFF, rgb & 0xFF)


def float_to_bits32(depth: float) -> int:
    """IEEE-754 bit pattern of ``depth`` rounded to float32."""
    return struct.unpack("<I", struct.pack("<f", depth))[0]


def bits32_to_float(bits: int) -> float:
    return struct.unpack("<f", struct.pack("<I", bits))[0]


def encode_point64(depth: float, rgb: int) -> int:
    """Pack a positive finite depth and a 24-bit color into one word."""
    if not (math.isfinite(depth) and depth > 0.0):
        raise ValueError(f"depth must be positive and finite, got {depth!r}")
    if not 0 <= rgb <= COLOR_MASK:
        raise ValueError(f"rgb must fit 24 bits, got {rgb:#x}")
    return (float_to_bits32(depth) << DEPTH_SHIFT) | rgb


def decode_point64(value: int):
    """Inverse of :func:`encode_point64`: returns ``(depth_bits, rgb)``."""
    return (value >> DEPTH_SHIFT) & 0xFFFFFFFF, value & COLOR_MASK


def build_camera(eye, target, up, fovy: float, width: int, height: int,
                 near: float, far: float) -> CameraView:
    """Compose a look-at view with a perspective projection.

    The projection follows the usual OpenGL form, so ``clip.w`` equals the
    linear view-space depth of the transformed point.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    if not (0.0 < fovy < math.pi):
        raise ValueError(f"fovy must lie in (0, pi), got {fovy}")
    if near <= 0.0 or far <= near:
        raise ValueError(f"need 0 < near < far, got near={near} far={far}")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")

    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("eye and target coincide")
    forward = forward / norm

    side = np.cross(forward, up)
    side_norm = np.linalg.norm(side)
    if side_norm < 1e-12:
        raise ValueError("up vector is parallel to the view direction")
    side = side / side_norm
    true_up = np.cross(side, forward)

    view = np.eye(4)
    view[0, :3] = side
    view[1, :3] = true_up
    view[2, :3] = -forward
    view[0, 3] = -side @ eye
    view[1, 3] = -true_up @ eye
    view[2, 3] = forward @ eye

    t = math.tan(fovy / 2.0)
    aspect = width / height
    proj = np.zeros((4, 4))
    proj[0, 0] = 1.0 / (aspect * t)
    proj[1, 1] = 1.0 / t
    proj[2, 2] = -(far + near) / (far - near)
    proj[2, 3] = -2.0 * far * near / (far - near)
    proj[3, 2] = -1.0

    return CameraView(wvp=proj @ view, width=width, height=height)


def project_to_pixel(position, view: CameraView):
    """Scalar projection of one world point.

    Returns ``(pixel_id, depth)`` or ``None`` when the point is culled.  The
    mapping is the single source of truth all render kernels and the
    vectorized reference implementation must reproduce bit-exactly: half-open
    NDC bounds [-1, 1) on both axes, ``floor`` to pixel coordinates, row 0 at
    ``ndc.y == -1``.
    """
    m = view.wvp
    x = float(position[0])
    y = float(position[1])
    z = float(position[2])
    w = m[3, 0] * x + m[3, 1] * y + m[3, 2] * z + m[3, 3]
    if not w > CULL_EPSILON:
        return None
    cx = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]
    cy = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]
    nx = cx / w
    ny = cy / w
    if not (-1.0 <= nx < 1.0 and -1.0 <= ny < 1.0):
        return None
    px = int(math.floor((nx * 0.5 + 0.5) * view.width))
    py = int(math.floor((ny * 0.5 + 0.5) * view.height))
    # guard against FP round-up at the right/top edge of the half-open range
    px = min(px, view.width - 1)
    py = min(py, view.height - 1)
    return px + py * view.width, w


def resolve_basic(fb: PackedFramebuffer64, background=(0, 0, 0)) -> np.ndarray:
    """Convert a packed framebuffer to an (h, w, 3) uint8 RGB image."""
    words = fb.data
    img = np.empty((fb.height * fb.width, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    hit = words != CLEAR64
    rgb = words[hit]
    img[hit, 0] = (rgb >> np.uint64(16)).astype(np.uint8)
    img[hit, 1] = (rgb >> np.uint64(8)).astype(np.uint8)
    img[hit, 2] = rgb.astype(np.uint8)
    return img.reshape(fb.height, fb.width, 3)


def depth_gray_image(depth_bits: np.ndarray, clear_bits: int, width: int,
                     height: int) -> np.ndarray:
    """Grayscale image of float32 depth bits (near bright, far dark).

    Empty pixels map to 0; occupied pixels are linearly rescaled from
    [min_depth, max_depth] to [255, 32].
    """
    bits = np.asarray(depth_bits, dtype=np.uint32)
    gray = np.zeros(width * height, dtype=np.uint8)
    hit = bits != np.uint32(clear_bits)
    if hit.any():
        depths = bits[hit].view(np.float32).astype(np.float64)
        lo = depths.min()
        span = depths.max() - lo
        if span == 0.0:
            gray[hit] = 255
        else:
            gray[hit] = np.floor(255.0 - (depths - lo) / span * 223.0).astype(np.uint8)
    img = gray.reshape(height, width)
    return np.repeat(img[:, :, None], 3, axis=2)


def resolve_depth(fb: PackedFramebuffer64) -> np.ndarray:
    """Grayscale image of the linear depths stored in a packed framebuffer."""
    bits = ((fb.data >> np.uint64(DEPTH_SHIFT)) & np.uint64(0xFFFFFFFF)) \
        .astype(np.uint32)
    bits[fb.data == CLEAR64] = np.uint32(0xFFFFFFFF)
    return depth_gray_image(bits, 0xFFFFFFFF, fb.width, fb.height)
