"""Point-cloud file formats, synthetic scenes and bit-exact image output.

Supported interchange formats, all little-endian:

* PLY, binary_little_endian 1.0 only, vertex properties x/y/z (float32) and
  red/green/blue (uint8); extra scalar vertex properties are skipped.
* A raw cloud container: magic ``PCRB``, u32 version 1, u64 count, six f64
  AABB values, then ``count`` 16-byte records (3 x f32 position, 3 x u8
  color, 1 pad byte), optionally followed by a ``#``-prefixed comment block.
* Binary P6 PPM for images, used for golden-file comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PointCloud

BIN_MAGIC = b"PCRB"
BIN_VERSION = 1
_BIN_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("count", "<u8"),
                        ("aabb", "<f8", (6,))])
_BIN_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("r", "u1"), ("g", "u1"), ("b", "u1"), ("pad", "u1")])

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

SCENE_KINDS = ("uniform_cube", "sphere_surface", "terrain")


class CloudFormatError(ValueError):
    """Malformed or unsupported input file; messages carry byte offsets."""


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic synthetic scene: generator kind, size, seed, extent."""

    kind: str
    n: int
    seed: int = 0
    extent: float = 2.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}, "
                             f"expected one of {SCENE_KINDS}")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if not (math.isfinite(self.extent) and self.extent > 0):
            raise ValueError("extent must be positive and finite")

    def label(self) -> str:
        return f"{self.kind}[n={self.n},seed={self.seed}]"


# ---------------------------------------------------------------- PLY

def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise CloudFormatError(f"{path}: not a PLY file (no header at byte offset 0)")
    header_size = end + len(b"end_header\n")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    seen_vertex = False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] == "vertex":
                if seen_vertex:
                    raise CloudFormatError(f"{path}: duplicate vertex element")
                count = int(parts[2])
                in_vertex = True
                seen_vertex = True
            else:
                if not seen_vertex:
                    raise CloudFormatError(
                        f"{path}: element {parts[1]!r} precedes vertex data; "
                        "only vertex-first layouts are supported")
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise CloudFormatError(f"{path}: list properties on vertices "
                                       "are not supported")
            if parts[1] not in _PLY_TYPES:
                raise CloudFormatError(f"{path}: unknown property type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))

    if fmt != "binary_little_endian":
        raise CloudFormatError(f"{path}: unsupported format {fmt!r}, only "
                               "binary_little_endian is readable")
    if count is None:
        raise CloudFormatError(f"{path}: header declares no vertex element")

    names = [n for n, _ in props]
    for req, ty in (("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                    ("red", "u1"), ("green", "u1"), ("blue", "u1")):
        if req not in names:
            raise CloudFormatError(f"{path}: missing vertex property {req!r}")
        if dict(props)[req] != ty:
            raise CloudFormatError(f"{path}: property {req!r} must be "
                                   f"{'float32' if ty == '<f4' else 'uint8'}")

    rec = np.dtype(props)
    need = count * rec.itemsize
    payload = raw[header_size:header_size + need]
    if len(payload) < need:
        raise CloudFormatError(
            f"{path}: truncated payload, expected {need} bytes after the "
            f"header but the file ends at byte offset {len(raw)} "
            f"(payload starts at {header_size})")
    vertices = np.frombuffer(payload, dtype=rec, count=count)
    positions = np.stack([vertices["x"], vertices["y"], vertices["z"]], axis=1)
    colors = np.stack([vertices["red"], vertices["green"], vertices["blue"]],
                      axis=1)
    return PointCloud.from_arrays(positions, colors)


def write_ply(cloud: PointCloud, path) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {cloud.count}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    rec = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                    ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    data = np.empty(cloud.count, dtype=rec)
    data["x"] = cloud.x
    data["y"] = cloud.y
    data["z"] = cloud.z
    data["red"] = cloud.r
    data["green"] = cloud.g
    data["blue"] = cloud.b
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())


# ---------------------------------------------------------------- raw cloud

def bin_bytes(cloud: PointCloud, comment: str | None = None) -> bytes:
    header = np.zeros(1, dtype=_BIN_HEADER)
    header["magic"] = BIN_MAGIC
    header["version"] = BIN_VERSION
    header["count"] = cloud.count
    header["aabb"][0, :3] = cloud.aabb_min
    header["aabb"][0, 3:] = cloud.aabb_max
    records = np.zeros(cloud.count, dtype=_BIN_RECORD)
    records["x"] = cloud.x
    records["y"] = cloud.y
    records["z"] = cloud.z
    records["r"] = cloud.r
    records["g"] = cloud.g
    records["b"] = cloud.b
    parts = [header.tobytes(), records.tobytes()]
    if comment:
        for line in comment.splitlines():
            parts.append(b"# " + line.encode("utf-8") + b"\n")
    return b"".join(parts)


def write_bin(cloud: PointCloud, path, comment: str | None = None) -> None:
    Path(path).write_bytes(bin_bytes(cloud, comment))


def read_bin_bytes(raw: bytes, origin: str = "<bytes>") -> PointCloud:
    path = origin
    if len(raw) < _BIN_HEADER.itemsize:
        raise CloudFormatError(f"{path}: file too short for a header "
                               f"({len(raw)} < {_BIN_HEADER.itemsize} bytes)")
    header = np.frombuffer(raw, dtype=_BIN_HEADER, count=1)[0]
    if bytes(header["magic"]) != BIN_MAGIC:
        raise CloudFormatError(f"{path}: bad magic at byte offset 0, "
                               f"expected {BIN_MAGIC!r}")
    if int(header["version"]) != BIN_VERSION:
        raise CloudFormatError(f"{path}: unsupported version "
                               f"{int(header['version'])} at byte offset 4")
    count = int(header["count"])
    start = _BIN_HEADER.itemsize
    need = count * _BIN_RECORD.itemsize
    if len(raw) < start + need:
        raise CloudFormatError(f"{path}: truncated payload, expected "
                               f"{need} bytes at byte offset {start} but the "
                               f"file ends at {len(raw)}")
    trailer = raw[start + need:]
    if trailer and not trailer.startswith(b"#"):
        raise CloudFormatError(f"{path}: trailing garbage at byte offset "
                               f"{start + need} (comments must start with '#')")
    records = np.frombuffer(raw, dtype=_BIN_RECORD, count=count, offset=start)
    aabb = np.asarray(header["aabb"], dtype=np.float64)
    return PointCloud(
        x=records["x"].copy(), y=records["y"].copy(), z=records["z"].copy(),
        r=records["r"].copy(), g=records["g"].copy(), b=records["b"].copy(),
        aabb_min=aabb[:3].copy(), aabb_max=aabb[3:].copy(),
    )


def read_bin(path) -> PointCloud:
    return read_bin_bytes(Path(path).read_bytes(), origin=str(path))


def read_cloud(path) -> PointCloud:
    """Dispatch on extension: .ply or the raw .bin container."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    return read_bin(path)


# ---------------------------------------------------------------- PPM

def write_ppm(image: np.ndarray, path) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got shape {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def ppm_bytes(image: np.ndarray) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise CloudFormatError(f"{path}: not a binary PPM (P6) file")
    # header: three whitespace-separated fields, '#' comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CloudFormatError(f"{path}: truncated PPM header at byte "
                                   f"offset {pos}")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise CloudFormatError(f"{path}: unsupported maxval {maxval}")
    need = w * h * 3
    if len(raw) - pos < need:
        raise CloudFormatError(f"{path}: truncated PPM payload at byte "
                               f"offset {len(raw)}, expected {need} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=need,
                         offset=pos).reshape(h, w, 3).copy()


# ---------------------------------------------------------------- scenes

def generate_scene(spec: SceneSpec) -> PointCloud:
    """Deterministic synthetic cloud for a spec (fixed seed => fixed bytes)."""
    rng = np.random.default_rng(np.uint64(spec.seed))
    n = spec.n
    if n == 0:
        return PointCloud.from_arrays(np.empty((0, 3), np.float32),
                                      np.empty((0, 3), np.uint8))
    half = spec.extent / 2.0
    if spec.kind == "uniform_cube":
        pos = (rng.random((n, 3)) * spec.extent - half).astype(np.float32)
        col = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    elif spec.kind == "sphere_surface":
        dirs = rng.normal(size=(n, 3))
        norms = np.linalg.norm(dirs, axis=1)
        norms[norms < 1e-12] = 1.0
        pos = (dirs / norms[:, None] * half).astype(np.float32)
        col = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    else:  # terrain: heightfield in the xz-plane, y up
        x = rng.random(n) * spec.extent - half
        z = rng.random(n) * spec.extent - half
        y = np.zeros(n)
        amp = spec.extent * 0.08
        freq = 2.0 * np.pi / spec.extent
        for _ in range(4):
            fx, fz = rng.uniform(0.6, 1.4, 2) * freq
            px, pz = rng.uniform(0.0, 2.0 * np.pi, 2)
            y += amp * np.sin(fx * x + px) * np.sin(fz * z + pz)
            amp *= 0.5
            freq *= 2.3
        pos = np.stack([x, y, z], axis=1).astype(np.float32)
        t = (y - y.min()) / max(float(y.max() - y.min()), 1e-12)
        low = np.array([60, 110, 40], dtype=np.float64)
        high = np.array([150, 140, 120], dtype=np.float64)
        col = (low + t[:, None] * (high - low)
               + rng.integers(-10, 11, (n, 3))).clip(0, 255).astype(np.uint8)
    return PointCloud.from_arrays(pos, col)


# ---------------------------------------------------------------- heatmap

# gradient stops with strictly increasing channel sums, so brighter always
# means more points per pixel
_HEAT_STOPS = np.array([
    [0, 0, 0],
    [32, 0, 96],
    [128, 0, 128],
    [255, 64, 0],
    [255, 255, 0],
    [255, 255, 255],
], dtype=np.float64)
_HEAT_POS = np.linspace(0.0, 1.0, len(_HEAT_STOPS))


def heatmap_image(counts: np.ndarray, width: int, height: int) -> np.ndarray:
    """Log-scaled false-color image of per-pixel counts."""
    counts = np.asarray(counts, dtype=np.float64)
    peak = counts.max() if counts.size else 0.0
    if peak <= 0.0:
        return np.zeros((height, width, 3), dtype=np.uint8)
    t = np.log1p(counts) / np.log1p(peak)
    img = np.empty((width * height, 3), dtype=np.uint8)
    for c in range(3):
        img[:, c] = np.floor(np.interp(t, _HEAT_POS, _HEAT_STOPS[:, c])) \
            .astype(np.uint8)
    return img.reshape(height, width, 3)
