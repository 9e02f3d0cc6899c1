"""Benchmark harness: method x ordering x viewpoint matrix with CSV reports.

Every timed row is validated against the single-threaded reference image
before it is reported; a mismatch aborts the run (``just_set`` is inherently
schedule dependent and is flagged ``untestable`` instead).  Frame times cover
render plus resolve with a monotonic clock; applying a vertex order is a
one-time preprocessing step timed separately.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from .core import (
    AtomicOpCounters,
    CameraView,
    PackedFramebuffer64,
    PointCloud,
    build_camera,
    depth_gray_image,
    resolve_basic,
    resolve_depth,
)
from .hqs import (
    HQS_VARIANTS,
    DepthBuffer32,
    HqsParams,
    color_pass_hqs,
    color_pass_hqs1r,
    color_pass_hqs1x,
    depth_pass,
    make_accumulator,
    resolve_hqs,
    resolve_hqs1r,
    resolve_hqs1x,
)
from .io import SCENE_KINDS, SceneSpec, generate_scene, read_cloud
from .ordering import OrderingSpec, apply_ordering
from .raster import METHOD_NAMES, render
from .reference import reference_framebuffer, reference_hqs_image

log = logging.getLogger(__name__)

ALL_METHODS = METHOD_NAMES + HQS_VARIANTS
DEFAULT_SIZE = (512, 512)

CSV_COLUMNS = ("method", "ordering", "viewpoint", "mean_ms", "median_ms",
               "min_ms", "points_per_sec", "candidates", "min_calls",
               "add_calls", "exchange_calls", "correct")


class BenchmarkError(RuntimeError):
    """A timed frame did not match the reference image."""


@dataclass(frozen=True)
class Viewpoint:
    """Named camera parameters; fovy is given in degrees for config files."""

    name: str
    eye: tuple
    target: tuple
    up: tuple = (0.0, 1.0, 0.0)
    fovy_deg: float = 60.0
    near: float = 0.05
    far: float = 1000.0

    def camera(self, width: int, height: int) -> CameraView:
        return build_camera(self.eye, self.target, self.up,
                            math.radians(self.fovy_deg), width, height,
                            self.near, self.far)

    @staticmethod
    def from_dict(d: dict) -> "Viewpoint":
        return Viewpoint(
            name=d.get("name", "view"),
            eye=tuple(d["eye"]),
            target=tuple(d["target"]),
            up=tuple(d.get("up", (0.0, 1.0, 0.0))),
            fovy_deg=float(d.get("fovy_deg", 60.0)),
            near=float(d.get("near", 0.05)),
            far=float(d.get("far", 1000.0)),
        )


def auto_viewpoint(cloud: PointCloud, name: str = "auto") -> Viewpoint:
    """Deterministic framing of the cloud's bounding box."""
    center = (cloud.aabb_min + cloud.aabb_max) / 2.0
    radius = float(np.linalg.norm(cloud.aabb_max - cloud.aabb_min)) / 2.0
    radius = max(radius, 1e-3)
    direction = np.array([1.0, 0.6, 1.2])
    direction /= np.linalg.norm(direction)
    eye = center + direction * radius * 2.4
    return Viewpoint(name=name, eye=tuple(eye), target=tuple(center),
                     near=max(radius / 100.0, 1e-4), far=radius * 20.0)


def parse_input_token(token: str) -> dict:
    """CLI input syntax: a file path, or ``kind:n=...,seed=...,extent=...``."""
    head, _, rest = token.partition(":")
    if head in SCENE_KINDS:
        params: dict = {"kind": head}
        if rest:
            for part in rest.split(","):
                key, _, value = part.partition("=")
                key = key.strip()
                if key not in ("n", "seed", "extent"):
                    raise ValueError(f"unknown scene parameter {key!r}")
                params[key] = float(value) if key == "extent" else int(value)
        return {"scene": params}
    return {"path": token}


def load_input(source) -> tuple[PointCloud, str]:
    """Accepts a path, a SceneSpec, or a parsed input dict."""
    if isinstance(source, SceneSpec):
        return generate_scene(source), source.label()
    if isinstance(source, dict):
        if source.get("scene") is not None:
            spec = SceneSpec(**source["scene"])
            return generate_scene(spec), spec.label()
        source = source["path"]
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return read_cloud(path), path.name


@dataclass
class FrameResult:
    image: np.ndarray
    counters: AtomicOpCounters
    depth_image: np.ndarray | None = None


def render_frame(method: str, cloud: PointCloud, view: CameraView,
                 workers: int | None = None, epsilon: float = 1.01,
                 background=(0, 0, 0), want_depth: bool = False) -> FrameResult:
    """One full frame (all passes plus resolve) for any method name."""
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {ALL_METHODS}")
    if method in HQS_VARIANTS:
        runner = _HqsFrames(method, view, HqsParams(epsilon), background)
    else:
        runner = _BasicFrames(method, view, background)
    image, counters = runner.run(cloud, workers)
    depth = runner.depth_image() if want_depth else None
    return FrameResult(image=image, counters=counters, depth_image=depth)


class _BasicFrames:
    """Reusable frame state for the single-pass methods."""

    def __init__(self, method: str, view: CameraView, background):
        self.method = method
        self.view = view
        self.background = background
        self.fb = PackedFramebuffer64(view.width, view.height)

    def prepare(self):
        self.fb.clear()

    def run(self, cloud, workers):
        self.prepare()
        counters = render(self.method, cloud, self.view, self.fb,
                          workers=workers)
        return resolve_basic(self.fb, self.background), counters

    def depth_image(self):
        return resolve_depth(self.fb)


class _HqsFrames:
    """Reusable frame state for the two-pass blending methods."""

    _passes = {"hqs": (color_pass_hqs, resolve_hqs),
               "hqs1x": (color_pass_hqs1x, resolve_hqs1x),
               "hqs1r": (color_pass_hqs1r, resolve_hqs1r)}

    def __init__(self, method: str, view: CameraView, params: HqsParams,
                 background):
        self.view = view
        self.params = params
        self.background = background
        self.db = DepthBuffer32(view.width, view.height)
        self.acc = make_accumulator(method, view.width, view.height)
        self.color_pass, self.resolve = self._passes[method]

    def prepare(self):
        self.db.clear()
        self.acc.clear()

    def run(self, cloud, workers):
        self.prepare()
        depth = depth_pass(cloud, self.view, self.db, workers=workers)
        color = self.color_pass(cloud, self.view, self.db, self.acc,
                                self.params, workers)
        counters = AtomicOpCounters(
            candidate_points=color.candidate_points,
            min_calls=depth.min_calls,
            add_calls=color.add_calls,
            exchange_calls=color.exchange_calls,
        )
        return self.resolve(self.acc, self.background), counters

    def depth_image(self):
        return depth_gray_image(self.db.data, 0xFFFFFFFF, self.view.width,
                                self.view.height)


@dataclass
class BenchConfig:
    """One benchmark matrix: input x methods x orderings x viewpoints."""

    input: object  # path string, SceneSpec, or {"path"|"scene": ...} dict
    methods: list = field(default_factory=lambda: ["atomic_min"])
    orderings: list = field(default_factory=lambda: [OrderingSpec("original")])
    viewpoints: list | None = None  # None: auto-framed single viewpoint
    width: int = DEFAULT_SIZE[0]
    height: int = DEFAULT_SIZE[1]
    frames: int = 20
    warmup: int = 3
    workers: int | None = None
    epsilon: float = 1.01
    background: tuple = (0, 0, 0)
    measure_seconds: float | None = None  # wall-clock window mode

    def validate(self) -> None:
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not self.methods:
            raise ValueError("no methods configured")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"unknown method {m!r}, expected one of "
                                 f"{ALL_METHODS}")
        for o in self.orderings:
            if not isinstance(o, OrderingSpec):
                raise ValueError(f"orderings must be OrderingSpec, got {o!r}")
        if self.measure_seconds is not None and self.measure_seconds <= 0:
            raise ValueError("measure_seconds must be positive")

    @staticmethod
    def from_json(data: dict) -> "BenchConfig":
        orderings = []
        for o in data.get("orderings", ["original"]):
            if isinstance(o, str):
                orderings.append(OrderingSpec(kind=o))
            else:
                orderings.append(OrderingSpec(**o))
        viewpoints = None
        if data.get("viewpoints"):
            viewpoints = [Viewpoint.from_dict(v) for v in data["viewpoints"]]
        config = BenchConfig(
            input=data["input"],
            methods=list(data.get("methods", ["atomic_min"])),
            orderings=orderings,
            viewpoints=viewpoints,
            width=int(data.get("width", DEFAULT_SIZE[0])),
            height=int(data.get("height", DEFAULT_SIZE[1])),
            frames=int(data.get("frames", 20)),
            warmup=int(data.get("warmup", 3)),
            workers=data.get("workers"),
            epsilon=float(data.get("epsilon", 1.01)),
            background=tuple(data.get("background", (0, 0, 0))),
            measure_seconds=data.get("measure_seconds"),
        )
        config.validate()
        return config

    @staticmethod
    def from_json_file(path) -> "BenchConfig":
        return BenchConfig.from_json(json.loads(Path(path).read_text()))


@dataclass
class BenchRecord:
    method: str
    ordering: str
    viewpoint: str
    mean_ms: float
    median_ms: float
    min_ms: float
    points_per_sec: float
    candidates: int
    min_calls: int
    add_calls: int
    exchange_calls: int
    correct: str

    def row(self) -> list:
        return [self.method, self.ordering, self.viewpoint,
                f"{self.mean_ms:.3f}", f"{self.median_ms:.3f}",
                f"{self.min_ms:.3f}", f"{self.points_per_sec:.0f}",
                self.candidates, self.min_calls, self.add_calls,
                self.exchange_calls, self.correct]


@dataclass
class BenchResult:
    records: list
    csv: str
    ordering_seconds: dict
    input_label: str


def records_to_csv(records) -> str:
    out = StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        writer.writerow(record.row())
    return out.getvalue()


def run_benchmark(config: BenchConfig) -> BenchResult:
    """Run the full matrix; raises BenchmarkError on any image mismatch."""
    config.validate()
    cloud, input_label = load_input(config.input)

    viewpoints = config.viewpoints or [auto_viewpoint(cloud)]
    cameras = {vp.name: vp.camera(config.width, config.height)
               for vp in viewpoints}

    ordered = {}
    ordering_seconds = {}
    for spec in config.orderings:
        t0 = time.perf_counter()
        ordered[spec.label()] = apply_ordering(cloud, spec)
        ordering_seconds[spec.label()] = time.perf_counter() - t0
        log.info("ordering %s applied in %.3f s", spec.label(),
                 ordering_seconds[spec.label()])

    # reference images are order independent: one per viewpoint (and per
    # epsilon for the blending methods)
    basic_ref = {}
    hqs_ref = {}
    needs_basic = any(m not in HQS_VARIANTS for m in config.methods)
    needs_hqs = any(m in HQS_VARIANTS for m in config.methods)
    for name, cam in cameras.items():
        if needs_basic:
            fb = PackedFramebuffer64(cam.width, cam.height)
            fb.data[:] = reference_framebuffer(cloud, cam)
            basic_ref[name] = resolve_basic(fb, config.background)
        if needs_hqs:
            hqs_ref[name] = reference_hqs_image(cloud, cam, config.epsilon,
                                                config.background)

    records = []
    for method in config.methods:
        for spec in config.orderings:
            ordered_cloud = ordered[spec.label()]
            for vp in viewpoints:
                cam = cameras[vp.name]
                if method in HQS_VARIANTS:
                    runner = _HqsFrames(method, cam, HqsParams(config.epsilon),
                                        config.background)
                    expected = hqs_ref[vp.name]
                else:
                    runner = _BasicFrames(method, cam, config.background)
                    expected = basic_ref[vp.name]
                record = _measure(runner, method, spec.label(), vp.name,
                                  ordered_cloud, expected, config)
                records.append(record)

    return BenchResult(records=records, csv=records_to_csv(records),
                       ordering_seconds=ordering_seconds,
                       input_label=input_label)


def _measure(runner, method: str, ordering: str, viewpoint: str,
             cloud: PointCloud, expected: np.ndarray,
             config: BenchConfig) -> BenchRecord:
    for _ in range(config.warmup):
        runner.run(cloud, config.workers)

    times = []
    image = None
    counters = AtomicOpCounters()
    window_start = time.perf_counter()
    while True:
        t0 = time.perf_counter()
        image, counters = runner.run(cloud, config.workers)
        times.append((time.perf_counter() - t0) * 1000.0)
        if config.measure_seconds is not None:
            if time.perf_counter() - window_start >= config.measure_seconds:
                break
        elif len(times) >= config.frames:
            break

    if method == "just_set":
        correct = "untestable"
    else:
        if not np.array_equal(image, expected):
            raise BenchmarkError(
                f"{method} x {ordering} x {viewpoint}: frame differs from "
                "the reference image; refusing to report its timing")
        correct = "true"

    mean_ms = statistics.fmean(times)
    pps = counters.candidate_points / (mean_ms / 1000.0) if mean_ms > 0 else 0.0
    return BenchRecord(
        method=method, ordering=ordering, viewpoint=viewpoint,
        mean_ms=mean_ms, median_ms=statistics.median(times),
        min_ms=min(times), points_per_sec=pps,
        candidates=counters.candidate_points, min_calls=counters.min_calls,
        add_calls=counters.add_calls, exchange_calls=counters.exchange_calls,
        correct=correct,
    )
