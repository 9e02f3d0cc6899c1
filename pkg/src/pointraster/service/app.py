"""FastAPI application exposing the rasterizer and benchmark harness.

Binary results (images, cloud files) come back as raw response bodies;
instrumentation travels in ``X-Pointraster-*`` headers.  Input files are
resolved on the server's filesystem; synthetic scenes are generated
in-process and cached, so repeated renders of one dataset pay its load cost
once.
"""

from __future__ import annotations

import threading
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Response

from .. import __version__
from ..bench import (
    BenchConfig,
    BenchmarkError,
    Viewpoint,
    auto_viewpoint,
    load_input,
    render_frame,
    run_benchmark,
)
from ..core import PointCloud
from ..io import CloudFormatError, bin_bytes, heatmap_image, ppm_bytes
from ..ordering import OrderingSpec, apply_ordering
from ..raster import default_workers, fragment_histogram
from .schemas import (
    BenchRecordModel,
    BenchRequest,
    BenchResponse,
    HealthResponse,
    InputModel,
    OrderRequest,
    RenderRequest,
    StatsRequest,
    StatsResponse,
    ViewpointModel,
)

PPM_MEDIA_TYPE = "image/x-portable-pixmap"


class _CloudCache:
    """Small keyed cache so a served dataset is loaded/generated once."""

    def __init__(self, capacity: int = 4):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._entries: dict[tuple, tuple[PointCloud, str]] = {}

    def get(self, source: dict) -> tuple[PointCloud, str]:
        if source.get("scene") is not None:
            key = ("scene",) + tuple(sorted(source["scene"].items()))
        else:
            key = ("path", source["path"])
        with self._lock:
            if key in self._entries:
                return self._entries[key]
        cloud, label = load_input(source)
        with self._lock:
            if len(self._entries) >= self.capacity:
                self._entries.pop(next(iter(self._entries)))
            self._entries[key] = (cloud, label)
        return cloud, label


def _viewpoint(model: ViewpointModel | None, cloud: PointCloud) -> Viewpoint:
    if model is None:
        return auto_viewpoint(cloud)
    return Viewpoint(**model.model_dump())


def _ordering(model) -> OrderingSpec:
    return OrderingSpec(kind=model.kind, seed=model.seed,
                        batch_size=model.batch_size)


def create_app() -> FastAPI:
    app = FastAPI(title="pointraster", version=__version__)
    cache = _CloudCache()

    def _load(input_model: InputModel):
        try:
            return cache.get(input_model.as_source())
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (CloudFormatError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__,
                              default_workers=default_workers())

    @app.post("/render")
    def render_endpoint(req: RenderRequest):
        cloud, _ = _load(req.input)
        try:
            ordered = apply_ordering(cloud, _ordering(req.ordering))
            view = _viewpoint(req.viewpoint, cloud).camera(req.width, req.height)
            frame = render_frame(req.method, ordered, view,
                                 workers=req.workers, epsilon=req.epsilon,
                                 background=req.background,
                                 want_depth=req.channel == "depth")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        image = frame.depth_image if req.channel == "depth" else frame.image
        counters = frame.counters
        headers = {
            "X-Pointraster-Candidates": str(counters.candidate_points),
            "X-Pointraster-Min-Calls": str(counters.min_calls),
            "X-Pointraster-Add-Calls": str(counters.add_calls),
            "X-Pointraster-Exchange-Calls": str(counters.exchange_calls),
        }
        return Response(content=ppm_bytes(image), media_type=PPM_MEDIA_TYPE,
                        headers=headers)

    @app.post("/stats", response_model=StatsResponse)
    def stats_endpoint(req: StatsRequest):
        cloud, _ = _load(req.input)
        try:
            view = _viewpoint(req.viewpoint, cloud).camera(req.width, req.height)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        hist = fragment_histogram(cloud, view, req.threshold)
        return StatsResponse(
            width=hist.width, height=hist.height, total=hist.total,
            max_count=hist.max_count, mean_count=hist.mean_count,
            threshold=hist.threshold,
            pixels_over_threshold=hist.pixels_over_threshold,
        )

    @app.post("/heatmap")
    def heatmap_endpoint(req: StatsRequest):
        cloud, _ = _load(req.input)
        try:
            view = _viewpoint(req.viewpoint, cloud).camera(req.width, req.height)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        hist = fragment_histogram(cloud, view, req.threshold)
        image = heatmap_image(hist.counts, hist.width, hist.height)
        return Response(content=ppm_bytes(image), media_type=PPM_MEDIA_TYPE)

    @app.post("/order")
    def order_endpoint(req: OrderRequest):
        cloud, label = _load(req.input)
        try:
            spec = _ordering(req.ordering)
            ordered = apply_ordering(cloud, spec)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        comment = (f"ordering={spec.kind} seed={spec.seed} "
                   f"batch_size={spec.batch_size} input={label}")
        return Response(content=bin_bytes(ordered, comment=comment),
                        media_type="application/octet-stream")

    @app.post("/bench", response_model=BenchResponse)
    def bench_endpoint(req: BenchRequest):
        config = BenchConfig(
            input=req.input.as_source(),
            methods=list(req.methods),
            orderings=[_ordering(o) for o in req.orderings],
            viewpoints=[Viewpoint(**v.model_dump()) for v in req.viewpoints]
            if req.viewpoints else None,
            width=req.width, height=req.height, frames=req.frames,
            warmup=req.warmup, workers=req.workers, epsilon=req.epsilon,
            measure_seconds=req.measure_seconds,
        )
        try:
            config.validate()
            result = run_benchmark(config)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except BenchmarkError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        except (CloudFormatError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return BenchResponse(
            input=result.input_label,
            records=[BenchRecordModel(**asdict(r)) for r in result.records],
            csv=result.csv,
            ordering_seconds=result.ordering_seconds,
        )

    return app


app = create_app()
