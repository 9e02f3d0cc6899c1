"""Pydantic request/response models for the render service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, model_validator

from ..bench import ALL_METHODS, DEFAULT_SIZE
from ..io import SCENE_KINDS
from ..ordering import ORDERING_KINDS


class SceneModel(BaseModel):
    kind: str
    n: int = Field(ge=0)
    seed: int = 0
    extent: float = Field(default=2.0, gt=0)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"kind must be one of {SCENE_KINDS}")
        return self


class InputModel(BaseModel):
    """Either a server-side file path or an inline synthetic scene."""

    path: Optional[str] = None
    scene: Optional[SceneModel] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.path is None) == (self.scene is None):
            raise ValueError("provide exactly one of 'path' or 'scene'")
        return self

    def as_source(self) -> dict:
        if self.scene is not None:
            return {"scene": self.scene.model_dump()}
        return {"path": self.path}


class OrderingModel(BaseModel):
    kind: str = "original"
    seed: int = 0
    batch_size: int = Field(default=128, ge=1)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind not in ORDERING_KINDS:
            raise ValueError(f"kind must be one of {ORDERING_KINDS}")
        return self


class ViewpointModel(BaseModel):
    name: str = "view"
    eye: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fovy_deg: float = Field(default=60.0, gt=0, lt=180)
    near: float = Field(default=0.05, gt=0)
    far: float = 1000.0


class RenderRequest(BaseModel):
    input: InputModel
    method: str = "atomic_min"
    ordering: OrderingModel = OrderingModel()
    viewpoint: Optional[ViewpointModel] = None  # None: auto-framed
    width: int = Field(default=DEFAULT_SIZE[0], ge=1)
    height: int = Field(default=DEFAULT_SIZE[1], ge=1)
    workers: Optional[int] = Field(default=None, ge=1)
    epsilon: float = Field(default=1.01, ge=1.0)
    background: tuple[int, int, int] = (0, 0, 0)
    channel: str = "color"  # or "depth"

    @model_validator(mode="after")
    def _check(self):
        if self.method not in ALL_METHODS:
            raise ValueError(f"method must be one of {ALL_METHODS}")
        if self.channel not in ("color", "depth"):
            raise ValueError("channel must be 'color' or 'depth'")
        return self


class StatsRequest(BaseModel):
    input: InputModel
    viewpoint: Optional[ViewpointModel] = None
    width: int = Field(default=DEFAULT_SIZE[0], ge=1)
    height: int = Field(default=DEFAULT_SIZE[1], ge=1)
    threshold: int = Field(default=10_000, ge=0)


class StatsResponse(BaseModel):
    width: int
    height: int
    total: int
    max_count: int
    mean_count: float
    threshold: int
    pixels_over_threshold: int


class OrderRequest(BaseModel):
    input: InputModel
    ordering: OrderingModel = OrderingModel()


class BenchRequest(BaseModel):
    input: InputModel
    methods: list[str] = ["atomic_min"]
    orderings: list[OrderingModel] = [OrderingModel()]
    viewpoints: Optional[list[ViewpointModel]] = None
    width: int = Field(default=DEFAULT_SIZE[0], ge=1)
    height: int = Field(default=DEFAULT_SIZE[1], ge=1)
    frames: int = Field(default=20, ge=1)
    warmup: int = Field(default=3, ge=0)
    workers: Optional[int] = Field(default=None, ge=1)
    epsilon: float = Field(default=1.01, ge=1.0)
    measure_seconds: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_methods(self):
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"method must be one of {ALL_METHODS}")
        return self


class BenchRecordModel(BaseModel):
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


class BenchResponse(BaseModel):
    input: str
    records: list[BenchRecordModel]
    csv: str
    ordering_seconds: dict[str, float]


class HealthResponse(BaseModel):
    status: str
    version: str
    default_workers: int
