"""pointraster: a parallel software point-cloud rasterizer.

Closest-point rendering into a packed 64-bit depth|color framebuffer via
lock-free atomic minimum, with warp-style lane-group reductions, two-pass
high-quality blending, Morton/shuffle vertex orderings, deterministic scene
generators and a benchmark harness.  A FastAPI service and a thin CLI client
sit on top of the library.
"""

__version__ = "0.1.0"

from .core import (
    AtomicOpCounters,
    CameraView,
    PackedFramebuffer64,
    PointCloud,
    build_camera,
    decode_point64,
    encode_point64,
    project_to_pixel,
    resolve_basic,
    resolve_depth,
)
from .hqs import (
    DepthBuffer32,
    HqsAccumulator,
    Hqs1rAccumulator,
    Hqs1xAccumulator,
    HqsParams,
    color_pass_hqs,
    color_pass_hqs1r,
    color_pass_hqs1x,
    depth_pass,
    render_hqs,
    resolve_hqs,
    resolve_hqs1r,
    resolve_hqs1x,
)
from .io import SceneSpec, generate_scene, read_bin, read_ply, write_bin, write_ply, write_ppm
from .ordering import (
    OrderingSpec,
    apply_permutation,
    morton_decode21,
    morton_encode21,
    quantize_to_grid,
    shuffle,
    shuffle_morton,
    sort_morton,
)
from .raster import RenderMethod, fragment_histogram, render
from .bench import BenchConfig, Viewpoint, run_benchmark

__all__ = [
    "__version__",
    "AtomicOpCounters", "CameraView", "PackedFramebuffer64", "PointCloud",
    "build_camera", "decode_point64", "encode_point64", "project_to_pixel",
    "resolve_basic", "resolve_depth",
    "DepthBuffer32", "HqsAccumulator", "Hqs1rAccumulator", "Hqs1xAccumulator",
    "HqsParams", "color_pass_hqs", "color_pass_hqs1r", "color_pass_hqs1x",
    "depth_pass", "render_hqs", "resolve_hqs", "resolve_hqs1r", "resolve_hqs1x",
    "SceneSpec", "generate_scene", "read_bin", "read_ply", "write_bin",
    "write_ply", "write_ppm",
    "OrderingSpec", "apply_permutation", "morton_decode21", "morton_encode21",
    "quantize_to_grid", "shuffle", "shuffle_morton", "sort_morton",
    "RenderMethod", "fragment_histogram", "render",
    "BenchConfig", "Viewpoint", "run_benchmark",
]
