"""Benchmark harness: matrix shape, CSV schema, correctness gating."""

import numpy as np
import pytest

from pointraster.bench import (
    CSV_COLUMNS,
    BenchConfig,
    BenchmarkError,
    Viewpoint,
    auto_viewpoint,
    load_input,
    parse_input_token,
    render_frame,
    run_benchmark,
)
from pointraster.io import SceneSpec, generate_scene, write_bin
from pointraster.ordering import OrderingSpec
from pointraster.raster import fragment_histogram

from helpers import cloud_at_pixels

SCENE = {"scene": {"kind": "uniform_cube", "n": 8000, "seed": 1}}


def _config(**overrides):
    base = dict(input=SCENE, methods=["atomic_min"],
                orderings=[OrderingSpec("original")], width=48, height=48,
                frames=2, warmup=1, workers=2)
    base.update(overrides)
    return BenchConfig(**base)


class TestMatrix:
    def test_cardinality_two_by_two_by_one(self):
        config = _config(methods=["atomic_min", "early_z"],
                         orderings=[OrderingSpec("original"),
                                    OrderingSpec("morton")])
        result = run_benchmark(config)
        assert len(result.records) == 4
        # stable ordering: methods, then orderings, then viewpoints
        assert [(r.method, r.ordering) for r in result.records] == [
            ("atomic_min", "original"), ("atomic_min", "morton"),
            ("early_z", "original"), ("early_z", "morton")]

    def test_viewpoints_multiply_the_rows(self):
        cloud, _ = load_input(SCENE)
        vps = [auto_viewpoint(cloud, "near"), auto_viewpoint(cloud, "far")]
        result = run_benchmark(_config(viewpoints=vps))
        assert [r.viewpoint for r in result.records] == ["near", "far"]

    def test_candidates_column_equals_histogram_total(self):
        config = _config()
        result = run_benchmark(config)
        cloud, _ = load_input(SCENE)
        view = auto_viewpoint(cloud).camera(48, 48)
        assert result.records[0].candidates == \
            fragment_histogram(cloud, view).total

    def test_points_per_second_identity(self):
        record = run_benchmark(_config()).records[0]
        assert record.points_per_sec == pytest.approx(
            record.candidates / (record.mean_ms / 1000.0))

    def test_rerun_reproduces_results_but_not_timings(self):
        config = _config(methods=["atomic_min", "hqs"])
        a = run_benchmark(config)
        b = run_benchmark(config)
        assert [r.correct for r in a.records] == [r.correct for r in b.records]
        assert [r.candidates for r in a.records] == \
            [r.candidates for r in b.records]
        assert [r.min_calls for r in a.records][0] == \
            [r.min_calls for r in b.records][0]  # atomic_min is exact


class TestCsv:
    def test_header_is_exactly_the_contract(self):
        result = run_benchmark(_config())
        header = result.csv.splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        assert ",".join(CSV_COLUMNS) == (
            "method,ordering,viewpoint,mean_ms,median_ms,min_ms,"
            "points_per_sec,candidates,min_calls,add_calls,exchange_calls,"
            "correct")

    def test_one_row_per_record_plus_header(self):
        result = run_benchmark(_config(methods=["atomic_min", "dedup"]))
        assert len(result.csv.splitlines()) == 3
        assert result.csv.splitlines()[1].startswith("atomic_min,original,")
        for line in result.csv.splitlines()[1:]:
            assert line.endswith(",true")


class TestCorrectnessGate:
    def test_just_set_is_flagged_untestable(self):
        result = run_benchmark(_config(methods=["just_set"]))
        assert result.records[0].correct == "untestable"

    def test_overflowing_hqs1x_aborts_the_run(self, tmp_path):
        # 2000 points in one pixel wrap the 10-bit counter; the harness must
        # refuse to report the row rather than time a wrong image
        cloud = cloud_at_pixels([(4, 4)] * 2000, [1.0] * 2000,
                                [(100, 100, 100)] * 2000, 8, 8)
        path = tmp_path / "hot.bin"
        write_bin(cloud, path)
        vp = Viewpoint(name="front", eye=(0, 0, 0), target=(0, 0, 1),
                       fovy_deg=90.0)
        config = _config(input=str(path), methods=["hqs1x"], width=8,
                         height=8, viewpoints=[vp], frames=1, warmup=0)
        with pytest.raises(BenchmarkError, match="hqs1x"):
            run_benchmark(config)

    def test_hqs_rows_validate_against_the_blend_reference(self):
        result = run_benchmark(_config(methods=["hqs", "hqs1r"]))
        assert all(r.correct == "true" for r in result.records)


class TestConfig:
    def test_unknown_method_rejected_before_running(self):
        with pytest.raises(ValueError, match="unknown method"):
            _config(methods=["cleverest"]).validate()

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError, match="size"):
            _config(width=0).validate()

    def test_missing_input_file(self):
        with pytest.raises(FileNotFoundError):
            run_benchmark(_config(input="/nonexistent/cloud.bin"))

    def test_from_json_with_overrides(self):
        config = BenchConfig.from_json({
            "input": SCENE,
            "methods": ["early_z"],
            "orderings": ["morton", {"kind": "shuffled", "seed": 5}],
            "frames": 4,
            "width": 32, "height": 32,
        })
        assert config.frames == 4
        assert config.orderings[1].seed == 5
        run_benchmark(config)

    def test_measure_seconds_window_mode(self):
        result = run_benchmark(_config(measure_seconds=0.05, frames=1))
        assert result.records[0].mean_ms > 0

    def test_ordering_time_reported_separately(self):
        result = run_benchmark(_config(orderings=[OrderingSpec("morton")]))
        assert "morton" in result.ordering_seconds
        assert result.ordering_seconds["morton"] >= 0


class TestFrames:
    def test_render_frame_depth_channel(self):
        cloud = generate_scene(SceneSpec("sphere_surface", 5000, seed=2))
        view = auto_viewpoint(cloud).camera(32, 32)
        frame = render_frame("atomic_min", cloud, view, workers=1,
                             want_depth=True)
        assert frame.image.shape == (32, 32, 3)
        assert frame.depth_image.shape == (32, 32, 3)
        assert frame.counters.candidate_points > 0

    def test_render_frame_rejects_unknown_method(self):
        cloud = generate_scene(SceneSpec("sphere_surface", 100, seed=2))
        view = auto_viewpoint(cloud).camera(16, 16)
        with pytest.raises(ValueError):
            render_frame("magic", cloud, view)

    def test_parse_input_token(self):
        assert parse_input_token("terrain:n=100,seed=3,extent=9.5") == \
            {"scene": {"kind": "terrain", "n": 100, "seed": 3, "extent": 9.5}}
        assert parse_input_token("clouds/a.ply") == {"path": "clouds/a.ply"}
        with pytest.raises(ValueError):
            parse_input_token("terrain:points=5")
