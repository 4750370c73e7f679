"""Unit tests for configuration, region handling, and the extraction loop."""

import json

import numpy as np
import pytest
from PIL import Image

from packextract import (
    ExtractorConfig,
    ExtractorError,
    RegionSpec,
    extract,
    read_regions,
    scan_frames,
    synth_regions,
    write_pack,
    write_regions,
)
from packextract.model import RegionScorer

TASKS = {"object": ("person", "car", "tree"), "action": ("walking", "standing")}


def make_frames(root, videos):
    """Write seeded noise PNGs: videos maps video_id to (count, width, height)."""
    rng = np.random.Generator(np.random.PCG64(77))
    for video_id, (count, width, height) in videos.items():
        video_dir = root / video_id
        video_dir.mkdir(parents=True)
        for index in range(count):
            pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(video_dir / f"{index}.png")


@pytest.fixture(scope="module")
def scorer():
    config = ExtractorConfig(tasks=TASKS, batch_size=4)
    return RegionScorer(config)


@pytest.fixture(scope="module")
def frames_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("frames")
    make_frames(root, {"cam0": (2, 64, 48)})
    return root


class TestConfig:
    def test_from_json_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(
            json.dumps({"tasks": {"object": ["a", "b"]}, "seed": 3, "batch_size": 2})
        )
        config = ExtractorConfig.from_json(path)
        assert config.tasks == {"object": ("a", "b")}
        assert config.seed == 3
        assert config.batch_size == 2
        assert config.backbone == "alexnet"
        assert config.feature_dim == 4096

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"tasks": {"t": ["a"]}, "bogus": 1}))
        with pytest.raises(ExtractorError, match="bogus"):
            ExtractorConfig.from_json(path)

    def test_tasks_required(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 1}))
        with pytest.raises(ExtractorError, match="tasks"):
            ExtractorConfig.from_json(path)

    def test_empty_categories_rejected(self):
        with pytest.raises(ExtractorError, match="categories"):
            ExtractorConfig(tasks={"object": ()}).validate()

    def test_duplicate_category_rejected(self):
        with pytest.raises(ExtractorError, match="twice"):
            ExtractorConfig(tasks={"object": ("a", "a")}).validate()

    def test_unknown_backbone_rejected(self):
        with pytest.raises(ExtractorError, match="backbone"):
            ExtractorConfig(tasks=TASKS, backbone="resnet99").validate()

    def test_bad_batch_size_rejected(self):
        with pytest.raises(ExtractorError, match="batch_size"):
            ExtractorConfig(tasks=TASKS, batch_size=0).validate()

    def test_declared_dim_mismatch_rejected(self):
        with pytest.raises(ExtractorError, match="feature_dim"):
            ExtractorConfig(tasks=TASKS, feature_dim=123).validate()

    def test_unknown_layer_fails_at_build(self):
        config = ExtractorConfig(tasks=TASKS, layer="classifier.99", feature_dim=4096)
        with pytest.raises(ExtractorError, match="classifier.99"):
            RegionScorer(config)


class TestFrames:
    def test_scan_finds_sizes_and_paths(self, frames_dir):
        frames = scan_frames(frames_dir)
        assert frames.sizes == {"cam0": (64, 48)}
        assert set(frames.paths) == {("cam0", 0), ("cam0", 1)}

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ExtractorError, match="does not exist"):
            scan_frames(tmp_path / "nope")

    def test_unreadable_frame_names_the_file(self, tmp_path):
        bad = tmp_path / "cam0"
        bad.mkdir()
        target = bad / "0.png"
        target.write_text("not an image")
        with pytest.raises(ExtractorError, match=str(target)):
            scan_frames(tmp_path)

    def test_stray_file_rejected(self, tmp_path):
        make_frames(tmp_path, {"cam0": (1, 16, 16)})
        (tmp_path / "cam0" / "notes.txt").write_text("x")
        with pytest.raises(ExtractorError, match="notes.txt"):
            scan_frames(tmp_path)

    def test_mixed_sizes_rejected(self, tmp_path):
        make_frames(tmp_path, {"cam0": (1, 16, 16)})
        pixels = np.zeros((8, 16, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(tmp_path / "cam0" / "1.png")
        with pytest.raises(ExtractorError, match="mixes frame sizes"):
            scan_frames(tmp_path)


class TestRegions:
    def test_grid_geometry(self, tmp_path):
        make_frames(tmp_path, {"cam0": (1, 400, 400)})
        regions = synth_regions(scan_frames(tmp_path), 4)
        assert len(regions) == 16
        for region in regions:
            x, y, w, h = region.box
            assert (w, h) == (100.0, 100.0)
            assert x in {0.0, 100.0, 200.0, 300.0}
            assert y in {0.0, 100.0, 200.0, 300.0}
        assert len({region.box for region in regions}) == 16

    def test_grid_covers_every_frame(self, frames_dir):
        regions = synth_regions(scan_frames(frames_dir), 2)
        assert len(regions) == 2 * 4
        for region in regions:
            x, y, w, h = region.box
            assert (w, h) == (32.0, 24.0)
            assert x + w <= 64 and y + h <= 48

    def test_round_trip(self, tmp_path, frames_dir):
        regions = synth_regions(scan_frames(frames_dir), 2)
        path = tmp_path / "regions.jsonl"
        write_regions(path, regions)
        assert read_regions(path) == regions

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "regions.jsonl"
        path.write_text('{"video_id": "v", "frame_index": 0, "box": [0, 0, 1, 1]}\nnot json\n')
        with pytest.raises(ExtractorError, match=":2"):
            read_regions(path)

    def test_negative_box_rejected(self, tmp_path):
        path = tmp_path / "regions.jsonl"
        path.write_text('{"video_id": "v", "frame_index": 0, "box": [-1, 0, 1, 1]}\n')
        with pytest.raises(ExtractorError, match="non-negative"):
            read_regions(path)

    def test_zero_size_box_rejected(self, tmp_path):
        path = tmp_path / "regions.jsonl"
        path.write_text('{"video_id": "v", "frame_index": 0, "box": [0, 0, 0, 1]}\n')
        with pytest.raises(ExtractorError, match="positive"):
            read_regions(path)


class TestExtract:
    def test_two_frames_three_regions_each(self, frames_dir, scorer):
        regions = [
            RegionSpec("cam0", frame, box)
            for frame in (0, 1)
            for box in ((0.0, 0.0, 32.0, 24.0), (32.0, 0.0, 32.0, 24.0), (0.0, 24.0, 64.0, 24.0))
        ]
        result = extract(frames_dir, regions, scorer.config, scorer=scorer)
        assert len(result.records) == 6
        assert result.features.shape == (6, 4096)
        assert result.features.dtype == np.float32
        assert np.all(np.isfinite(result.features))
        for task, categories in TASKS.items():
            scores = result.scores[task]
            assert scores.shape == (6, len(categories))
            assert np.all(scores >= 0.0) and np.all(scores <= 1.0)
        assert result.frame_sizes == {"cam0": (64, 48)}

    def test_record_order_follows_input(self, frames_dir, scorer):
        regions = [
            RegionSpec("cam0", 1, (0.0, 0.0, 16.0, 16.0)),
            RegionSpec("cam0", 0, (0.0, 0.0, 16.0, 16.0)),
        ]
        result = extract(frames_dir, regions, scorer.config, scorer=scorer)
        assert result.records == tuple(regions)
        # Different frames, same box: the rows must differ.
        assert not np.array_equal(result.features[0], result.features[1])

    def test_identical_runs_identical_bytes(self, frames_dir):
        config = ExtractorConfig(tasks=TASKS, batch_size=4)
        regions = [
            RegionSpec("cam0", 0, (0.0, 0.0, 32.0, 24.0)),
            RegionSpec("cam0", 0, (16.0, 8.0, 32.0, 24.0)),
            RegionSpec("cam0", 1, (0.0, 0.0, 64.0, 48.0)),
        ]
        first = extract(frames_dir, regions, config)
        second = extract(frames_dir, regions, config)
        assert first.features.tobytes() == second.features.tobytes()
        for task in TASKS:
            assert first.scores[task].tobytes() == second.scores[task].tobytes()

    def test_batch_size_does_not_change_rows(self, frames_dir):
        regions = [
            RegionSpec("cam0", 0, (0.0, 0.0, 32.0, 24.0)),
            RegionSpec("cam0", 0, (16.0, 8.0, 32.0, 24.0)),
            RegionSpec("cam0", 1, (0.0, 0.0, 64.0, 48.0)),
        ]
        one = extract(frames_dir, regions, ExtractorConfig(tasks=TASKS, batch_size=1))
        three = extract(frames_dir, regions, ExtractorConfig(tasks=TASKS, batch_size=3))
        assert np.allclose(one.features, three.features, atol=1e-5)

    def test_out_of_bounds_region_rejected(self, frames_dir, scorer):
        regions = [RegionSpec("cam0", 0, (40.0, 0.0, 32.0, 24.0))]
        with pytest.raises(ExtractorError, match="exceeds"):
            extract(frames_dir, regions, scorer.config, scorer=scorer)

    def test_unknown_frame_rejected(self, frames_dir, scorer):
        regions = [RegionSpec("cam0", 9, (0.0, 0.0, 16.0, 16.0))]
        with pytest.raises(ExtractorError, match="frame 9"):
            extract(frames_dir, regions, scorer.config, scorer=scorer)

    def test_unknown_video_rejected(self, frames_dir, scorer):
        regions = [RegionSpec("cam9", 0, (0.0, 0.0, 16.0, 16.0))]
        with pytest.raises(ExtractorError, match="cam9"):
            extract(frames_dir, regions, scorer.config, scorer=scorer)


class TestPackWriter:
    def test_written_layout(self, tmp_path, frames_dir, scorer):
        regions = synth_regions(scan_frames(frames_dir), 2)
        result = extract(frames_dir, regions, scorer.config, scorer=scorer)
        pack = write_pack(tmp_path / "pack", result)
        names = sorted(p.name for p in pack.iterdir())
        assert names == [
            "features.bin",
            "manifest.json",
            "records.jsonl",
            "scores_action.bin",
            "scores_object.bin",
        ]
        manifest = json.loads((pack / "manifest.json").read_text())
        assert manifest["format_version"] == "1.0"
        assert manifest["feature_dim"] == 4096
        assert manifest["record_count"] == 8
        assert manifest["frame_sizes"] == {"cam0": [64, 48]}
        assert {t["name"] for t in manifest["tasks"]} == {"object", "action"}
        rows = [
            json.loads(line)
            for line in (pack / "records.jsonl").read_text().splitlines()
        ]
        assert [row["feature_offset"] for row in rows] == list(range(8))
        for row in rows:
            assert set(row["score_offsets"]) == {"object", "action"}
        raw = np.frombuffer((pack / "features.bin").read_bytes(), dtype="<f4")
        assert raw.size == 8 * 4096
        assert np.array_equal(raw.reshape(8, 4096), result.features)
