"""Region proposals: file format and grid synthesis.

A regions file is JSON lines, one object per region with keys ``video_id``,
``frame_index``, and ``box`` as [x, y, width, height] in pixels.  The file
order is preserved; it becomes the record order of the extracted pack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ExtractorError
from .frames import FrameSet


@dataclass(frozen=True)
class RegionSpec:
    video_id: str
    frame_index: int
    box: tuple[float, float, float, float]


def _parse_region(raw: dict, where: str) -> RegionSpec:
    if not isinstance(raw, dict):
        raise ExtractorError(f"{where}: region must be a JSON object")
    missing = [key for key in ("video_id", "frame_index", "box") if key not in raw]
    if missing:
        raise ExtractorError(f"{where}: missing keys: {', '.join(missing)}")
    unknown = sorted(set(raw) - {"video_id", "frame_index", "box"})
    if unknown:
        raise ExtractorError(f"{where}: unknown keys: {', '.join(unknown)}")
    video_id = raw["video_id"]
    if not isinstance(video_id, str) or not video_id:
        raise ExtractorError(f"{where}: video_id must be a non-empty string")
    frame_index = raw["frame_index"]
    if isinstance(frame_index, bool) or not isinstance(frame_index, int):
        raise ExtractorError(f"{where}: frame_index must be an integer")
    if frame_index < 0:
        raise ExtractorError(f"{where}: frame_index must be non-negative")
    box = raw["box"]
    if (
        not isinstance(box, (list, tuple))
        or len(box) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)
    ):
        raise ExtractorError(f"{where}: box must be [x, y, width, height]")
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ExtractorError(f"{where}: box width and height must be positive")
    if x < 0 or y < 0:
        raise ExtractorError(f"{where}: box origin must be non-negative")
    return RegionSpec(video_id=video_id, frame_index=frame_index, box=(x, y, w, h))


def read_regions(path) -> list[RegionSpec]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise ExtractorError(f"cannot read regions file {path}: {exc}") from None
    regions: list[RegionSpec] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{number}"
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExtractorError(f"{where}: not valid JSON: {exc}") from None
        regions.append(_parse_region(raw, where))
    if not regions:
        raise ExtractorError(f"regions file {path} holds no regions")
    return regions


def write_regions(path, regions) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for region in regions:
            row = {
                "video_id": region.video_id,
                "frame_index": region.frame_index,
                "box": list(region.box),
            }
            handle.write(json.dumps(row, sort_keys=True) + "\n")


def check_bounds(region: RegionSpec, frame_size: tuple[int, int]) -> None:
    """Reject a region that reaches outside its frame."""
    width, height = frame_size
    x, y, w, h = region.box
    if x + w > width or y + h > height:
        raise ExtractorError(
            f"region box {list(region.box)} for video {region.video_id!r} frame "
            f"{region.frame_index} exceeds the {width}x{height} frame"
        )


def synth_regions(frames: FrameSet, grid: int) -> list[RegionSpec]:
    """Cover every discovered frame with a ``grid`` x ``grid`` array of equal
    boxes, row-major within each frame.

    A 4x4 grid over a 400x400 frame yields sixteen 100x100 boxes.
    """
    if grid < 1:
        raise ExtractorError(f"grid density must be at least 1, got {grid}")
    regions: list[RegionSpec] = []
    for video_id, frame_index in sorted(frames.paths):
        width, height = frames.sizes[video_id]
        cell_w = width / grid
        cell_h = height / grid
        for row in range(grid):
            for col in range(grid):
                regions.append(
                    RegionSpec(
                        video_id=video_id,
                        frame_index=frame_index,
                        box=(col * cell_w, row * cell_h, cell_w, cell_h),
                    )
                )
    return regions
