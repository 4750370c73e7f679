"""Frame image discovery and loading.

A frame directory holds one subdirectory per video, named by the video id.
Each file inside is one frame named by its integer frame index plus an image
extension, for example ``frames/cam0/17.png``.  Every frame of a video must
share one pixel geometry because region boxes are checked against a single
width and height per video.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .errors import ExtractorError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class FrameSet:
    """Index of the discovered frame images.

    ``paths`` maps (video_id, frame_index) to the image file and ``sizes``
    maps video_id to its (width, height).
    """

    paths: dict[tuple[str, int], Path]
    sizes: dict[str, tuple[int, int]]

    def path_for(self, video_id: str, frame_index: int) -> Path:
        key = (video_id, frame_index)
        if key not in self.paths:
            raise ExtractorError(
                f"no frame image for video {video_id!r} frame {frame_index}"
            )
        return self.paths[key]


def _probe_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as image:
            return image.size
    except (OSError, UnidentifiedImageError) as exc:
        raise ExtractorError(f"cannot read frame image {path}: {exc}") from None


def scan_frames(frames_dir) -> FrameSet:
    """Index the frame images under ``frames_dir``.

    Files whose stem is not a non-negative integer or whose suffix is not a
    known image extension are rejected rather than skipped, so a typo in a
    frame name fails loudly instead of silently dropping data.
    """
    root = Path(frames_dir)
    if not root.is_dir():
        raise ExtractorError(f"frames directory {root} does not exist")
    paths: dict[tuple[str, int], Path] = {}
    sizes: dict[str, tuple[int, int]] = {}
    for video_dir in sorted(entry for entry in root.iterdir() if entry.is_dir()):
        video_id = video_dir.name
        for file in sorted(entry for entry in video_dir.iterdir() if entry.is_file()):
            if file.suffix.lower() not in IMAGE_SUFFIXES:
                raise ExtractorError(
                    f"unexpected file {file} in frames directory: frame images "
                    f"must use one of {', '.join(IMAGE_SUFFIXES)}"
                )
            if not file.stem.isdigit():
                raise ExtractorError(
                    f"frame file {file} is not named by a frame index"
                )
            index = int(file.stem)
            size = _probe_size(file)
            if video_id in sizes and sizes[video_id] != size:
                raise ExtractorError(
                    f"video {video_id!r} mixes frame sizes "
                    f"{sizes[video_id]} and {size} ({file})"
                )
            sizes.setdefault(video_id, size)
            paths[(video_id, index)] = file
    if not paths:
        raise ExtractorError(f"no frame images found under {root}")
    return FrameSet(paths=paths, sizes=sizes)


def load_frame(path) -> Image.Image:
    """Load a frame as an RGB image, raising :class:`ExtractorError` if the
    file is missing or not decodable."""
    try:
        with Image.open(path) as image:
            return image.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        raise ExtractorError(f"cannot read frame image {path}: {exc}") from None
