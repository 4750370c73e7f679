"""Extraction pipeline: frames plus regions in, feature pack out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExtractorConfig
from .errors import ExtractorError
from .frames import FrameSet, load_frame, scan_frames
from .model import RegionScorer
from .regions import RegionSpec, check_bounds


@dataclass(frozen=True)
class Extraction:
    """In-memory result of one extraction run, ready to be written as a pack.

    Record order matches the input region order; row i of ``features`` and of
    every score matrix belongs to ``records[i]``.
    """

    records: tuple[RegionSpec, ...]
    features: np.ndarray
    scores: dict[str, np.ndarray]
    frame_sizes: dict[str, tuple[int, int]]
    tasks: dict[str, tuple[str, ...]]


def extract(
    frames: FrameSet | str,
    regions: list[RegionSpec],
    config: ExtractorConfig,
    scorer: RegionScorer | None = None,
) -> Extraction:
    """Score every region and return the assembled extraction.

    ``frames`` is a frame directory path or an already scanned
    :class:`FrameSet`.  Every region must name a discovered frame and lie
    inside it.  An already built ``scorer`` can be passed to reuse backbone
    weights across runs; it must have been built from ``config``.
    """
    config.validate()
    if not isinstance(frames, FrameSet):
        frames = scan_frames(frames)
    if not regions:
        raise ExtractorError("no regions to extract")
    for region in regions:
        path = frames.path_for(region.video_id, region.frame_index)
        check_bounds(region, frames.sizes[region.video_id])
        del path
    if scorer is None:
        scorer = RegionScorer(config)

    feature_rows: list[np.ndarray] = []
    score_rows: dict[str, list[np.ndarray]] = {task: [] for task in config.tasks}
    pending: list = []

    def flush() -> None:
        if not pending:
            return
        features, scores = scorer.score_batch(pending)
        feature_rows.append(features)
        for task in config.tasks:
            score_rows[task].append(scores[task])
        pending.clear()

    # One frame is decoded at a time; regions arriving in frame order never
    # reload an image.
    cached_key: tuple[str, int] | None = None
    cached_frame = None
    for region in regions:
        key = (region.video_id, region.frame_index)
        if key != cached_key:
            cached_frame = load_frame(frames.path_for(*key))
            cached_key = key
        pending.append(scorer.prepare_crop(cached_frame, region.box))
        if len(pending) >= config.batch_size:
            flush()
    flush()

    features = np.concatenate(feature_rows, axis=0)
    scores = {task: np.concatenate(rows, axis=0) for task, rows in score_rows.items()}
    used_videos = {region.video_id for region in regions}
    frame_sizes = {video: frames.sizes[video] for video in sorted(used_videos)}
    return Extraction(
        records=tuple(regions),
        features=features,
        scores=scores,
        frame_sizes=frame_sizes,
        tasks=dict(config.tasks),
    )
