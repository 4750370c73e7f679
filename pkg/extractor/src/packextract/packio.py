"""Feature pack writer.

Serializes an extraction result into the on-disk pack layout consumed by the
detection tooling: ``manifest.json`` describing geometry and tasks,
``records.jsonl`` with one region per line, ``features.bin`` holding row-major
little-endian float32 feature vectors, and one ``scores_<task>.bin`` per task
with the matching score rows.  Offsets in the records point at rows of those
matrices.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = "1.0"


def _matrix_bytes(matrix: np.ndarray) -> bytes:
    return np.ascontiguousarray(matrix, dtype="<f4").tobytes()


def write_pack(path, extraction) -> Path:
    """Write an :class:`~packextract.extract.Extraction` to ``path``.

    The directory is created if needed.  Returns the pack path.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n = len(extraction.records)
    manifest = {
        "format_version": FORMAT_VERSION,
        "feature_dim": int(extraction.features.shape[1]),
        "record_count": n,
        "frame_sizes": {
            video: [int(w), int(h)]
            for video, (w, h) in sorted(extraction.frame_sizes.items())
        },
        "tasks": [
            {"name": task, "categories": list(categories)}
            for task, categories in extraction.tasks.items()
        ],
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    with open(root / "records.jsonl", "w", encoding="utf-8") as handle:
        for offset, region in enumerate(extraction.records):
            row = {
                "video_id": region.video_id,
                "frame_index": region.frame_index,
                "box": list(region.box),
                "feature_offset": offset,
                "score_offsets": {task: offset for task in extraction.tasks},
            }
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    with open(root / "features.bin", "wb") as handle:
        handle.write(_matrix_bytes(extraction.features))
    for task in extraction.tasks:
        with open(root / f"scores_{task}.bin", "wb") as handle:
            handle.write(_matrix_bytes(extraction.scores[task]))
    return root
