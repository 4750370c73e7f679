"""On-disk feature pack format.

A pack is a directory holding region features and concept classification
scores extracted by some upstream system, plus optional ground truth:

    manifest.json       format version, dimensions, frame sizes, task specs
    records.jsonl       one region record per line
    features.bin        n x feature_dim float32, row-major, little-endian
    scores_<task>.bin   n x |categories(task)| float32, same layout
    labels.jsonl        optional; region entries and frame entries

The binary files carry no header: their byte size must equal exactly
rows * cols * 4. Region records address matrix rows through explicit
offsets, so a pack may order records independently of row storage.

Masks in frame labels are run-length encoded row-major over the full
frame, alternating run lengths starting with a run of zeros.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

FORMAT_VERSION = "1.0"

# Score values may stray past [0, 1] by at most this much before the pack
# is rejected; the writer clamps such excursions, the reader keeps bytes
# untouched so round trips stay bit-exact.
SCORE_TOL = 1e-6

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"
FEATURES_NAME = "features.bin"
LABELS_NAME = "labels.jsonl"


def scores_name(task: str) -> str:
    return f"scores_{task}.bin"


@dataclass(frozen=True)
class ConceptTaskSpec:
    """A concept classification task: a name and its category vocabulary."""

    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        if not self.name:
            raise ValidationError("task name must be non-empty")
        if not self.categories:
            raise ValidationError(f"task {self.name!r} has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValidationError(f"task {self.name!r} has duplicate categories")

    def category_index(self, category: str) -> int:
        try:
            return self.categories.index(category)
        except ValueError:
            raise ValidationError(
                f"unknown category {category!r} for task {self.name!r}"
            ) from None


@dataclass(frozen=True)
class RegionRecord:
    """One detected region: where it is and which matrix rows describe it."""

    video_id: str
    frame_index: int
    box: tuple[float, float, float, float]  # x, y, w, h in pixels
    feature_offset: int
    score_offsets: dict[str, int]


@dataclass(frozen=True)
class RegionLabel:
    """Ground truth for one region record."""

    record_index: int
    abnormal: bool | None
    categories: dict[str, tuple[str, ...]]  # task -> annotated categories


@dataclass(frozen=True)
class FrameLabel:
    """Ground truth for one frame; mask covers abnormal pixels if present."""

    video_id: str
    frame_index: int
    abnormal: bool
    mask: dict | None = None  # {"size": [h, w], "counts": [...]}


@dataclass
class FeaturePack:
    feature_dim: int
    frame_sizes: dict[str, tuple[int, int]]  # video_id -> (width, height)
    tasks: list[ConceptTaskSpec]
    records: list[RegionRecord]
    features: np.ndarray  # (n, feature_dim) float32
    scores: dict[str, np.ndarray]  # task -> (n, n_categories) float32
    region_labels: list[RegionLabel] | None = None
    frame_labels: list[FrameLabel] | None = None
    version: str = FORMAT_VERSION

    @property
    def n(self) -> int:
        return len(self.records)

    def task(self, name: str) -> ConceptTaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise ValidationError(f"pack has no task named {name!r}")

    def record_feature(self, i: int) -> np.ndarray:
        return self.features[self.records[i].feature_offset]

    def record_scores(self, i: int, task: str) -> np.ndarray:
        return self.scores[task][self.records[i].score_offsets[task]]

    def frames_with_records(self) -> list[tuple[str, int]]:
        """Distinct (video_id, frame_index) pairs in first-appearance order."""
        seen = {}
        for rec in self.records:
            seen.setdefault((rec.video_id, rec.frame_index), None)
        return list(seen)


def encode_mask(mask: np.ndarray) -> dict:
    """RLE-encode a boolean (h, w) mask, row-major, first run counts zeros."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError("mask must be a 2-D array")
    h, w = mask.shape
    flat = mask.reshape(-1).astype(bool)
    counts = []
    if flat.size == 0:
        return {"size": [int(h), int(w)], "counts": []}
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        counts.append(0)
    counts.extend(int(r) for r in runs)
    return {"size": [int(h), int(w)], "counts": counts}


def decode_mask(rle: dict) -> np.ndarray:
    """Decode an RLE mask dict back to a boolean (h, w) array."""
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed mask RLE: {exc}") from None
    if h < 0 or w < 0:
        raise ValidationError("mask size must be non-negative")
    if any(c < 0 for c in counts):
        raise ValidationError("mask RLE counts must be non-negative")
    if sum(counts) != h * w:
        raise ValidationError(
            f"mask RLE covers {sum(counts)} pixels, frame has {h * w}"
        )
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape(h, w)


def _check_matrix(name: str, arr: np.ndarray, n: int, dim: int) -> None:
    if arr.ndim != 2 or arr.shape != (n, dim):
        raise ValidationError(
            f"{name} has shape {arr.shape}, expected ({n}, {dim})"
        )
    if arr.size and not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).reshape(-1))[0])
        raise ValidationError(f"{name} contains non-finite value at flat index {bad}")


def _validate_in_memory(pack: FeaturePack, clamp_scores: bool) -> list[str]:
    """Check every pack invariant; returns warnings. Mutates scores iff
    clamp_scores and an excursion is within SCORE_TOL."""
    warnings: list[str] = []
    if not pack.tasks:
        raise ValidationError("pack must declare at least one task")
    names = [t.name for t in pack.tasks]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate task names in manifest")
    if pack.feature_dim <= 0:
        raise ValidationError("feature_dim must be positive")
    for vid, size in pack.frame_sizes.items():
        w, h = size
        if w <= 0 or h <= 0:
            raise ValidationError(f"frame size for video {vid!r} must be positive")

    n = pack.n
    _check_matrix(FEATURES_NAME, pack.features, n, pack.feature_dim)
    if set(pack.scores) != set(names):
        raise ValidationError(
            f"score matrices {sorted(pack.scores)} do not match tasks {sorted(names)}"
        )
    for t in pack.tasks:
        mat = pack.scores[t.name]
        _check_matrix(scores_name(t.name), mat, n, len(t.categories))
        if mat.size:
            lo, hi = float(mat.min()), float(mat.max())
            if lo < -SCORE_TOL or hi > 1.0 + SCORE_TOL:
                raise ValidationError(
                    f"{scores_name(t.name)}: score outside [0, 1] "
                    f"(min {lo}, max {hi})"
                )
            if clamp_scores and (lo < 0.0 or hi > 1.0):
                np.clip(mat, 0.0, 1.0, out=mat)
                warnings.append(
                    f"{scores_name(t.name)}: clamped scores within {SCORE_TOL} of [0, 1]"
                )

    seen_keys: dict[tuple[str, int, tuple], int] = {}
    for i, rec in enumerate(pack.records):
        where = f"record {i}"
        if rec.video_id not in pack.frame_sizes:
            raise ValidationError(f"{where}: unknown video {rec.video_id!r}")
        if not isinstance(rec.frame_index, int) or rec.frame_index < 0:
            raise ValidationError(f"{where}: frame_index must be a non-negative int")
        x, y, w, h = (float(v) for v in rec.box)
        if not all(math.isfinite(v) for v in (x, y, w, h)):
            raise ValidationError(f"{where}: box has non-finite coordinate")
        if w <= 0 or h <= 0:
            raise ValidationError(f"{where}: box width/height must be positive")
        fw, fh = pack.frame_sizes[rec.video_id]
        if x < 0 or y < 0 or x + w > fw or y + h > fh:
            raise ValidationError(
                f"{where}: box ({x}, {y}, {w}, {h}) exceeds frame ({fw}, {fh})"
            )
        if not 0 <= rec.feature_offset < n:
            raise ValidationError(
                f"{where}: feature_offset {rec.feature_offset} out of range [0, {n})"
            )
        if set(rec.score_offsets) != set(names):
            raise ValidationError(f"{where}: score_offsets do not cover all tasks")
        for task, off in rec.score_offsets.items():
            if not 0 <= off < n:
                raise ValidationError(
                    f"{where}: score offset {off} for task {task!r} out of range [0, {n})"
                )
        key = (rec.video_id, rec.frame_index, tuple(round(v, 9) for v in rec.box))
        if key in seen_keys:
            warnings.append(
                f"record {i} duplicates record {seen_keys[key]} "
                f"(video {rec.video_id!r}, frame {rec.frame_index}, box {rec.box})"
            )
        else:
            seen_keys[key] = i

    if pack.region_labels is not None:
        seen_rl: set[int] = set()
        for j, lab in enumerate(pack.region_labels):
            where = f"region label {j}"
            if not 0 <= lab.record_index < n:
                raise ValidationError(
                    f"{where}: record_index {lab.record_index} out of range [0, {n})"
                )
            if lab.record_index in seen_rl:
                raise ValidationError(
                    f"{where}: duplicate label for record {lab.record_index}"
                )
            seen_rl.add(lab.record_index)
            for task, cats in lab.categories.items():
                spec = pack.task(task)
                for c in cats:
                    spec.category_index(c)

    if pack.frame_labels is not None:
        seen_fl: set[tuple[str, int]] = set()
        for j, lab in enumerate(pack.frame_labels):
            where = f"frame label {j}"
            if lab.video_id not in pack.frame_sizes:
                raise ValidationError(f"{where}: unknown video {lab.video_id!r}")
            if lab.frame_index < 0:
                raise ValidationError(f"{where}: negative frame_index")
            key = (lab.video_id, lab.frame_index)
            if key in seen_fl:
                raise ValidationError(f"{where}: duplicate frame label for {key}")
            seen_fl.add(key)
            if lab.mask is not None:
                mask = decode_mask(lab.mask)
                fw, fh = pack.frame_sizes[lab.video_id]
                if mask.shape != (fh, fw):
                    raise ValidationError(
                        f"{where}: mask shape {mask.shape} does not match "
                        f"frame ({fh}, {fw})"
                    )
    return warnings


def _matrix_to_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _matrix_from_bytes(name: str, data: bytes, rows: int, cols: int) -> np.ndarray:
    expected = rows * cols * 4
    if len(data) != expected:
        raise ValidationError(
            f"{name}: expected {expected} bytes ({rows} x {cols} float32), "
            f"found {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()


def write_pack(path: str | os.PathLike, pack: FeaturePack) -> None:
    """Validate and write a pack directory. Creates the directory if needed."""
    warnings = _validate_in_memory(pack, clamp_scores=True)
    for msg in warnings:
        log.warning("%s", msg)
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)

    manifest = {
        "format_version": pack.version,
        "feature_dim": int(pack.feature_dim),
        "record_count": pack.n,
        "frame_sizes": {
            vid: [int(size[0]), int(size[1])] for vid, size in pack.frame_sizes.items()
        },
        "tasks": [
            {"name": t.name, "categories": list(t.categories)} for t in pack.tasks
        ],
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(path, RECORDS_NAME), "w", encoding="utf-8") as fh:
        for rec in pack.records:
            fh.write(
                json.dumps(
                    {
                        "video_id": rec.video_id,
                        "frame_index": rec.frame_index,
                        "box": [float(v) for v in rec.box],
                        "feature_offset": rec.feature_offset,
                        "score_offsets": {
                            t.name: rec.score_offsets[t.name] for t in pack.tasks
                        },
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    with open(os.path.join(path, FEATURES_NAME), "wb") as fh:
        fh.write(_matrix_to_bytes(pack.features))
    for t in pack.tasks:
        with open(os.path.join(path, scores_name(t.name)), "wb") as fh:
            fh.write(_matrix_to_bytes(pack.scores[t.name]))

    if pack.region_labels is not None or pack.frame_labels is not None:
        with open(os.path.join(path, LABELS_NAME), "w", encoding="utf-8") as fh:
            for lab in pack.region_labels or []:
                fh.write(
                    json.dumps(
                        {
                            "kind": "region",
                            "record_index": lab.record_index,
                            "abnormal": lab.abnormal,
                            "categories": {
                                task: list(cats)
                                for task, cats in sorted(lab.categories.items())
                            },
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            for lab in pack.frame_labels or []:
                entry = {
                    "kind": "frame",
                    "video_id": lab.video_id,
                    "frame_index": lab.frame_index,
                    "abnormal": lab.abnormal,
                }
                if lab.mask is not None:
                    entry["mask"] = lab.mask
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _read_json_lines(path: str, name: str):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{name} line {lineno}: invalid JSON ({exc})")
    return out


def _load(path: str) -> tuple[FeaturePack, list[str]]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise ValidationError(f"{path}: missing {MANIFEST_NAME}")
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{MANIFEST_NAME}: invalid JSON ({exc})")

    version = manifest.get("format_version")
    if not isinstance(version, str) or "." not in version:
        raise ValidationError(f"{MANIFEST_NAME}: missing or malformed format_version")
    major = version.split(".", 1)[0]
    if major != FORMAT_VERSION.split(".", 1)[0]:
        raise ValidationError(
            f"unsupported pack format_version {version!r} "
            f"(supported major {FORMAT_VERSION.split('.', 1)[0]})"
        )
    try:
        feature_dim = int(manifest["feature_dim"])
        record_count = int(manifest["record_count"])
        frame_sizes = {
            str(vid): (int(size[0]), int(size[1]))
            for vid, size in manifest["frame_sizes"].items()
        }
        tasks = [
            ConceptTaskSpec(str(t["name"]), tuple(str(c) for c in t["categories"]))
            for t in manifest["tasks"]
        ]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ValidationError(f"{MANIFEST_NAME}: malformed field ({exc})")

    records_path = os.path.join(path, RECORDS_NAME)
    if not os.path.isfile(records_path):
        raise ValidationError(f"{path}: missing {RECORDS_NAME}")
    records = []
    for i, raw in enumerate(_read_json_lines(records_path, RECORDS_NAME)):
        try:
            box = raw["box"]
            if len(box) != 4:
                raise ValueError("box must have 4 entries")
            records.append(
                RegionRecord(
                    video_id=str(raw["video_id"]),
                    frame_index=int(raw["frame_index"]),
                    box=tuple(float(v) for v in box),
                    feature_offset=int(raw["feature_offset"]),
                    score_offsets={
                        str(k): int(v) for k, v in raw["score_offsets"].items()
                    },
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"record {i}: malformed field ({exc})")
    if len(records) != record_count:
        raise ValidationError(
            f"{RECORDS_NAME} holds {len(records)} records, manifest declares "
            f"{record_count}"
        )

    feat_path = os.path.join(path, FEATURES_NAME)
    if not os.path.isfile(feat_path):
        raise ValidationError(f"{path}: missing {FEATURES_NAME}")
    with open(feat_path, "rb") as fh:
        features = _matrix_from_bytes(
            FEATURES_NAME, fh.read(), record_count, feature_dim
        )
    scores = {}
    for t in tasks:
        spath = os.path.join(path, scores_name(t.name))
        if not os.path.isfile(spath):
            raise ValidationError(f"{path}: missing {scores_name(t.name)}")
        with open(spath, "rb") as fh:
            scores[t.name] = _matrix_from_bytes(
                scores_name(t.name), fh.read(), record_count, len(t.categories)
            )

    region_labels = None
    frame_labels = None
    labels_path = os.path.join(path, LABELS_NAME)
    if os.path.isfile(labels_path):
        region_labels, frame_labels = [], []
        for j, raw in enumerate(_read_json_lines(labels_path, LABELS_NAME)):
            kind = raw.get("kind")
            try:
                if kind == "region":
                    abnormal = raw.get("abnormal")
                    region_labels.append(
                        RegionLabel(
                            record_index=int(raw["record_index"]),
                            abnormal=None if abnormal is None else bool(abnormal),
                            categories={
                                str(task): tuple(str(c) for c in cats)
                                for task, cats in raw.get("categories", {}).items()
                            },
                        )
                    )
                elif kind == "frame":
                    frame_labels.append(
                        FrameLabel(
                            video_id=str(raw["video_id"]),
                            frame_index=int(raw["frame_index"]),
                            abnormal=bool(raw["abnormal"]),
                            mask=raw.get("mask"),
                        )
                    )
                else:
                    raise ValueError(f"unknown label kind {kind!r}")
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"label {j}: malformed entry ({exc})")

    pack = FeaturePack(
        feature_dim=feature_dim,
        frame_sizes=frame_sizes,
        tasks=tasks,
        records=records,
        features=features,
        scores=scores,
        region_labels=region_labels,
        frame_labels=frame_labels,
        version=version,
    )
    warnings = _validate_in_memory(pack, clamp_scores=False)
    return pack, warnings


def read_pack(path: str | os.PathLike) -> FeaturePack:
    """Read and validate a pack directory; warnings go to the module logger."""
    pack, warnings = _load(os.fspath(path))
    for msg in warnings:
        log.warning("%s", msg)
    return pack


def validate_pack(path: str | os.PathLike) -> list[str]:
    """Validate a pack directory, returning the warning list.

    Hard violations raise ValidationError; warnings (duplicate records)
    are returned for the caller to display.
    """
    _, warnings = _load(os.fspath(path))
    return warnings


def subset_pack(pack: FeaturePack, record_indices) -> FeaturePack:
    """Build a new pack from a subset of records.

    Matrix rows are re-gathered through each record's offsets, so the result
    is position-aligned (offset i == record i). Region labels follow their
    records; frame labels survive only for frames that keep at least one
    record.
    """
    record_indices = [int(i) for i in record_indices]
    for i in record_indices:
        if not 0 <= i < pack.n:
            raise ValidationError(f"subset index {i} out of range [0, {pack.n})")
    if len(set(record_indices)) != len(record_indices):
        raise ValidationError("subset indices must be distinct")

    old_records = [pack.records[i] for i in record_indices]
    features = np.stack(
        [pack.features[r.feature_offset] for r in old_records]
    ) if old_records else np.zeros((0, pack.feature_dim), dtype=np.float32)
    scores = {}
    for t in pack.tasks:
        rows = [pack.scores[t.name][r.score_offsets[t.name]] for r in old_records]
        scores[t.name] = (
            np.stack(rows)
            if rows
            else np.zeros((0, len(t.categories)), dtype=np.float32)
        )

    new_records = [
        RegionRecord(
            video_id=r.video_id,
            frame_index=r.frame_index,
            box=r.box,
            feature_offset=i,
            score_offsets={t.name: i for t in pack.tasks},
        )
        for i, r in enumerate(old_records)
    ]

    kept_frames = {(r.video_id, r.frame_index) for r in new_records}
    position = {old: new for new, old in enumerate(record_indices)}

    region_labels = None
    if pack.region_labels is not None:
        region_labels = [
            RegionLabel(position[lab.record_index], lab.abnormal, lab.categories)
            for lab in pack.region_labels
            if lab.record_index in position
        ]
        region_labels.sort(key=lambda lab: lab.record_index)
    frame_labels = None
    if pack.frame_labels is not None:
        frame_labels = [
            lab
            for lab in pack.frame_labels
            if (lab.video_id, lab.frame_index) in kept_frames
        ]

    return FeaturePack(
        feature_dim=pack.feature_dim,
        frame_sizes=dict(pack.frame_sizes),
        tasks=list(pack.tasks),
        records=new_records,
        features=features.astype(np.float32),
        scores={k: v.astype(np.float32) for k, v in scores.items()},
        region_labels=region_labels,
        frame_labels=frame_labels,
        version=pack.version,
    )
