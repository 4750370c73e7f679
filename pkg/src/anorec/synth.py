"""Deterministic synthetic benchmark packs.

Regions are drawn around per-cell Gaussian clusters in feature space;
planted anomalies are the cluster displaced along a per-cell direction.
Noise is rejection-sampled so its projection on that direction stays
within 2.5x the cluster scale: at a displacement of at least 6x scale
the anomalies in every cell are linearly separable from the normals by
the hyperplane normal to the cell's direction.

Anomalous regions also carry distinctive concept scores: high on one
common category (what the region looks like) and one designated
anomalous category (what makes it unusual), so recounting has real
signal to find.

Streams are counter-based (Philox). The environment stream fixes cluster
geometry and is seeded separately from the sampling stream, letting a
clean training pack and a contaminated evaluation pack share one
environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .evaluation import rasterize_boxes
from .pack import (
    ConceptTaskSpec,
    FeaturePack,
    FrameLabel,
    RegionLabel,
    RegionRecord,
    encode_mask,
    subset_pack,
)

NOISE_PROJECTION_CAP = 2.5  # in units of cluster scale
SEPARABLE_DISPLACEMENT = 6.0


@dataclass(frozen=True)
class SynthTask:
    name: str
    categories: tuple[str, ...]
    anomalous: tuple[str, ...]  # planted on anomalous regions
    high: tuple[float, float] = (0.6, 0.95)
    low: tuple[float, float] = (0.0, 0.08)

    def __post_init__(self):
        if not set(self.anomalous) <= set(self.categories):
            raise ValidationError(
                f"task {self.name!r}: anomalous categories must be a subset"
            )
        if not self.anomalous or len(self.anomalous) >= len(self.categories):
            raise ValidationError(
                f"task {self.name!r}: needs both common and anomalous categories"
            )

    @property
    def common(self) -> tuple[str, ...]:
        return tuple(c for c in self.categories if c not in self.anomalous)


DEFAULT_TASKS = (
    SynthTask("object", ("person", "car", "tree", "cart"), ("cart",)),
    SynthTask("action", ("walking", "standing", "bending"), ("bending",)),
)


@dataclass
class SynthConfig:
    seed: int = 0
    environment_seed: int | None = None  # cluster geometry; defaults to seed
    video_id: str = "cam0"
    frames: int = 100
    regions_per_frame: int = 12
    feature_dim: int = 32
    frame_width: int = 360
    frame_height: int = 240
    grid_rows: int = 3
    grid_cols: int = 4
    cluster_mean_scale: float = 1.0
    cluster_scale: float = 0.1
    anomaly_fraction: float = 0.05
    anomaly_displacement: float = 0.8
    tasks: tuple[SynthTask, ...] = DEFAULT_TASKS
    with_masks: bool = True

    def validate(self) -> None:
        if not 0.0 < self.anomaly_fraction < 0.5:
            raise ValidationError(
                f"anomaly_fraction must lie in (0, 0.5), got {self.anomaly_fraction}"
            )
        if self.anomaly_displacement <= 0:
            raise ValidationError("anomaly_displacement must be positive")
        if self.cluster_scale <= 0:
            raise ValidationError("cluster_scale must be positive")
        if self.frames < 1 or self.regions_per_frame < 1:
            raise ValidationError("frames and regions_per_frame must be positive")
        if self.feature_dim < 2:
            raise ValidationError("feature_dim must be at least 2")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ValidationError("frame dimensions must be positive")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValidationError("grid dimensions must be positive")
        if not self.tasks:
            raise ValidationError("at least one concept task is required")

    @property
    def env_seed(self) -> int:
        return self.seed if self.environment_seed is None else self.environment_seed


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,)))
    )


@dataclass
class _Environment:
    means: np.ndarray  # (cells, dim)
    directions: np.ndarray  # (cells, dim), unit

    @classmethod
    def build(cls, config: SynthConfig) -> "_Environment":
        rng = _stream(config.env_seed, 0)
        cells = config.grid_rows * config.grid_cols
        means = rng.normal(
            scale=config.cluster_mean_scale, size=(cells, config.feature_dim)
        )
        raw = rng.normal(size=(cells, config.feature_dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        # a zero draw is theoretically possible, not at float64 in practice
        directions = raw / np.where(norms == 0, 1.0, norms)
        return cls(means=means, directions=directions)


def _bounded_noise(
    rng: np.random.Generator, direction: np.ndarray, scale: float, dim: int
) -> np.ndarray:
    """Gaussian noise with its projection on `direction` capped."""
    cap = NOISE_PROJECTION_CAP * scale
    while True:
        eps = rng.normal(scale=scale, size=dim)
        if abs(float(eps @ direction)) <= cap:
            return eps


def generate(config: SynthConfig) -> FeaturePack:
    """Generate a labeled benchmark pack."""
    config.validate()
    env = _Environment.build(config)
    rng = _stream(config.seed, 1)

    rows, cols = config.grid_rows, config.grid_cols
    n_cells = rows * cols
    cw = config.frame_width / cols
    ch = config.frame_height / rows
    dim = config.feature_dim

    records: list[RegionRecord] = []
    region_labels: list[RegionLabel] = []
    features: list[np.ndarray] = []
    score_rows: dict[str, list[np.ndarray]] = {t.name: [] for t in config.tasks}
    frame_labels: list[FrameLabel] = []

    for f in range(config.frames):
        frame_boxes_anomalous: list[tuple] = []
        frame_abnormal = False
        for j in range(config.regions_per_frame):
            cell = (f * config.regions_per_frame + j) % n_cells
            r, c = divmod(cell, cols)
            w = float(rng.uniform(0.25, 0.5) * cw)
            h = float(rng.uniform(0.25, 0.5) * ch)
            cx = c * cw + float(rng.uniform(w / 2, cw - w / 2))
            cy = r * ch + float(rng.uniform(h / 2, ch - h / 2))
            box = (cx - w / 2, cy - h / 2, w, h)

            anomalous = bool(rng.uniform() < config.anomaly_fraction)
            feat = env.means[cell] + _bounded_noise(
                rng, env.directions[cell], config.cluster_scale, dim
            )
            if anomalous:
                feat = feat + config.anomaly_displacement * env.directions[cell]
                frame_abnormal = True
                frame_boxes_anomalous.append(box)

            idx = len(records)
            records.append(
                RegionRecord(
                    video_id=config.video_id,
                    frame_index=f,
                    box=box,
                    feature_offset=idx,
                    score_offsets={t.name: idx for t in config.tasks},
                )
            )
            features.append(feat)

            cats: dict[str, tuple[str, ...]] = {}
            for task in config.tasks:
                present = [task.common[int(rng.integers(len(task.common)))]]
                if anomalous:
                    present.append(
                        task.anomalous[int(rng.integers(len(task.anomalous)))]
                    )
                row = np.empty(len(task.categories))
                for k, cat in enumerate(task.categories):
                    lo, hi = task.high if cat in present else task.low
                    row[k] = rng.uniform(lo, hi)
                score_rows[task.name].append(np.clip(row, 0.0, 1.0))
                cats[task.name] = tuple(present)
            region_labels.append(RegionLabel(idx, anomalous, cats))

        mask = None
        if config.with_masks and frame_abnormal:
            mask = encode_mask(
                rasterize_boxes(
                    frame_boxes_anomalous, config.frame_height, config.frame_width
                )
            )
        frame_labels.append(
            FrameLabel(config.video_id, f, frame_abnormal, mask)
        )

    return FeaturePack(
        feature_dim=dim,
        frame_sizes={config.video_id: (config.frame_width, config.frame_height)},
        tasks=[ConceptTaskSpec(t.name, t.categories) for t in config.tasks],
        records=records,
        features=np.array(features, dtype=np.float32),
        scores={
            name: np.array(rows_, dtype=np.float32)
            for name, rows_ in score_rows.items()
        },
        region_labels=region_labels,
        frame_labels=frame_labels,
    )


def normal_subset(pack: FeaturePack) -> FeaturePack:
    """The normal-only records of a labeled pack, as a training pack."""
    if pack.region_labels is None:
        raise ValidationError("normal_subset needs region labels")
    flagged = {lab.record_index: lab.abnormal for lab in pack.region_labels}
    missing = [i for i in range(pack.n) if flagged.get(i) is None]
    if missing:
        raise ValidationError(
            f"normal_subset needs an abnormal flag on every record; "
            f"record {missing[0]} lacks one"
        )
    keep = [i for i in range(pack.n) if flagged[i] is False]
    if not keep:
        raise ValidationError("no normal records to keep")
    return subset_pack(pack, keep)


def generate_split_fixture(
    seed: int = 0,
    n_images: int = 64,
    n_categories: int = 8,
    task_name: str = "object",
    feature_dim: int = 8,
) -> FeaturePack:
    """An image-style pack for the unseen-category split protocol.

    Image i shows category i mod n, every fourth image a second category,
    so each category's image count is bounded and a quarter of the
    categories always leaves a feasible seen-only pool. Features cluster
    around a per-category anchor; scores peak on the annotated category.
    """
    if n_categories < 2:
        raise ValidationError("need at least 2 categories")
    if n_images < 4:
        raise ValidationError("need at least 4 images")
    cats = tuple(f"cat{j:02d}" for j in range(n_categories))
    task = ConceptTaskSpec(task_name, cats)
    env_rng = _stream(seed, 0)
    anchors = env_rng.normal(size=(n_categories, feature_dim))
    rng = _stream(seed, 1)

    records, labels, feats, score_rows = [], [], [], []
    frame_labels = []
    width = height = 400
    for img in range(n_images):
        chosen = [img % n_categories]
        extra = (img // 4) % n_categories
        if img % 4 == 0 and extra != chosen[0]:
            chosen.append(extra)
        for slot, j in enumerate(chosen):
            i = len(records)
            x = 40.0 + 160.0 * slot
            y = 40.0 + 10.0 * (img % 20)
            records.append(
                RegionRecord(
                    "img", img, (x, y, 120.0, 120.0), i, {task_name: i}
                )
            )
            labels.append(RegionLabel(i, None, {task_name: (cats[j],)}))
            feats.append(anchors[j] + rng.normal(scale=0.05, size=feature_dim))
            row = rng.uniform(0.0, 0.08, size=n_categories)
            row[j] = rng.uniform(0.7, 0.95)
            score_rows.append(row)
    return FeaturePack(
        feature_dim=feature_dim,
        frame_sizes={"img": (width, height)},
        tasks=[task],
        records=records,
        features=np.array(feats, dtype=np.float32),
        scores={task_name: np.array(score_rows, dtype=np.float32)},
        region_labels=labels,
        frame_labels=frame_labels or None,
    )
