"""Spatial grid of per-cell novelty detectors.

The frame is divided into rows x cols equal cells; each region trains or
queries the detector of the cell containing its box center. Preprocessing
(PCA projection or the product quantizer codebook) is fitted once on the
full training set and shared by every cell, so scores from neighboring
cells live in the same feature space.

Cells that saw fewer than min_cell_samples training regions stay
untrained: queries landing there score +inf with an untrained flag, which
serializes as the largest finite float.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .novelty import DetectorConfig, make_detector
from .pack import FeaturePack
from .reduction import PcaModel, PqCodebook, pca_fit, pca_transform, pq_train

log = logging.getLogger(__name__)

DEFAULT_ROWS = 3
DEFAULT_COLS = 4
MIN_CELL_SAMPLES = 2


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    frame_width: float
    frame_height: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid must have at least one row and column")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValidationError("frame dimensions must be positive")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


def assign_cell(spec: GridSpec, box) -> tuple[int, int]:
    """Cell of the box center; centers on the far edge clamp inward."""
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValidationError("box width/height must be positive")
    cx = x + w / 2.0
    cy = y + h / 2.0
    row = int(cy / (spec.frame_height / spec.rows))
    col = int(cx / (spec.frame_width / spec.cols))
    return (
        min(max(row, 0), spec.rows - 1),
        min(max(col, 0), spec.cols - 1),
    )


def canonical_order(X: np.ndarray) -> np.ndarray:
    """A permutation sorting rows into a value-determined order.

    Fitting must not depend on the order records arrive in, but k-means
    seeding and SMO tie-breaks do; sorting rows first removes the
    dependence. Leading columns decide; exact ties fall back to the raw
    bytes of the full row.
    """
    n, d = X.shape
    if n <= 1:
        return np.arange(n)
    lead = min(d, 8)
    keys = [X[:, j] for j in range(lead - 1, -1, -1)]
    order = np.lexsort(keys)
    sorted_lead = X[order, :lead]
    ties = np.flatnonzero((np.diff(sorted_lead, axis=0) == 0).all(axis=1))
    if ties.size:
        # group maximal runs of identical leading columns, re-sort by bytes
        runs: list[list[int]] = []
        current = [int(ties[0])]
        for t in ties[1:]:
            if t == current[-1] + 1:
                current.append(int(t))
            else:
                runs.append(current)
                current = [int(t)]
        runs.append(current)
        order = order.copy()
        for run in runs:
            span = list(range(run[0], run[-1] + 2))
            chunk = sorted(order[span], key=lambda i: X[i].tobytes())
            order[span] = chunk
    return order


@dataclass
class CellScore:
    score: float
    row: int
    col: int
    untrained: bool


class GridBank:
    """A fitted grid of detectors plus the shared preprocessing."""

    def __init__(
        self,
        spec: GridSpec,
        config: DetectorConfig,
        feature_dim: int,
        cells: dict[tuple[int, int], object],
        pca: PcaModel | None = None,
        codebook: PqCodebook | None = None,
        cell_counts: dict[tuple[int, int], int] | None = None,
    ):
        self.spec = spec
        self.config = config
        self.feature_dim = feature_dim
        self.cells = cells
        self.pca = pca
        self.codebook = codebook
        self.cell_counts = cell_counts or {}

    @property
    def trained_cells(self) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.cells.items() if v is not None)

    def _preprocess(self, X: np.ndarray) -> np.ndarray:
        mode = self.config.resolved_preprocessing()
        if mode == "pca":
            return pca_transform(self.pca, X)
        # pq keeps raw queries: the index answers asymmetric distances
        return X

    def score_region(self, feature, box) -> CellScore:
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 1 or feature.shape[0] != self.feature_dim:
            raise ValidationError(
                f"feature dim {feature.shape} != bank dim {self.feature_dim}"
            )
        row, col = assign_cell(self.spec, box)
        det = self.cells.get((row, col))
        if det is None:
            return CellScore(math.inf, row, col, True)
        x = self._preprocess(feature[None, :])[0]
        return CellScore(float(det.score(x)), row, col, False)

    def score_pack(self, pack: FeaturePack) -> tuple[np.ndarray, np.ndarray]:
        """Scores and untrained flags for every record, in record order."""
        if pack.feature_dim != self.feature_dim:
            raise ValidationError(
                f"pack dim {pack.feature_dim} != bank dim {self.feature_dim}"
            )
        n = pack.n
        scores = np.empty(n)
        untrained = np.zeros(n, dtype=bool)
        if n == 0:
            return scores, untrained
        X = self._preprocess(pack.features.astype(np.float64))
        by_cell: dict[tuple[int, int], list[int]] = {}
        for i, rec in enumerate(pack.records):
            by_cell.setdefault(assign_cell(self.spec, rec.box), []).append(i)
        for cell, idx in by_cell.items():
            det = self.cells.get(cell)
            if det is None:
                scores[idx] = math.inf
                untrained[idx] = True
            else:
                scores[idx] = det.score_many(X[idx])
        return scores, untrained


def _single_frame_spec(pack: FeaturePack, rows: int, cols: int) -> GridSpec:
    sizes = {pack.frame_sizes[rec.video_id] for rec in pack.records}
    if not sizes:
        sizes = set(pack.frame_sizes.values())
    if len(sizes) != 1:
        raise ValidationError(
            f"grid bank needs a single frame geometry, pack has {sorted(sizes)}"
        )
    w, h = next(iter(sizes))
    return GridSpec(rows=rows, cols=cols, frame_width=w, frame_height=h)


def fit_grid_bank(
    pack: FeaturePack,
    config: DetectorConfig,
    rows: int = DEFAULT_ROWS,
    cols: int = DEFAULT_COLS,
    min_cell_samples: int = MIN_CELL_SAMPLES,
) -> GridBank:
    """Fit shared preprocessing and one detector per populated cell."""
    config.validate()
    if pack.n == 0:
        raise ValidationError("cannot fit a grid bank on an empty pack")
    if min_cell_samples < 1:
        raise ValidationError("min_cell_samples must be positive")
    spec = _single_frame_spec(pack, rows, cols)

    raw = pack.features.astype(np.float64)
    boxes = [rec.box for rec in pack.records]
    order = canonical_order(raw)
    raw = raw[order]
    boxes = [boxes[i] for i in order]

    mode = config.resolved_preprocessing()
    pca = None
    codebook = None
    if mode == "pca":
        pca = pca_fit(raw, config.pca_dim)
        X = pca_transform(pca, raw)
    elif mode == "pq":
        codebook = pq_train(
            raw,
            m=config.pq_subvectors,
            bits=config.pq_bits,
            iterations=config.pq_iterations,
            seed=config.seed,
        )
        X = raw
    else:
        X = raw

    by_cell: dict[tuple[int, int], list[int]] = {}
    for i, box in enumerate(boxes):
        by_cell.setdefault(assign_cell(spec, box), []).append(i)

    cells: dict[tuple[int, int], object] = {}
    counts: dict[tuple[int, int], int] = {}
    for r in range(rows):
        for c in range(cols):
            idx = by_cell.get((r, c), [])
            counts[(r, c)] = len(idx)
            if len(idx) < min_cell_samples:
                cells[(r, c)] = None
                if idx:
                    log.info(
                        "cell (%d, %d): %d sample(s) < %d, left untrained",
                        r, c, len(idx), min_cell_samples,
                    )
                continue
            det = make_detector(config, codebook=codebook)
            cells[(r, c)] = det.fit(X[idx])
    if not any(v is not None for v in cells.values()):
        raise ValidationError(
            "no grid cell reached min_cell_samples; nothing to train"
        )
    return GridBank(
        spec=spec,
        config=config,
        feature_dim=pack.feature_dim,
        cells=cells,
        pca=pca,
        codebook=codebook,
        cell_counts=counts,
    )
