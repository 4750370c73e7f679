"""Abnormal event recounting over concept classification scores.

For every (task, category) pair a 1-D Gaussian KDE is fitted on the
training scores; at query time a region's score for a category is rated
by the reciprocal of that density, so scores rarely seen in training
count as strong evidence of abnormality. The predicted category per task
is the argmax of the classification scores, suppressed entirely when no
category reaches the confidence threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .novelty import scott_bandwidth
from .pack import ConceptTaskSpec, FeaturePack

CLS_THRESHOLD = 0.1
DENSITY_FLOOR = 1e-12
SCORE_EPS = 1e-6  # stored scores may stray past [0, 1] by this much


class ScoreDensity:
    """1-D Gaussian KDE over classification scores for one category.

    Bandwidth is sigma * n**(-1/5) (Scott with d = 1), floored like the
    feature-space KDE. Fewer than 2 training scores leaves the density
    degenerate: it evaluates to 0 and the caller's floor takes over.
    """

    def __init__(self, bandwidth: float | None = None):
        self.fixed_bandwidth = bandwidth
        self.samples: np.ndarray | None = None
        self.bandwidth: float | None = None
        self.degenerate = True

    def fit(self, values) -> "ScoreDensity":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        self.samples = values.copy()
        if values.size < 2:
            self.degenerate = True
            self.bandwidth = None
            return self
        self.degenerate = False
        if self.fixed_bandwidth is not None:
            if self.fixed_bandwidth <= 0:
                raise ValidationError("bandwidth must be positive")
            self.bandwidth = float(self.fixed_bandwidth)
        else:
            self.bandwidth = float(scott_bandwidth(values[:, None])[0])
        return self

    def density(self, s: float) -> float:
        if self.samples is None:
            raise ValidationError("density is not fitted")
        if self.degenerate:
            return 0.0
        h = self.bandwidth
        z2 = ((s - self.samples) / h) ** 2
        return float(np.exp(-0.5 * z2).mean() / (h * math.sqrt(2.0 * math.pi)))


@dataclass
class CategoryEvidence:
    category: str
    cls_score: float
    anomaly: float


@dataclass
class TaskRecount:
    category: str | None  # None: no category reached the threshold
    cls_score: float | None
    anomaly: float | None
    candidates: list[CategoryEvidence] = field(default_factory=list)


@dataclass
class RecountModel:
    tasks: list[ConceptTaskSpec]
    densities: dict[str, list[ScoreDensity]]  # task -> per-category, spec order
    cls_threshold: float = CLS_THRESHOLD
    density_floor: float = DENSITY_FLOOR

    def task(self, name: str) -> ConceptTaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise ValidationError(f"recount model has no task named {name!r}")


def fit_recount_model(
    pack: FeaturePack,
    cls_threshold: float = CLS_THRESHOLD,
    bandwidth: float | None = None,
) -> RecountModel:
    """Fit one score density per (task, category) on a training pack."""
    if not 0.0 <= cls_threshold <= 1.0:
        raise ValidationError("cls_threshold must lie in [0, 1]")
    densities: dict[str, list[ScoreDensity]] = {}
    for t in pack.tasks:
        mat = pack.scores[t.name].astype(np.float64)
        densities[t.name] = [
            ScoreDensity(bandwidth=bandwidth).fit(mat[:, j])
            for j in range(len(t.categories))
        ]
    return RecountModel(
        tasks=list(pack.tasks),
        densities=densities,
        cls_threshold=cls_threshold,
    )


def _check_scores(task: ConceptTaskSpec, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != len(task.categories):
        raise ValidationError(
            f"task {task.name!r} expects {len(task.categories)} scores, "
            f"got {scores.shape[0]}"
        )
    if scores.size and (scores.min() < -SCORE_EPS or scores.max() > 1.0 + SCORE_EPS):
        raise ValidationError(
            f"task {task.name!r}: classification scores outside [0, 1]"
        )
    return np.clip(scores, 0.0, 1.0)


def predict_category(
    model: RecountModel, task_name: str, scores
) -> tuple[str | None, int | None, float | None]:
    """Argmax category, or None when every score is below the threshold.

    Ties go to the lowest category index.
    """
    task = model.task(task_name)
    scores = _check_scores(task, scores)
    idx = int(np.argmax(scores))
    best = float(scores[idx])
    if best < model.cls_threshold:
        return None, None, None
    return task.categories[idx], idx, best


def concept_anomaly(model: RecountModel, task_name: str, category: str, cls_score: float) -> float:
    """Reciprocal training density of this category's score, floored."""
    task = model.task(task_name)
    j = task.category_index(category)
    if not -SCORE_EPS <= cls_score <= 1.0 + SCORE_EPS:
        raise ValidationError(f"classification score {cls_score} outside [0, 1]")
    cls_score = min(max(float(cls_score), 0.0), 1.0)
    p = model.densities[task_name][j].density(cls_score)
    return 1.0 / max(p, model.density_floor)


def recount_task(model: RecountModel, task_name: str, scores) -> TaskRecount:
    """Predicted category plus evidence for every above-threshold category."""
    task = model.task(task_name)
    clean = _check_scores(task, scores)
    category, idx, best = predict_category(model, task_name, clean)
    candidates = [
        CategoryEvidence(
            category=task.categories[j],
            cls_score=float(clean[j]),
            anomaly=concept_anomaly(model, task_name, task.categories[j], float(clean[j])),
        )
        for j in range(len(task.categories))
        if clean[j] >= model.cls_threshold
    ]
    if category is None:
        return TaskRecount(None, None, None, candidates)
    return TaskRecount(
        category=category,
        cls_score=best,
        anomaly=concept_anomaly(model, task_name, category, best),
        candidates=candidates,
    )


def recount_event(model: RecountModel, task_scores: dict) -> dict[str, TaskRecount]:
    """Recount one region across all tasks; task_scores maps task -> vector."""
    missing = {t.name for t in model.tasks} - set(task_scores)
    if missing:
        raise ValidationError(f"missing scores for tasks {sorted(missing)}")
    extra = set(task_scores) - {t.name for t in model.tasks}
    if extra:
        raise ValidationError(f"scores for unknown tasks {sorted(extra)}")
    return {
        t.name: recount_task(model, t.name, task_scores[t.name]) for t in model.tasks
    }
