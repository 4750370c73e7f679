"""Extraction configuration.

The configuration names a backbone, the layer whose activations become the
region feature, and the classification tasks whose scores are written next to
the features.  Each task maps to an ordered tuple of category names; one
scoring head per task is built on top of the tapped layer.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ExtractorError

SUPPORTED_BACKBONES = ("alexnet",)

# Output width of the tapped layer per supported backbone, used to check the
# declared feature dimension before any image is touched.
_BACKBONE_DIMS = {"alexnet": 4096}


@dataclass(frozen=True)
class ExtractorConfig:
    """Settings for one extraction run.

    ``tasks`` maps a task name to its category names; scores for every
    category are produced by a per-task head over the tapped activations.
    ``feature_dim`` declares the width the backbone is expected to emit and
    is verified against the actual layer output.
    """

    tasks: dict[str, tuple[str, ...]]
    backbone: str = "alexnet"
    layer: str = "classifier.5"
    feature_dim: int = 4096
    batch_size: int = 16
    device: str = "cpu"
    seed: int = 0
    pretrained: bool = False

    def validate(self) -> None:
        if self.backbone not in SUPPORTED_BACKBONES:
            known = ", ".join(SUPPORTED_BACKBONES)
            raise ExtractorError(
                f"unknown backbone {self.backbone!r}: supported backbones are {known}"
            )
        if not self.layer:
            raise ExtractorError("layer name must be non-empty")
        if self.feature_dim <= 0:
            raise ExtractorError(f"feature_dim must be positive, got {self.feature_dim}")
        expected = _BACKBONE_DIMS[self.backbone]
        if self.layer == "classifier.5" and self.feature_dim != expected:
            raise ExtractorError(
                f"declared feature_dim {self.feature_dim} does not match the "
                f"{self.backbone} {self.layer} output width {expected}"
            )
        if self.batch_size < 1:
            raise ExtractorError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.tasks:
            raise ExtractorError("at least one task must be configured")
        for name, categories in self.tasks.items():
            if not name:
                raise ExtractorError("task names must be non-empty")
            if not categories:
                raise ExtractorError(f"task {name!r} has no categories")
            if len(set(categories)) != len(categories):
                raise ExtractorError(f"task {name!r} lists a category twice")
            for cat in categories:
                if not cat:
                    raise ExtractorError(f"task {name!r} has an empty category name")
        try:
            import torch

            torch.device(self.device)
        except (RuntimeError, ValueError) as exc:
            raise ExtractorError(f"invalid device {self.device!r}: {exc}") from None

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExtractorConfig":
        """Build a config from parsed JSON, rejecting unknown keys."""
        if not isinstance(raw, dict):
            raise ExtractorError("config must be a JSON object")
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ExtractorError(f"unknown config keys: {', '.join(unknown)}")
        if "tasks" not in raw:
            raise ExtractorError("config must define tasks")
        tasks_raw = raw["tasks"]
        if not isinstance(tasks_raw, dict):
            raise ExtractorError("tasks must map task names to category lists")
        tasks: dict[str, tuple[str, ...]] = {}
        for name, cats in tasks_raw.items():
            if not isinstance(cats, (list, tuple)) or not all(
                isinstance(c, str) for c in cats
            ):
                raise ExtractorError(f"categories for task {name!r} must be strings")
            tasks[str(name)] = tuple(cats)
        kwargs = {key: raw[key] for key in raw if key not in ("tasks",)}
        config = cls(tasks=tasks, **kwargs)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path) -> "ExtractorConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = json.load(handle)
        except OSError as exc:
            raise ExtractorError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ExtractorError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_mapping(raw)
