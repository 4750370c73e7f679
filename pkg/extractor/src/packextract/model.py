"""Backbone feature tap and per-task scoring heads.

The backbone is an image classifier from torchvision; one named layer is
tapped and its activations become the region feature vector.  Each configured
task gets a linear head over that vector followed by a sigmoid, so category
scores always land in [0, 1].  All weights are drawn from a generator seeded
by the config, which makes two runs over identical inputs produce identical
bytes.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torchvision.models import alexnet
from torchvision.models.feature_extraction import create_feature_extractor

from .config import ExtractorConfig
from .errors import ExtractorError

INPUT_SIZE = 224
# Standard image normalization constants for torchvision classifiers.
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def _build_backbone(config: ExtractorConfig):
    if config.backbone == "alexnet":
        if config.pretrained:
            try:
                from torchvision.models import AlexNet_Weights

                return alexnet(weights=AlexNet_Weights.DEFAULT)
            except Exception as exc:
                raise ExtractorError(
                    f"failed to load pretrained {config.backbone} weights: {exc}"
                ) from None
        return alexnet(weights=None)
    raise ExtractorError(f"unknown backbone {config.backbone!r}")


class RegionScorer:
    """Runs batches of region crops through the tapped backbone and heads."""

    def __init__(self, config: ExtractorConfig):
        config.validate()
        self.config = config
        try:
            self.device = torch.device(config.device)
        except (RuntimeError, ValueError) as exc:
            raise ExtractorError(f"invalid device {config.device!r}: {exc}") from None
        # One seed governs backbone init, head init, and nothing else, so the
        # weight tensors are a pure function of the config.
        torch.manual_seed(config.seed)
        net = _build_backbone(config)
        try:
            self.tap = create_feature_extractor(net, return_nodes={config.layer: "feature"})
        except Exception as exc:
            raise ExtractorError(
                f"backbone {config.backbone!r} has no layer {config.layer!r}: {exc}"
            ) from None
        self.tap.to(self.device).eval()
        probe = torch.zeros(1, 3, INPUT_SIZE, INPUT_SIZE, device=self.device)
        with torch.inference_mode():
            out = self.tap(probe)["feature"]
        if out.ndim != 2 or out.shape[1] != config.feature_dim:
            raise ExtractorError(
                f"layer {config.layer!r} emits shape {tuple(out.shape[1:])} but the "
                f"config declares feature_dim {config.feature_dim}"
            )
        self.heads: dict[str, torch.nn.Linear] = {}
        for task, categories in config.tasks.items():
            head = torch.nn.Linear(config.feature_dim, len(categories))
            head.to(self.device).eval()
            self.heads[task] = head
        for param in self.tap.parameters():
            param.requires_grad_(False)
        for head in self.heads.values():
            for param in head.parameters():
                param.requires_grad_(False)

    def prepare_crop(self, frame: Image.Image, box: tuple[float, float, float, float]) -> torch.Tensor:
        """Crop a region from a frame and shape it for the backbone."""
        x, y, w, h = box
        left = int(np.floor(x))
        top = int(np.floor(y))
        right = int(np.ceil(x + w))
        bottom = int(np.ceil(y + h))
        crop = frame.crop((left, top, right, bottom))
        crop = crop.resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
        pixels = np.asarray(crop, dtype=np.float32) / 255.0
        pixels = (pixels - _MEAN) / _STD
        # HWC to CHW.
        return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))

    def score_batch(self, crops: list[torch.Tensor]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Return float32 features (n, feature_dim) and per-task score arrays
        (n, category_count) for a list of prepared crops."""
        batch = torch.stack(crops).to(self.device)
        with torch.inference_mode():
            features = self.tap(batch)["feature"]
            scores = {
                task: torch.sigmoid(head(features)) for task, head in self.heads.items()
            }
        features_np = features.cpu().numpy().astype(np.float32, copy=False)
        scores_np = {
            task: value.cpu().numpy().astype(np.float32, copy=False)
            for task, value in scores.items()
        }
        return features_np, scores_np
