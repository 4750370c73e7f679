"""Feature-space abnormal event detection and recounting.

Region features and concept classification scores arrive in feature packs
(see anorec.pack); environment-specific novelty detectors arranged on a
spatial grid score how unusual each region is (anorec.grid, anorec.novelty),
and per-category score densities turn the concept scores into an evidence
ranking for recounting (anorec.recounting). Evaluation protocols, a
deterministic synthetic benchmark, and model persistence round out the
library; the `anorec` command drives the whole pipeline.
"""

__version__ = "0.1.0"

from .errors import ConvergenceError, ValidationError

__all__ = ["ConvergenceError", "ValidationError", "__version__"]
