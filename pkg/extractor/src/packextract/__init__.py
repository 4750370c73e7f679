"""Region feature extraction into feature packs.

Crops region boxes out of frame images, runs them through a tapped image
backbone plus per-task sigmoid heads, and writes the features and category
scores as a feature pack directory.
"""

from .config import ExtractorConfig
from .errors import ExtractorError
from .extract import Extraction, extract
from .frames import FrameSet, scan_frames
from .packio import write_pack
from .regions import RegionSpec, read_regions, synth_regions, write_regions

__all__ = [
    "ExtractorConfig",
    "ExtractorError",
    "Extraction",
    "extract",
    "FrameSet",
    "scan_frames",
    "write_pack",
    "RegionSpec",
    "read_regions",
    "synth_regions",
    "write_regions",
]

__version__ = "0.1.0"
