"""Satellite mining-scene analysis: scene quality, spectral indices, a
scribble-trained built-up/mining classifier, gated caption generation, and
grounded retrieval over the accepted corpus."""

__version__ = "0.1.0"

from .errors import MinelensError
from .pipeline import Pipeline, PipelineConfig
from .raster import SceneCube, load_scene, quality_metrics, rank_candidates, render_rgb, save_scene
from .sites import Dossier, Registry, SiteRecord

__all__ = [
    "MinelensError",
    "Pipeline",
    "PipelineConfig",
    "SceneCube",
    "load_scene",
    "quality_metrics",
    "rank_candidates",
    "render_rgb",
    "save_scene",
    "SiteRecord",
    "Dossier",
    "Registry",
    "__version__",
]
