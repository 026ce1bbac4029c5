"""Tiled object detection over large rasters.

Poisson-disk tile planning with guaranteed full coverage, per-tile
detection (synthetic or external plugin), exact local-to-global box
remapping, EIoU-aware ensemble fusion, and detection metrics.
"""

from .errors import PluginError, ProtocolError, RasterIOError, ValidationError
from .geometry import BBox, enclosing_box, eiou_loss, intersection, iou
from .poisson import PointSet, SampleDomain, derive_seed, sample_poisson, verify_min_distance
from .tiling import (
    Tile,
    TilePlan,
    clip_to_image,
    coverage_fraction,
    extract_tile,
    plan_tiles,
    remap_to_global,
    remap_to_local,
)
from .detector import (
    DetectionSet,
    DetectorSpec,
    NoiseProfile,
    ScoreModel,
    TileRasterRef,
    run_plugin,
    synthetic_detect,
)
from .fusion import FusedSet, FusionConfig, eiou_nms, ensemble_merge, reference_nms
from .evaluation import (
    AnnotationSet,
    EvalReport,
    Matching,
    average_precision,
    compute_prf1,
    evaluate_detections,
    match_detections,
    mean_ap,
)
from .synthgen import (
    MixManifest,
    generate_annotations,
    generate_scene,
    mix_datasets,
    sample_crops,
)
from .pipeline import PipelineConfig, run_pipeline, run_sweep

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "iou",
    "eiou_loss",
    "enclosing_box",
    "intersection",
    "SampleDomain",
    "PointSet",
    "sample_poisson",
    "verify_min_distance",
    "derive_seed",
    "Tile",
    "TilePlan",
    "plan_tiles",
    "coverage_fraction",
    "remap_to_global",
    "remap_to_local",
    "extract_tile",
    "clip_to_image",
    "DetectorSpec",
    "NoiseProfile",
    "ScoreModel",
    "DetectionSet",
    "TileRasterRef",
    "synthetic_detect",
    "run_plugin",
    "FusionConfig",
    "FusedSet",
    "reference_nms",
    "eiou_nms",
    "ensemble_merge",
    "AnnotationSet",
    "Matching",
    "EvalReport",
    "match_detections",
    "compute_prf1",
    "average_precision",
    "mean_ap",
    "evaluate_detections",
    "MixManifest",
    "generate_annotations",
    "generate_scene",
    "sample_crops",
    "mix_datasets",
    "PipelineConfig",
    "run_pipeline",
    "run_sweep",
    "ValidationError",
    "PluginError",
    "ProtocolError",
    "RasterIOError",
    "__version__",
]
