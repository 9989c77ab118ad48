"""Confidence-guided matting toolkit: trimaps, structure losses, segmentation metrics and a toy pipeline."""
from .metrics import MetricReport, evaluate_dataset, evaluate_pair
from .pipeline import CompositePolicy, PipelineResult, refine_from_prob, run_pipeline
from .trimap import DEFAULT_THRESHOLDS, ThresholdPair, generate_trimap, trimap_from_prob

__all__ = [
    "CompositePolicy",
    "DEFAULT_THRESHOLDS",
    "MetricReport",
    "PipelineResult",
    "ThresholdPair",
    "evaluate_dataset",
    "evaluate_pair",
    "generate_trimap",
    "refine_from_prob",
    "run_pipeline",
    "trimap_from_prob",
]
__version__ = "0.1.0"
