"""Layer boundary segmentation through signed distance fields, with per-column uncertainty."""

from sdflayers.artifacts import KINDS, NoiseConfig, corrupt
from sdflayers.boundary import ExtractionConfig, extract, pixelwise_extract, soft_extract, zero_crossing
from sdflayers.estimator import BoundaryExtractor, LayerSegmenter, SDFTransformer
from sdflayers.evaluation import MaeReport, VarianceReport, mae, mae_corpus, uncertainty_experiment
from sdflayers.grid import BScan, LayerCurve, MultiLayerCurve, load_curves, load_scan, save_curves, save_scan
from sdflayers.phantom import PhantomConfig, as_arrays, export_corpus, generate, load_corpus
from sdflayers.prob import ClampConfig, ProbabilisticCurve, ProbabilisticSDF, propagate_uncertainty
from sdflayers.sdf import SignedDistanceField, check_eikonal, signed_distance, unsigned_distance

__version__ = "0.1.0"

__all__ = [
    "BScan", "LayerCurve", "MultiLayerCurve", "load_scan", "save_scan", "load_curves", "save_curves",
    "SignedDistanceField", "signed_distance", "unsigned_distance", "check_eikonal",
    "ExtractionConfig", "extract", "soft_extract", "zero_crossing", "pixelwise_extract",
    "ClampConfig", "ProbabilisticSDF", "ProbabilisticCurve", "propagate_uncertainty",
    "PhantomConfig", "generate", "as_arrays", "export_corpus", "load_corpus",
    "KINDS", "NoiseConfig", "corrupt",
    "LayerSegmenter", "SDFTransformer", "BoundaryExtractor",
    "mae", "mae_corpus", "MaeReport", "VarianceReport", "uncertainty_experiment",
]
