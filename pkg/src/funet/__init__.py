"""Flow-guided encoder-decoder video segmentation.

Horn-Schunck optical flow gives a binary motion mask per frame; the mask is
stacked onto the RGB frame and a small encoder-decoder predicts the
foreground. Everything runs on numpy.
"""
from .estimator import FUNetSegmenter, MotionMaskExtractor, make_funet_pipeline
from .evaluation import EvalReport, dice, evaluate_sequence
from .flow import HSParams, estimate_flow
from .model import FUNetConfig
from .motionmask import MaskParams
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FUNetConfig",
    "FUNetSegmenter",
    "HSParams",
    "MaskParams",
    "MotionMaskExtractor",
    "TrainConfig",
    "dice",
    "estimate_flow",
    "evaluate_sequence",
    "make_funet_pipeline",
    "train",
]
