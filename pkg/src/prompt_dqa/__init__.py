"""Prompt-tuned dual-encoder quality scoring for dehazed images.

A small frozen text/vision transformer pair is adapted by learnable
per-layer prompts; an image's quality is the mean, over local patches
(optionally joined by a resized global view), of the softmax weight the
image embedding puts on a positive versus a negative text prompt.
"""

from .encoder import ModelConfig, encode_image, encode_text, init_backbone, tokenize
from .metrics import correlations, krcc, plcc, srcc
from .prompting import HandcraftedPrompts, PromptBank, init_prompt_bank
from .protocol import METHODS, MetricsReport, build_model, evaluate, run_protocol
from .scoring import QualityModel, patch_score, predict_image_quality
from .tensor import ContractError, ShapeError, Tape, Tensor, make_rng
from .training import TrainConfig, fit

__all__ = [
    "ContractError", "HandcraftedPrompts", "METHODS", "MetricsReport", "ModelConfig",
    "PromptBank", "QualityModel", "ShapeError", "Tape", "Tensor", "TrainConfig",
    "build_model", "correlations", "encode_image", "encode_text", "evaluate", "fit",
    "init_backbone", "init_prompt_bank", "krcc", "make_rng", "patch_score", "plcc",
    "predict_image_quality", "run_protocol", "srcc", "tokenize",
]
__version__ = "0.1.0"
