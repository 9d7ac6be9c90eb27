"""Seeded Gaussian image codec.

Fits an image with MLP-decoded 2D Gaussians anchored at seed points,
compresses the seed attributes with a context-model-driven range coder,
and decodes the stream back to a renderable Gaussian set.
"""

from .codec import DecodedModel, decode_model, encode_model
from .image import Image, build_pyramid, load_image, psnr, save_image, ssim
from .model import ModelConfig
from .trainer import TrainConfig, TrainResult, evaluate, render_at_scale, train

__version__ = "0.1.0"

__all__ = [
    "DecodedModel", "Image", "ModelConfig", "TrainConfig", "TrainResult",
    "build_pyramid", "decode_model", "encode_model", "evaluate", "load_image",
    "psnr", "render_at_scale", "save_image", "ssim", "train", "__version__",
]
