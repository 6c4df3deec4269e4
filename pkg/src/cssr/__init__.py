"""Super-resolution for camera-captured screen images.

A small numpy autodiff engine drives DuRCAN (the restoration network) and a
degradation GAN that learns to synthesise realistic low-resolution inputs.
Around them sit a synthetic degradation simulator, a homography-based
rectification pipeline, PSNR/SSIM metrics and a joint training loop.
"""

from .autodiff import Parameter, Tensor, backward, no_grad
from .durcan import DuRCAN, DuRCANConfig, build_durcan
from .errors import ConfigurationError, EstimationError, ImageIOError, NumericError, ShapeError
from .trainer import TrainConfig, train_joint

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad",
    "DuRCAN", "DuRCANConfig", "build_durcan",
    "TrainConfig", "train_joint",
    "ConfigurationError", "EstimationError", "ImageIOError", "NumericError", "ShapeError",
]
