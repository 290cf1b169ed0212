"""Motion-aware video super-resolution toolkit.

Trains 4x upscaling networks under two objectives: a flow-weighted pixel
loss that spends capacity on moving regions, and a siamese warp-consistency
loss that suppresses temporal flicker. Everything runs on a small built-in
reverse-mode autodiff core over numpy arrays, with Horn-Schunck optical
flow, Middlebury .flo IO, and PSNR/SSIM/warp-error evaluation included.
"""

from .autograd import Parameter, Tape, Tensor, backward, bilinear_warp, conv2d
from .config import ConfigError, RunConfig, make_config
from .flow import FlowField, WeightMap, endpoint_error, estimate_flow, flo_read, flo_write, weight_map
from .models import build_discriminator, build_feature_extractor, build_sr_net, load_checkpoint, save_checkpoint
from .optim import Adam

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConfigError",
    "FlowField",
    "Parameter",
    "RunConfig",
    "Tape",
    "Tensor",
    "WeightMap",
    "backward",
    "bilinear_warp",
    "build_discriminator",
    "build_feature_extractor",
    "build_sr_net",
    "conv2d",
    "endpoint_error",
    "estimate_flow",
    "flo_read",
    "flo_write",
    "load_checkpoint",
    "make_config",
    "save_checkpoint",
    "weight_map",
    "__version__",
]
