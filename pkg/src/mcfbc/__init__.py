"""Multi-color-space face anti-spoofing with factorized bilinear coding."""
from .colorspace import ImageTensor, convert, convert_batch, read_image, write_image
from .fbc import FbcParams, bilinear_pool, fbc_encode, max_aggregate, soft_threshold
from .loss import FocalParams, focal_loss, cross_entropy
from .metrics import apcer_bpcer_acer, eer, report
from .model import Model, ModelConfig, FbcConfig
from .train import TrainConfig, lr_schedule, train

__version__ = "0.1.0"
