"""Infrared/visible image fusion with an attention-masked spatial critic and a
Haar-wavelet frequency critic, built on a small numpy autodiff engine."""

from . import tensor
from .discriminators import FrequencyCritic, SpatialCritic, d_fre_score, d_spa_score
from .generator import Generator, generate
from .images import load_image, paired_dataset, resize_bilinear, save_image
from .losses import LossWeights, adv_loss, content_loss, critic_loss, gradient_penalty, mse, ssim_paper
from .mask import apply_mask, connected_components, extract_target_mask, threshold_map
from .metrics import MetricReport, evaluate_pair
from .tensor import Tensor
from .trainer import (ModelCheckpoint, TrainConfig, fuse, load_checkpoint, load_config, save_checkpoint,
                      train)
from .wavelet import SubbandSet, haar_dwt2, haar_idwt2, haar_stack

__version__ = "0.1.0"

__all__ = [
    "tensor", "Tensor",
    "Generator", "generate", "SpatialCritic", "FrequencyCritic", "d_spa_score", "d_fre_score",
    "SubbandSet", "haar_dwt2", "haar_idwt2", "haar_stack",
    "threshold_map", "connected_components", "extract_target_mask", "apply_mask",
    "LossWeights", "mse", "ssim_paper", "content_loss", "adv_loss", "gradient_penalty", "critic_loss",
    "MetricReport", "evaluate_pair",
    "TrainConfig", "ModelCheckpoint", "train", "fuse", "load_config", "load_checkpoint", "save_checkpoint",
    "load_image", "save_image", "resize_bilinear", "paired_dataset",
]
