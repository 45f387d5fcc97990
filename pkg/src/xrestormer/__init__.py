"""Numpy implementation of an X-Restormer style restoration backbone with its
degradation models, metrics, trainer and benchmark harness."""
from .errors import ConfigError, ContractError, NumericError, ShapeError, XRestormerError
from .tensor import Tensor, backward, no_grad, tensor
from .model import (ModelConfig, ModelState, build_model, cast_model, count_parameters, forward,
                    load_checkpoint, restore, restore_sr, save_checkpoint, zero_output_projections)
from .degradations import SR, Haze, MotionBlur, Noise, Rain, apply, spec_from_text, spec_to_text
from .metrics import MetricConfig, metric_config_for, psnr, rgb_to_y, ssim
from .trainer import PairedDataset, Sample, TrainConfig, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "NumericError", "ShapeError", "XRestormerError",
    "Tensor", "backward", "no_grad", "tensor",
    "ModelConfig", "ModelState", "build_model", "cast_model", "count_parameters", "forward",
    "load_checkpoint", "restore", "restore_sr", "save_checkpoint", "zero_output_projections",
    "SR", "Haze", "MotionBlur", "Noise", "Rain", "apply", "spec_from_text", "spec_to_text",
    "MetricConfig", "metric_config_for", "psnr", "rgb_to_y", "ssim",
    "PairedDataset", "Sample", "TrainConfig", "lr_at", "train",
]
