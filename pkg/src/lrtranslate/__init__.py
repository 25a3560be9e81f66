"""Image-to-image translation conditioned on a low-resolution target."""

__version__ = "0.1.0"

from .data import Dataset, DatasetSpec, load_dataset, make_pair, sample_batch
from .discriminator import Discriminator, DiscriminatorConfig
from .downscale import COLOR_RESOLUTION, DownscaleSpec, difference_map, downscale, quantize, quantize_st
from .estimator import LowResTranslator, LRDownscaler
from .evaluation import EvalProtocol, MetricReport, evaluate_model
from .generator import Generator, GeneratorConfig
from .metrics import FeatureSet, density_coverage, fid, perceptual_distance
from .norm_layers import MomentPair, instance_norm, pono
from .trainer import (TrainConfig, Trainer, apply_spectral_norm, load_checkpoint, save_checkpoint,
                      warm_up_spectral_norm)

__all__ = [
    "COLOR_RESOLUTION", "Dataset", "DatasetSpec", "Discriminator", "DiscriminatorConfig",
    "DownscaleSpec", "EvalProtocol", "FeatureSet", "Generator", "GeneratorConfig",
    "LRDownscaler", "LowResTranslator", "MetricReport", "MomentPair", "TrainConfig", "Trainer",
    "apply_spectral_norm", "density_coverage", "difference_map", "downscale", "evaluate_model",
    "fid", "instance_norm", "load_checkpoint", "load_dataset", "make_pair", "perceptual_distance",
    "pono", "quantize", "quantize_st", "sample_batch", "save_checkpoint", "warm_up_spectral_norm",
]
