"""Image-domain CT kernel synthesis that stays consistent across display fields of view.

An image reconstructed with a smooth kernel is converted to the look of a
sharper kernel by unrolled alternating minimization: a spectral
data-consistency step built from the two kernels' MTFs, evaluated on the
image's own frequency grid, alternates with a small learned projection
network shared by all unrolls.
"""

__version__ = "0.1.0"

from .core import FrequencyGrid, Image, Spectrum, read_ksim, write_ksim
from .denoiser import DenoiserParams, denoise, init_params, load_checkpoint, save_checkpoint
from .evaluation import MtfCurve, estimate_mtf, image_metrics, mtf_fidelity, profile_curve
from .forward import ForwardOperator, direct_ratio_synthesis, make_operator, tikhonov_init
from .losses import loss, ssim
from .mtf import (DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, KernelMtfProfile, ratio_filter,
                  sharp_boosted, smooth_gaussian)
from .phantoms import NoiseModel, make_training_pair, shepp_logan, simulate_pairs, wire_phantom
from .training import OperatorFactory, TrainConfig, predict, train
from .unrolled import UnrollConfig, synthesize, synthesize_with_tape

__all__ = [
    "__version__",
    "FrequencyGrid", "Image", "Spectrum", "read_ksim", "write_ksim",
    "DenoiserParams", "denoise", "init_params", "load_checkpoint", "save_checkpoint",
    "MtfCurve", "estimate_mtf", "image_metrics", "mtf_fidelity", "profile_curve",
    "ForwardOperator", "direct_ratio_synthesis", "make_operator", "tikhonov_init",
    "loss", "ssim",
    "DEFAULT_INPUT_MTF", "DEFAULT_TARGET_MTF", "KernelMtfProfile", "ratio_filter",
    "sharp_boosted", "smooth_gaussian",
    "NoiseModel", "make_training_pair", "shepp_logan", "simulate_pairs", "wire_phantom",
    "OperatorFactory", "TrainConfig", "predict", "train",
    "UnrollConfig", "synthesize", "synthesize_with_tape",
]
