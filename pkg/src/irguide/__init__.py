"""Loss-gradient guidance for DDIM sampling, on a toy infrared super-resolution task."""

__version__ = "0.1.0"

from .degradation import DegradationModel, degrade, degrade_adjoint, upsample_bicubic
from .denoiser import AnalyticGaussian, ConvDenoiser, train_denoiser
from .guidance import (GuidancePolicy, GuidanceTerm, adjust_noise, guidance_grad_xt,
                       make_data_fidelity_term, make_identity_term, make_perceptual_term,
                       make_visual_term)
from .grid import Rng
from .metrics import psnr, ssim
from .perceptual import FeatureExtractor, SoftSegmenter, perceptual_loss, perceptual_loss_grad
from .sampler import SamplerConfig, ddim_step, guided_sample
from .schedule import NoiseSchedule, build_schedule, forward_diffuse
from .spectral import visual_loss, visual_loss_grad

__all__ = [
    "AnalyticGaussian", "ConvDenoiser", "DegradationModel", "FeatureExtractor", "GuidancePolicy",
    "GuidanceTerm", "NoiseSchedule", "Rng", "SamplerConfig", "SoftSegmenter", "adjust_noise",
    "build_schedule", "ddim_step", "degrade", "degrade_adjoint", "forward_diffuse",
    "guidance_grad_xt", "guided_sample", "make_data_fidelity_term", "make_identity_term",
    "make_perceptual_term", "make_visual_term", "perceptual_loss", "perceptual_loss_grad", "psnr",
    "ssim", "train_denoiser", "upsample_bicubic", "visual_loss", "visual_loss_grad",
]
