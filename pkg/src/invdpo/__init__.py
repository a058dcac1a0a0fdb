"""Inversion-DPO and Diffusion-DPO preference post-training for a toy 2-D diffusion model."""

from .denoiser import Denoiser, eps_forward, x0_predict
from .diffusion import Trajectory, base_loss, forward_noise, sample
from .dpo import DpoConfig, LossResult, TermCounter, diffusion_dpo_loss, dpo_loss, inversion_dpo_loss
from .inversion import adjacent_eps_gap, invert, invert_step, roundtrip_error
from .numerics import RngState, finite_diff_grad, gaussian_sample
from .preference import CandidatePool, PreferencePair, aggregate_reward, dynamic_pairs
from .schedule import NoiseSchedule, make_schedule, snr_log
from .trainer import AdamW, AdamWConfig, posttrain, pretrain_base

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AdamWConfig", "CandidatePool", "Denoiser", "DpoConfig", "LossResult", "NoiseSchedule",
    "PreferencePair", "RngState", "TermCounter", "Trajectory", "adjacent_eps_gap", "aggregate_reward",
    "base_loss", "diffusion_dpo_loss", "dpo_loss", "dynamic_pairs", "eps_forward", "finite_diff_grad",
    "forward_noise", "gaussian_sample", "invert", "invert_step", "inversion_dpo_loss", "make_schedule",
    "posttrain", "pretrain_base", "roundtrip_error", "sample", "snr_log", "x0_predict",
]
