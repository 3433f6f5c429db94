"""Text-conditioned motion generation with flow matching on learned motion manifolds.

Pipeline: an autoencoder learns a low-dimensional motion manifold from
demonstrations; a text head maps sentence vectors to task embeddings; a
conditional flow (or a diffusion baseline) is trained in latent space and
decoded back to trajectories.
"""

from .checkpoint import Checkpoint
from .datagen import GENERATORS, MotionDataset, gen_se3_pouring, gen_toy2d, gen_waving7dof
from .errors import (ConfigError, MissingEmbeddingError, MMFPError, NumericError, ParseError, SamplerError,
                     ShapeError, TrainingError, ValidationError)
from .latentdiffusion import DiffusionHead, DiffusionTrainConfig, NoiseSchedule, sample_diffusion
from .latentflow import FlowHead, FlowTrainConfig, SamplerConfig, generate_motion, sample_latent, train_latent_flow
from .manifold import ManifoldConfig, MotionManifold, decode, encode, train_manifold
from .metrics import KernelSpec, mmd_sq, motion_accuracy, train_classifier
from .pipeline import fit_diffusion_head, fit_flow_head, fit_manifold
from .trajectory import Space, Trajectory

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConfigError", "DiffusionHead", "DiffusionTrainConfig", "FlowHead", "FlowTrainConfig",
    "GENERATORS", "KernelSpec", "ManifoldConfig", "MissingEmbeddingError", "MMFPError", "MotionDataset",
    "MotionManifold", "NoiseSchedule", "NumericError", "ParseError", "SamplerConfig", "SamplerError", "ShapeError",
    "Space", "TrainingError", "Trajectory", "ValidationError", "decode", "encode", "fit_diffusion_head",
    "fit_flow_head", "fit_manifold", "gen_se3_pouring", "gen_toy2d", "gen_waving7dof", "generate_motion",
    "mmd_sq", "motion_accuracy", "sample_diffusion", "sample_latent", "train_classifier", "train_latent_flow",
    "train_manifold",
]
