"""End-to-end training steps shared by the command line and the test suite."""

import logging
from dataclasses import asdict

import numpy as np

from .checkpoint import Checkpoint
from .errors import ConfigError
from .latentdiffusion import DiffusionHead, DiffusionTrainConfig, train_latent_diffusion
from .latentflow import FlowHead, FlowTrainConfig, LatentScaler, SamplerConfig, latent_task_pairs, train_latent_flow
from .manifold import ManifoldConfig, MotionManifold, encode_batch, train_manifold
from .textcond import HashTextEncoder

log = logging.getLogger(__name__)


def _plain(cfg):
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def fit_manifold(dataset, cfg=None, text_encoder=None):
    """Train the motion manifold and wrap it in a checkpoint without a generative head."""
    cfg = cfg or ManifoldConfig()
    mf, history = train_manifold(dataset, cfg)
    ckpt = Checkpoint(mf, text_encoder or HashTextEncoder(), dataset_fingerprint=dataset.fingerprint(),
                      configs={"manifold": _plain(cfg)})
    return ckpt, history


def identity_checkpoint(dataset, text_encoder=None):
    """Checkpoint with the flatten/unflatten adapter, for trajectory-space baselines."""
    mf = MotionManifold.identity(dataset.space, dataset.T, dataset.normalization)
    return Checkpoint(mf, text_encoder or HashTextEncoder(), dataset_fingerprint=dataset.fingerprint(),
                      configs={"manifold": "identity"})


def _check_dataset(ckpt, dataset):
    fp = dataset.fingerprint()
    if ckpt.dataset_fingerprint and ckpt.dataset_fingerprint != fp:
        raise ConfigError(f"checkpoint was trained on dataset {ckpt.dataset_fingerprint[:12]}..., "
                          f"got {fp[:12]}...")


def _latent_pairs(ckpt, dataset):
    _check_dataset(ckpt, dataset)
    Z, texts = latent_task_pairs(ckpt.manifold, dataset)
    scaler = LatentScaler.fit(encode_batch(ckpt.manifold, dataset.trajectories))
    return scaler.apply(Z), texts, scaler


def fit_flow_head(ckpt, dataset, paraphrases=None, cfg=None, sampler=None):
    """Train the text head and vector field on standardized latents; returns ``(ckpt, history)``."""
    cfg = cfg or FlowTrainConfig()
    sampler = sampler or SamplerConfig(seed=cfg.seed)
    Z, texts, scaler = _latent_pairs(ckpt, dataset)
    field, head, history = train_latent_flow(Z, texts, ckpt.text_encoder, paraphrases, cfg)
    out = ckpt.with_head(head, FlowHead(field, sampler, scaler), {"flow": _plain(cfg)})
    return out, history


def fit_diffusion_head(ckpt, dataset, paraphrases=None, cfg=None):
    """Train the text head and noise-prediction net; returns ``(ckpt, history)``."""
    cfg = cfg or DiffusionTrainConfig()
    Z, texts, scaler = _latent_pairs(ckpt, dataset)
    net, head, history = train_latent_diffusion(Z, texts, ckpt.text_encoder, paraphrases, cfg)
    out = ckpt.with_head(head, DiffusionHead(net, cfg.noise_schedule(), scaler), {"diffusion": _plain(cfg)})
    return out, history


def final_losses(history):
    return {k: float(v) for k, v in history[-1].items() if k != "epoch"} if history else {}


def latent_spread(ckpt, dataset):
    """Per-dimension standard deviation of the encoded demonstrations."""
    return np.std(encode_batch(ckpt.manifold, dataset.trajectories), axis=0)
