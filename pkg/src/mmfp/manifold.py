"""Autoencoder motion manifold: encoder g (trajectory -> R^m), decoder f (R^m -> trajectory).

Training minimizes, per minibatch,

    mean_b d^2(x_b, f(g(x_b))) + eta * mean_b |g(x_b)|^2 + delta * E(f, g)

where E is the mean squared step length of decoded trajectories at latent
points ``alpha g(x_i) + (1 - alpha) g(x_j)`` with ``alpha ~ U[low, high]``.
All losses are computed on normalized, flattened local coordinates.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError
from .liegeom import se3_local_distance_sq
from .nncore import Mlp, Trainer, cosine_lr
from .rng import make_rng
from .trajectory import Normalization, Space, Trajectory

log = logging.getLogger(__name__)


@dataclass
class ManifoldConfig:
    m: int = 3
    eta: float = 1e-2
    delta: float = 1e-1
    mixup_low: float = -0.4
    mixup_high: float = 1.4
    hidden: tuple = (128, 128)
    epochs: int = 6000
    batch_size: int = 10
    lr: float = 3e-3
    lr_final: float = 1e-5
    seed: int = 0
    rot_weight: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.m < 1:
            raise ValueError("latent dimension m must be >= 1")
        if self.eta < 0 or self.delta < 0:
            raise ValueError("eta and delta must be non-negative")
        if not self.mixup_low < self.mixup_high:
            raise ValueError("mixup_low must be < mixup_high")


@dataclass
class MotionManifold:
    """Trained encoder/decoder pair; ``encoder is None`` marks the identity adapter."""

    encoder: Mlp
    decoder: Mlp
    space: Space
    T: int
    m: int
    normalization: Normalization
    rot_weight: float = 1.0

    def __post_init__(self):
        D = self.T * self.space.local_dim
        if self.encoder is None:
            if self.m != D:
                raise ShapeError(f"identity adapter needs m = {D}, got {self.m}")
            return
        if self.encoder.spec.n_in != D or self.decoder.spec.n_out != D:
            raise ShapeError(f"encoder input / decoder output must be {D}")
        if self.encoder.spec.n_out != self.m or self.decoder.spec.n_in != self.m:
            raise ShapeError(f"encoder output / decoder input must be m = {self.m}")

    @classmethod
    def identity(cls, space, T, normalization=None):
        """Flatten/unflatten as encoder/decoder, for running latent models in trajectory space."""
        norm = normalization or Normalization.identity(space)
        return cls(None, None, space, T, T * space.local_dim, norm)

    @property
    def is_identity(self):
        return self.encoder is None

    @property
    def flat_dim(self):
        return self.T * self.space.local_dim

    # -- flat, normalized coordinates ----------------------------------------

    def to_flat(self, xs):
        """Normalized flat rows ``(N, T*d)`` for a list of trajectories."""
        rows = []
        for x in xs:
            if x.space != self.space or x.T != self.T:
                raise ShapeError(f"trajectory {x.space.to_json()}/T={x.T} does not match manifold "
                                 f"{self.space.to_json()}/T={self.T}")
            rows.append(self.normalization.apply(x.local()).reshape(-1))
        return np.stack(rows) if rows else np.zeros((0, self.flat_dim))

    def from_flat(self, F):
        F = np.atleast_2d(F)
        d = self.space.local_dim
        return [Trajectory.from_local(self.space, self.normalization.invert(f.reshape(self.T, d))) for f in F]

    def encode_flat(self, F):
        return np.array(F, dtype=np.float64) if self.is_identity else self.encoder(F)

    def decode_flat(self, Z):
        return np.array(Z, dtype=np.float64) if self.is_identity else self.decoder(Z)

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        return {
            "space": self.space.to_json(),
            "T": self.T,
            "m": self.m,
            "normalization": self.normalization.to_dict(),
            "rot_weight": self.rot_weight,
            "encoder": None if self.is_identity else self.encoder.to_dict(),
            "decoder": None if self.is_identity else self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        enc = None if d["encoder"] is None else Mlp.from_dict(d["encoder"])
        dec = None if d["decoder"] is None else Mlp.from_dict(d["decoder"])
        return cls(enc, dec, Space.from_json(d["space"]), int(d["T"]), int(d["m"]),
                   Normalization.from_dict(d["normalization"]), float(d.get("rot_weight", 1.0)))


def encode(mf, x):
    z = mf.encode_flat(mf.to_flat([x]))[0]
    return z


def decode(mf, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (mf.m,):
        raise ShapeError(f"latent must have shape ({mf.m},), got {z.shape}")
    return mf.from_flat(mf.decode_flat(z[None, :]))[0]


def encode_batch(mf, xs):
    return mf.encode_flat(mf.to_flat(xs))


def decode_batch(mf, Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != mf.m:
        raise ShapeError(f"latents must have width {mf.m}, got {Z.shape}")
    return mf.from_flat(mf.decode_flat(Z)) if len(Z) else []


def latent_mixup(z_i, z_j, alpha):
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape:
        raise ShapeError(f"mixup operands differ in shape: {z_i.shape} vs {z_j.shape}")
    return alpha * z_i + (1.0 - alpha) * z_j


# ---------------------------------------------------------------------------
# loss terms on flat normalized rows
# ---------------------------------------------------------------------------


def _step_energy(Y, T, d):
    """Per-row sum of squared consecutive differences and its gradient."""
    Y3 = Y.reshape(len(Y), T, d)
    diff = Y3[:, 1:] - Y3[:, :-1]
    e = np.einsum("ntd,ntd->n", diff, diff)
    g = np.zeros_like(Y3)
    g[:, 1:] += 2.0 * diff
    g[:, :-1] -= 2.0 * diff
    return e, g.reshape(Y.shape)


def _recon_terms(space, T, targets, Y, rot_weight):
    """Per-row d^2 between targets and flat predictions, with gradients.

    ``targets`` is flat rows for Euclidean spaces and ``(N, T, 4, 4)``
    normalized poses for SE(3).
    """
    if space.kind != "se3":
        diff = Y - targets
        return np.einsum("nd,nd->n", diff, diff), 2.0 * diff
    vals = np.empty(len(Y))
    grads = np.empty_like(Y)
    for b in range(len(Y)):
        vals[b], g = se3_local_distance_sq(targets[b], Y[b].reshape(T, 6), rot_weight)
        grads[b] = g.reshape(-1)
    return vals, grads


def _targets(mf, xs, flat):
    if mf.space.kind != "se3":
        return flat
    return np.stack([mf.normalization.apply_traj(x).points for x in xs])


def reconstruction_loss(mf, batch):
    """Mean squared trajectory distance between ``x`` and ``f(g(x))`` (normalized)."""
    if not batch:
        raise ShapeError("reconstruction_loss needs a non-empty batch")
    F = mf.to_flat(batch)
    Y = mf.decode_flat(mf.encode_flat(F))
    vals, _ = _recon_terms(mf.space, mf.T, _targets(mf, batch, F), Y, mf.rot_weight)
    return float(np.mean(vals))


def smoothness_energy(mf, z_samples):
    """Mean over latent samples of the summed squared step length of ``f(z)``."""
    Z = np.atleast_2d(np.asarray(z_samples, dtype=np.float64))
    if len(Z) == 0:
        raise ShapeError("smoothness_energy needs at least one latent sample")
    e, _ = _step_energy(mf.decode_flat(Z), mf.T, mf.space.local_dim)
    return float(np.mean(e))


@dataclass
class ObjectiveTerms:
    total: float
    recon: float
    latent_norm: float
    smoothness: float
    grads: dict = field(repr=False, default_factory=dict)


def manifold_objective(encoder, decoder, space, T, F, targets, pair_a, pair_b, alphas, cfg):
    """Objective value, its three terms, and gradients for one minibatch.

    ``F``/``targets`` hold the batch; ``pair_a``/``pair_b`` are flat rows of the
    mixup pairs and ``alphas`` their weights.  Mixup work is skipped when
    ``cfg.delta == 0``.
    """
    B = len(F)
    M = len(alphas) if cfg.delta > 0 else 0
    enc_in = np.concatenate([F, pair_a[:M], pair_b[:M]]) if M else F
    Zall, enc_cache = encoder.forward(enc_in)
    Z = Zall[:B]
    if M:
        za, zb = Zall[B : B + M], Zall[B + M :]
        Zmix = alphas[:, None] * za + (1.0 - alphas[:, None]) * zb
        dec_in = np.concatenate([Z, Zmix])
    else:
        dec_in = Z
    Yall, dec_cache = decoder.forward(dec_in)

    d = space.local_dim
    rvals, rgrad = _recon_terms(space, T, targets, Yall[:B], cfg.rot_weight)
    recon = float(np.mean(rvals))
    latent = float(np.mean(np.einsum("nm,nm->n", Z, Z)))
    g_Y = np.zeros_like(Yall)
    g_Y[:B] = rgrad / B
    smooth = 0.0
    if M:
        evals, egrad = _step_energy(Yall[B:], T, d)
        smooth = float(np.mean(evals))
        g_Y[B:] = cfg.delta * egrad / M

    g_dec, g_zin = decoder.backward(dec_cache, g_Y)
    g_Z = np.zeros_like(Zall)
    g_Z[:B] = g_zin[:B] + (2.0 * cfg.eta / B) * Z
    if M:
        g_mix = g_zin[B:]
        g_Z[B : B + M] = alphas[:, None] * g_mix
        g_Z[B + M :] = (1.0 - alphas[:, None]) * g_mix
    g_enc, _ = encoder.backward(enc_cache, g_Z)
    total = recon + cfg.eta * latent + cfg.delta * smooth
    return ObjectiveTerms(total, recon, latent, smooth, {"encoder": g_enc, "decoder": g_dec})


def build_networks(space, T, cfg):
    D = T * space.local_dim
    enc = Mlp.create((D, *cfg.hidden, cfg.m), cfg.seed, "encoder")
    dec = Mlp.create((cfg.m, *reversed(cfg.hidden), D), cfg.seed, "decoder")
    return enc, dec


def train_manifold(dataset, cfg=None, callback=None):
    """Fit the autoencoder; returns ``(MotionManifold, history)``.

    ``history`` has one dict per epoch with the mean recon, latent_norm,
    smoothness and total values over that epoch's steps.
    """
    cfg = cfg or ManifoldConfig()
    if len(dataset) == 0:
        raise ShapeError("cannot train a manifold on an empty dataset")
    space, T = dataset.space, dataset.T
    enc, dec = build_networks(space, T, cfg)
    mf = MotionManifold(enc, dec, space, T, cfg.m, dataset.normalization, cfg.rot_weight)
    F_all = mf.to_flat(dataset.trajectories)
    tgt_all = _targets(mf, dataset.trajectories, F_all)
    N = len(F_all)
    batch_rng = make_rng(cfg.seed, "manifold-batches")
    mix_rng = make_rng(cfg.seed, "manifold-mixup")
    trainer = Trainer({"encoder": enc, "decoder": dec}, lr=cfg.lr)
    history = []
    bs = min(cfg.batch_size, N)
    steps_per_epoch = -(-N // bs)
    total_steps = cfg.epochs * steps_per_epoch
    step_no = 0
    for epoch in range(cfg.epochs):
        perm = batch_rng.permutation(N)
        sums = np.zeros(4)
        steps = 0
        for start in range(0, N, bs):
            idx = perm[start : start + bs]
            M = len(idx)
            ia = mix_rng.integers(N, size=M)
            ib = mix_rng.integers(N, size=M)
            alphas = mix_rng.uniform(cfg.mixup_low, cfg.mixup_high, size=M)
            terms = manifold_objective(enc, dec, space, T, F_all[idx], tgt_all[idx],
                                       F_all[ia], F_all[ib], alphas, cfg)
            if not np.isfinite(terms.total):
                raise TrainingError(f"manifold loss became non-finite in epoch {epoch}", epoch - 1)
            trainer.set_lr(cosine_lr(cfg.lr, cfg.lr_final, step_no, total_steps))
            trainer.step(terms.grads)
            step_no += 1
            sums += (terms.recon, terms.latent_norm, terms.smoothness, terms.total)
            steps += 1
        rec = dict(zip(("recon", "latent_norm", "smoothness", "total"), (sums / steps).tolist()))
        rec["epoch"] = epoch
        history.append(rec)
        if callback is not None:
            callback(rec)
        if epoch % 500 == 0 or epoch == cfg.epochs - 1:
            log.info("manifold epoch %d: %s", epoch, rec)
    return mf, history


def config_dict(cfg):
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
