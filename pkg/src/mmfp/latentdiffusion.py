"""Latent diffusion baselines with an epsilon-prediction network.

Three noise paths are provided: variance-exploding (geometric sigma),
variance-preserving with a linear beta schedule and variance-preserving with
the cosine alpha-bar schedule.  Step ``t = 0`` is clean data and ``t = N`` is
the most noised level.  Training shares the text head and batching of the flow
trainer, so either head can be plugged into the same checkpoint.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SamplerError, ShapeError
from .latentflow import FlowTrainConfig, LatentScaler, VectorField, paraphrase_penalty, train_conditional_head
from .rng import make_rng

log = logging.getLogger(__name__)

SCHEDULES = ("ve", "vp_linear", "vp_cosine")
SCHEDULE_ALIASES = {"ve": "ve", "vp1": "vp_linear", "vp2": "vp_cosine",
                    "vp_linear": "vp_linear", "vp_cosine": "vp_cosine"}
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "vp_cosine"
    n_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    sigma_min: float = 0.01
    sigma_max: float = 10.0

    def __post_init__(self):
        kind = SCHEDULE_ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {sorted(SCHEDULE_ALIASES)}")
        object.__setattr__(self, "kind", kind)
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if kind == "ve" and not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("VE schedule needs 0 < sigma_min < sigma_max")
        if kind == "vp_linear" and not 0.0 < self.beta_min < self.beta_max < 1.0:
            raise ValueError("linear VP schedule needs 0 < beta_min < beta_max < 1")
        object.__setattr__(self, "_tables", self._build())

    @property
    def is_vp(self):
        return self.kind != "ve"

    def _build(self):
        N = self.n_steps
        if self.kind == "ve":
            sigma = self.sigma_min * (self.sigma_max / self.sigma_min) ** (np.arange(N + 1) / N)
            sigma[0], sigma[-1] = self.sigma_min, self.sigma_max
            return {"sigma": sigma}
        if self.kind == "vp_linear":
            beta = np.concatenate([[0.0], np.linspace(self.beta_min, self.beta_max, N)])
            alpha_bar = np.cumprod(1.0 - beta)
        else:
            f = np.cos((np.arange(N + 1) / N + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2) ** 2
            alpha_bar = f / f[0]
            beta = np.concatenate([[0.0], np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], MAX_BETA)])
            alpha_bar = np.cumprod(1.0 - beta)
        alpha_bar[0] = 1.0
        return {"beta": beta, "alpha_bar": alpha_bar}

    @property
    def sigma(self):
        return self._tables["sigma"]

    @property
    def beta(self):
        return self._tables["beta"]

    @property
    def alpha_bar(self):
        return self._tables["alpha_bar"]

    def signal_noise(self, t):
        """``(a_t, b_t)`` such that ``z_t = a_t z1 + b_t eps``."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.n_steps):
            raise ValueError(f"step index out of range [0, {self.n_steps}]")
        if self.kind == "ve":
            return np.ones(t.shape), self.sigma[t]
        ab = self.alpha_bar[t]
        return np.sqrt(ab), np.sqrt(1.0 - ab)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("kind", "n_steps", "beta_min", "beta_max", "sigma_min", "sigma_max")}


def forward_noising(z1, t, sched, eps):
    z1 = np.asarray(z1, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z1.shape != eps.shape:
        raise ShapeError(f"z1 {z1.shape} and eps {eps.shape} differ")
    if not 0 <= int(t) <= sched.n_steps or int(t) != t:
        raise ValueError(f"step index {t} out of range [0, {sched.n_steps}]")
    a, b = sched.signal_noise(int(t))
    return a * z1 + b * eps


@dataclass
class DiffusionTrainConfig(FlowTrainConfig):
    schedule: str = "vp_cosine"
    n_steps: int = 1000

    def noise_schedule(self):
        return NoiseSchedule(self.schedule, self.n_steps)


def draw_diffusion(rng, n, m, n_steps):
    """``t`` uniform over ``{1, ..., N}`` then ``eps ~ N(0, I_m)``."""
    t = rng.integers(1, n_steps + 1, size=n)
    eps = rng.standard_normal((n, m))
    return t, eps


def denoising_loss(net, head, Z1, C, sched, t, eps):
    """``mean |eps_theta(z_t, t/N, h(c)) - eps|^2`` on frozen draws."""
    Z1 = np.atleast_2d(Z1)
    a, b = sched.signal_noise(t)
    Zt = a[:, None] * Z1 + b[:, None] * eps
    r = net.net(net.inputs(t / sched.n_steps, Zt, head(np.atleast_2d(C)))) - eps
    return float(np.mean(np.einsum("nm,nm->n", r, r)))


def diffusion_objective(net, head, Z1, text_idx, para_idx, C, sched, t, eps, gamma, item_of_draw):
    """Loss and gradients, mirroring :func:`mmfp.latentflow.fm_objective`."""
    B = len(Z1)
    H, h_cache = head.forward(C)
    counts = np.bincount(item_of_draw, minlength=B).astype(np.float64)
    w = 1.0 / (counts[item_of_draw] * B)
    a, b = sched.signal_noise(t)
    Zt = a[:, None] * Z1[item_of_draw] + b[:, None] * eps
    out, cache = net.net.forward(net.inputs(t / sched.n_steps, Zt, H[text_idx[item_of_draw]]))
    r = out - eps
    main = float(np.sum(w * np.einsum("nm,nm->n", r, r)))
    g_net, g_in = net.net.backward(cache, 2.0 * w[:, None] * r)
    g_H = np.zeros_like(H)
    np.add.at(g_H, text_idx[item_of_draw], g_in[:, -net.p:])
    reg = paraphrase_penalty(H, text_idx, para_idx, gamma, g_H)
    g_h, _ = head.backward(h_cache, g_H, input_grad=False)
    return main + gamma * reg, main, reg, {"field": g_net, "head": g_h}


def train_latent_diffusion(Z, texts, encoder, paraphrases=None, cfg=None, callback=None):
    """Jointly fit the noise-prediction net and text head; returns ``(net, head, history)``."""
    cfg = cfg or DiffusionTrainConfig()
    sched = cfg.noise_schedule()
    Z = np.asarray(Z, dtype=np.float64)
    net = VectorField.create(Z.shape[1], cfg.p, cfg.hidden, cfg.seed, cfg.time_features, name="score-net")

    def objective(net, head, Zb, tidx, pidx, C, rng, gamma):
        item = np.repeat(np.arange(len(Zb)), cfg.draws_per_pair)
        t, eps = draw_diffusion(rng, len(item), Zb.shape[1], sched.n_steps)
        return diffusion_objective(net, head, Zb, tidx, pidx, C, sched, t, eps, gamma, item)

    head, history = train_conditional_head(Z, texts, encoder, paraphrases, cfg, net, objective, "diffusion", callback)
    return net, head, history


def sample_diffusion(net, tau, sched, seed=0, n=None, rng=None, zN=None):
    """Ancestral sampling from ``t = N`` down to ``0``.

    VP uses the DDPM posterior step with variance ``beta~_t``.  VE uses the
    ancestral analog with variance ``(sigma_t^2 - sigma_{t-1}^2) sigma_{t-1}^2 / sigma_t^2``.
    The final step adds no noise.  Returns one point when neither ``n`` nor a
    batched ``zN`` is given.
    """
    rng = rng if rng is not None else make_rng(seed, "sample-diffusion")
    single = n is None and (zN is None or np.ndim(zN) == 1)
    if zN is None:
        zN = rng.standard_normal((n or 1, net.m))
        if not sched.is_vp:
            zN = sched.sigma_max * zN
    z = np.atleast_2d(np.asarray(zN, dtype=np.float64)).copy()
    N = sched.n_steps
    for t in range(N, 0, -1):
        eps_hat = net.net(net.inputs(t / N, z, tau))
        noise = rng.standard_normal(z.shape) if t > 1 else None
        if sched.is_vp:
            beta, ab, ab_prev = sched.beta[t], sched.alpha_bar[t], sched.alpha_bar[t - 1]
            z = (z - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
            if noise is not None:
                z = z + np.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)) * noise
        else:
            s2, s2_prev = sched.sigma[t] ** 2, sched.sigma[t - 1] ** 2
            # eps_hat / sigma_t estimates -score
            z = z - (s2 - s2_prev) / sched.sigma[t] * eps_hat
            if noise is not None:
                z = z + np.sqrt((s2 - s2_prev) * s2_prev / s2) * noise
        if not np.all(np.isfinite(z)):
            raise SamplerError(f"non-finite state at diffusion step {t}", step=t)
    return z[0] if single else z


@dataclass
class DiffusionHead:
    net: VectorField
    schedule: NoiseSchedule
    scaler: LatentScaler = None

    kind = "diffusion"

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = LatentScaler.identity(self.net.m)
        if len(self.scaler.offset) != self.net.m:
            raise ShapeError(f"latent scaler has dim {len(self.scaler.offset)}, net has m={self.net.m}")

    @property
    def m(self):
        return self.net.m

    @property
    def p(self):
        return self.net.p

    def sample(self, tau, n, rng, sampler=None):
        return self.scaler.invert(sample_diffusion(self.net, tau, self.schedule, n=n, rng=rng))

    def to_dict(self):
        return {"kind": "diffusion", "net": self.net.to_dict(), "schedule": self.schedule.to_dict(),
                "scaler": self.scaler.to_dict()}

    @classmethod
    def from_dict(cls, d):
        sc = d.get("scaler")
        return cls(VectorField.from_dict(d["net"]), NoiseSchedule(**d["schedule"]),
                   None if sc is None else LatentScaler.from_dict(sc))


def config_dict(cfg):
    return asdict(cfg)
