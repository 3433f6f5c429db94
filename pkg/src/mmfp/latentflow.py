"""Text-conditioned flow matching in the manifold's latent space.

The vector field ``v(s, z, tau)`` is trained jointly with the text head
``h: c -> tau`` on

    mean_i |v(s_i, z_s^i, h(c^i)) - (z^i - z0_i)|^2
        + gamma * mean_i mean_k |h(c^i) - h(c~^ik)|^2

with ``z_s = (1 - s) z0 + s z``, ``s ~ U[0, 1]``, ``z0 ~ N(0, I)`` and
``c~^ik`` the paraphrase vectors of ``c^i``.  Sampling integrates
``dz/ds = v(s, z, tau)`` from ``s = 0`` to ``1``.
"""

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SamplerError, ShapeError, TrainingError
from .manifold import decode_batch, encode_batch
from .nncore import Mlp, Trainer, cosine_lr
from .rng import make_rng
from .textcond import DEFAULT_HEAD_HIDDEN, encode_many, make_text_head

log = logging.getLogger(__name__)

SOLVERS = ("euler", "rk4")


@dataclass
class FlowTrainConfig:
    gamma: float = 0.1
    K: int = None  # paraphrases per annotation per step; None = all available
    p: int = 3
    head_hidden: tuple = DEFAULT_HEAD_HIDDEN
    hidden: tuple = (128, 128, 128)
    time_features: str = "raw"
    epochs: int = 12000
    batch_size: int = 64
    draws_per_pair: int = 8
    lr: float = 1e-2
    lr_final: float = 1e-5
    seed: int = 0
    prior_scale: float = 1.0  # z0 ~ N(0, prior_scale^2 I); 0 pins z0 to the origin

    def __post_init__(self):
        self.head_hidden = tuple(self.head_hidden)
        self.hidden = tuple(self.hidden)
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.time_features not in ("raw", "sinusoidal"):
            raise ValueError(f"unknown time_features {self.time_features!r}")


@dataclass
class SamplerConfig:
    steps: int = 100
    solver: str = "euler"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sampler needs at least one step")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")


N_FREQ = 4


def time_embedding(s, kind):
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    if kind == "raw":
        return s
    k = np.arange(1, N_FREQ + 1)
    return np.concatenate([s, np.sin(np.pi * k * s), np.cos(np.pi * k * s)], axis=1)


def time_width(kind):
    return 1 if kind == "raw" else 1 + 2 * N_FREQ


class VectorField:
    """MLP on the concatenated input ``(s-features, z, tau)``."""

    def __init__(self, net, m, p, time_features="raw"):
        if net.spec.n_in != time_width(time_features) + m + p or net.spec.n_out != m:
            raise ShapeError(f"vector field net {net.spec.layer_sizes} does not fit m={m}, p={p}")
        self.net, self.m, self.p, self.time_features = net, m, p, time_features

    @classmethod
    def create(cls, m, p, hidden=(128, 128, 128), seed=0, time_features="raw", name="vector-field"):
        net = Mlp.create((time_width(time_features) + m + p, *hidden, m), seed, name)
        return cls(net, m, p, time_features)

    def inputs(self, s, Z, TAU):
        Z = np.atleast_2d(Z)
        n = len(Z)
        S = np.broadcast_to(np.asarray(s, dtype=np.float64).reshape(-1), (n,))
        TAU = np.broadcast_to(np.atleast_2d(TAU), (n, self.p))
        return np.concatenate([time_embedding(S, self.time_features), Z, TAU], axis=1)

    def __call__(self, s, z, tau):
        z = np.asarray(z, dtype=np.float64)
        out = self.net(self.inputs(s, z, tau))
        return out[0] if z.ndim == 1 else out

    def to_dict(self):
        return {"m": self.m, "p": self.p, "time_features": self.time_features, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["net"]), int(d["m"]), int(d["p"]), d.get("time_features", "raw"))


def fm_target_sample(z0, z1, s):
    """Point on the straight path from ``z0`` to ``z1`` at time ``s`` and its velocity."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeError(f"z0 and z1 differ in shape: {z0.shape} vs {z1.shape}")
    return (1.0 - s) * z0 + s * z1, z1 - z0


def draw_fm(rng, n, m):
    """``s ~ U[0, 1]`` then ``z0 ~ N(0, I_m)``, in that order."""
    S = rng.uniform(0.0, 1.0, size=n)
    Z0 = rng.standard_normal((n, m))
    return S, Z0


def conditional_fm_loss(field, head, Z1, C, S, Z0):
    """Plain conditional flow-matching loss on frozen draws."""
    TAU = head(np.atleast_2d(C))
    Zs = (1.0 - S)[:, None] * Z0 + S[:, None] * Z1
    r = field.net(field.inputs(S, Zs, TAU)) - (Z1 - Z0)
    return float(np.mean(np.einsum("nm,nm->n", r, r)))


def _select_paraphrases(P, K, rng, warned):
    if K is None or len(P) <= K:
        if K is not None and len(P) < K and not warned[0]:
            warnings.warn(f"K={K} exceeds the {len(P)} available paraphrases; using all", stacklevel=3)
            warned[0] = True
        return P
    return P[np.sort(rng.choice(len(P), size=K, replace=False))]


def regularized_fm_loss(field, head, Z1, C, paraphrases, cfg, rng=None):
    """Regularized FM loss with fresh draws from ``rng``.

    ``paraphrases`` is a per-item list of ``(K_i, 768)`` arrays.  Draws for
    ``s`` and ``z0`` are taken before any paraphrase selection, so ``gamma = 0``
    reproduces :func:`conditional_fm_loss` on the same stream bit for bit.
    """
    rng = rng if rng is not None else make_rng(cfg.seed, "fm-loss")
    Z1 = np.atleast_2d(Z1)
    C = np.atleast_2d(C)
    S, Z0 = draw_fm(rng, len(Z1), Z1.shape[1])
    fm = conditional_fm_loss(field, head, Z1, C, S, Z0)
    if cfg.gamma == 0.0 or not any(len(P) for P in paraphrases):
        return fm
    warned = [False]
    sel = [_select_paraphrases(np.atleast_2d(P), cfg.K, rng, warned) if len(P) else P for P in paraphrases]
    TAU = head(C)
    reg = 0.0
    for tau, P in zip(TAU, sel):
        if len(P):
            d = tau - head(P)
            reg += float(np.mean(np.einsum("kp,kp->k", d, d)))
    return fm + cfg.gamma * reg / len(Z1)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class TextTable:
    """Distinct task vectors for a set of pairs and their paraphrases.

    The head is evaluated once per distinct text per step and indexed, which
    keeps the wide first layer cheap when many pairs share a text.
    """

    def __init__(self, encoder, texts, paraphrases):
        uniq = sorted(set(texts))
        variants = {t: self._variants(paraphrases, t) for t in uniq}
        allt = uniq + sorted({v for vs in variants.values() for v in vs} - set(uniq))
        self.row = {t: i for i, t in enumerate(allt)}
        self.C = encode_many(encoder, allt)
        self.text_idx = np.array([self.row[t] for t in texts], dtype=int)
        self.para_idx = [np.array([self.row[v] for v in variants[t]], dtype=int) for t in texts]

    @staticmethod
    def _variants(paraphrases, t):
        if not paraphrases or t not in paraphrases:
            return []
        ps = paraphrases[t]
        return list(getattr(ps, "variants", ps))


def paraphrase_penalty(H, text_idx, para_idx, gamma, g_H):
    """``mean_i mean_k |H[t_i] - H[p_ik]|^2``; adds ``gamma`` times its gradient into ``g_H``."""
    B = len(text_idx)
    if gamma == 0.0:
        return 0.0
    sizes = np.array([len(P) for P in para_idx])
    if sizes.sum() == 0:
        return 0.0
    anchor = np.repeat(np.asarray(text_idx), sizes)
    other = np.concatenate([np.asarray(P, dtype=int) for P in para_idx])
    w = np.repeat(1.0 / (B * np.maximum(sizes, 1)), sizes)
    d = H[anchor] - H[other]
    reg = float(np.sum(w * np.einsum("kp,kp->k", d, d)))
    gd = (2.0 * gamma * w)[:, None] * d
    np.add.at(g_H, anchor, gd)
    np.add.at(g_H, other, -gd)
    return reg


def fm_objective(field, head, Z1, text_idx, para_idx, C, S, Z0, gamma, item_of_draw):
    """Loss and gradients for ``field`` and ``head`` on frozen draws.

    ``Z1``/``text_idx``/``para_idx`` describe the batch items, ``C`` the
    distinct task vectors.  Each row of ``S``/``Z0`` is one draw for item
    ``item_of_draw[row]``; the FM term averages draws within an item, then items.
    """
    B = len(Z1)
    H, h_cache = head.forward(C)
    counts = np.bincount(item_of_draw, minlength=B).astype(np.float64)
    w = 1.0 / (counts[item_of_draw] * B)
    Zt = Z1[item_of_draw]
    TAU = H[text_idx[item_of_draw]]
    Zs = (1.0 - S)[:, None] * Z0 + S[:, None] * Zt
    out, v_cache = field.net.forward(field.inputs(S, Zs, TAU))
    r = out - (Zt - Z0)
    fm = float(np.sum(w * np.einsum("nm,nm->n", r, r)))
    g_v, g_in = field.net.backward(v_cache, 2.0 * w[:, None] * r)
    g_H = np.zeros_like(H)
    np.add.at(g_H, text_idx[item_of_draw], g_in[:, -field.p:])
    reg = paraphrase_penalty(H, text_idx, para_idx, gamma, g_H)
    g_h, _ = head.backward(h_cache, g_H, input_grad=False)
    return fm + gamma * reg, fm, reg, {"field": g_v, "head": g_h}


def latent_task_pairs(mf, dataset):
    """Expand the dataset into one ``(z, text)`` pair per annotation."""
    Z = encode_batch(mf, dataset.trajectories)
    zs, texts = [], []
    for z, anns in zip(Z, dataset.annotations):
        for a in anns:
            zs.append(z)
            texts.append(a.text)
    return np.array(zs), texts


def _iter_batches(pair_rng, n_pairs, cfg):
    perm = pair_rng.permutation(n_pairs)
    bs = min(cfg.batch_size, n_pairs)
    for start in range(0, n_pairs, bs):
        yield perm[start : start + bs]


def train_conditional_head(Z, texts, encoder, paraphrases, cfg, net, objective, name, callback=None):
    """Shared trainer for a latent generative net plus the text head.

    ``objective(net, head, Zb, tidx, pidx, C, rng, gamma)`` returns
    ``(total, main, reg, grads)`` with grads keyed ``"field"`` and ``"head"``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if len(Z) == 0 or len(Z) != len(texts):
        raise ShapeError("need one text per latent point and at least one pair")
    table = TextTable(encoder, texts, paraphrases)
    head = make_text_head(cfg.p, cfg.head_hidden, cfg.seed)
    pair_rng = make_rng(cfg.seed, name, "pairs")
    draw_rng = make_rng(cfg.seed, name, "draws")
    sub_rng = make_rng(cfg.seed, name, "paraphrase-subsets")
    trainer = Trainer({"field": net.net, "head": head}, lr=cfg.lr)
    warned = [False]
    history = []
    n_batches = -(-len(Z) // min(cfg.batch_size, len(Z)))
    total_steps = cfg.epochs * n_batches
    step_no = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        nb = 0
        for idx in _iter_batches(pair_rng, len(Z), cfg):
            pidx = [_select_paraphrases(table.para_idx[i], cfg.K, sub_rng, warned) for i in idx]
            total, main, reg, grads = objective(net, head, Z[idx], table.text_idx[idx], pidx,
                                                table.C, draw_rng, cfg.gamma)
            if not np.isfinite(total):
                raise TrainingError(f"{name} loss became non-finite in epoch {epoch}", epoch - 1)
            trainer.set_lr(cosine_lr(cfg.lr, cfg.lr_final, step_no, total_steps))
            trainer.step(grads)
            step_no += 1
            sums += (total, main, reg)
            nb += 1
        rec = {"epoch": epoch, **dict(zip(("total", "main", "reg"), (sums / nb).tolist()))}
        history.append(rec)
        if callback is not None:
            callback(rec)
        if epoch % 500 == 0 or epoch == cfg.epochs - 1:
            log.info("%s epoch %d: %s", name, epoch, rec)
    return head, history


def train_latent_flow(Z, texts, encoder, paraphrases=None, cfg=None, callback=None):
    """Jointly fit the vector field and text head; returns ``(field, head, history)``."""
    cfg = cfg or FlowTrainConfig()
    Z = np.asarray(Z, dtype=np.float64)
    field = VectorField.create(Z.shape[1], cfg.p, cfg.hidden, cfg.seed, cfg.time_features)

    def objective(field, head, Zb, tidx, pidx, C, rng, gamma):
        item = np.repeat(np.arange(len(Zb)), cfg.draws_per_pair)
        S, Z0 = draw_fm(rng, len(item), Zb.shape[1])
        Z0 = cfg.prior_scale * Z0
        return fm_objective(field, head, Zb, tidx, pidx, C, S, Z0, gamma, item)

    head, history = train_conditional_head(Z, texts, encoder, paraphrases, cfg, field, objective, "flow", callback)
    return field, head, history


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_latent(field, tau, cfg=None, z0=None, n=None, rng=None):
    """Integrate ``dz/ds = v(s, z, tau)`` over ``[0, 1]``.

    ``z0`` may be one point or an ``(n, m)`` batch; if omitted, ``n`` points
    (default 1) are drawn from ``N(0, I)`` using ``rng`` (default: the
    sampler seed).
    """
    cfg = cfg or SamplerConfig()
    single = False
    if z0 is None:
        rng = rng if rng is not None else make_rng(cfg.seed, "sample")
        z0 = rng.standard_normal((n or 1, field.m))
    else:
        z0 = np.asarray(z0, dtype=np.float64)
        single = z0.ndim == 1
    z = np.atleast_2d(z0).copy()
    if z.shape[1] != field.m:
        raise ShapeError(f"z0 must have width {field.m}, got {z.shape}")
    tau = np.asarray(tau, dtype=np.float64)
    ds = 1.0 / cfg.steps

    def v(s, z):
        return field.net(field.inputs(s, z, tau))

    for k in range(cfg.steps):
        s = k * ds
        if cfg.solver == "euler":
            z = z + ds * v(s, z)
        else:
            k1 = v(s, z)
            k2 = v(s + 0.5 * ds, z + 0.5 * ds * k1)
            k3 = v(s + 0.5 * ds, z + 0.5 * ds * k2)
            k4 = v(s + ds, z + ds * k3)
            z = z + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise SamplerError(f"non-finite latent state at step {k}", step=k)
    return z[0] if single else z


@dataclass(frozen=True)
class LatentScaler:
    """Per-dimension standardization ``(z - offset) / scale`` of manifold latents.

    Generative heads are trained on standardized latents so that the data
    spread matches the unit-variance prior; sampling maps back.
    """

    offset: tuple
    scale: tuple

    @classmethod
    def identity(cls, m):
        return cls((0.0,) * m, (1.0,) * m)

    @classmethod
    def fit(cls, Z, floor=1e-6):
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        sd = Z.std(axis=0)
        sd = np.where(sd > floor, sd, 1.0)
        return cls(tuple(Z.mean(axis=0).tolist()), tuple(sd.tolist()))

    def apply(self, Z):
        return (np.asarray(Z, dtype=np.float64) - np.asarray(self.offset)) / np.asarray(self.scale)

    def invert(self, Z):
        return np.asarray(Z, dtype=np.float64) * np.asarray(self.scale) + np.asarray(self.offset)

    def to_dict(self):
        return {"offset": list(self.offset), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["offset"]), tuple(float(v) for v in d["scale"]))


@dataclass
class FlowHead:
    field: VectorField
    sampler: SamplerConfig
    scaler: LatentScaler = None

    kind = "flow"

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = LatentScaler.identity(self.field.m)
        if len(self.scaler.offset) != self.field.m:
            raise ShapeError(f"latent scaler has dim {len(self.scaler.offset)}, field has m={self.field.m}")

    @property
    def m(self):
        return self.field.m

    @property
    def p(self):
        return self.field.p

    def sample(self, tau, n, rng, sampler=None):
        z0 = rng.standard_normal((n, self.field.m))
        return self.scaler.invert(sample_latent(self.field, tau, sampler or self.sampler, z0=z0))

    def to_dict(self):
        return {"kind": "flow", "field": self.field.to_dict(), "sampler": asdict(self.sampler),
                "scaler": self.scaler.to_dict()}

    @classmethod
    def from_dict(cls, d):
        sc = d.get("scaler")
        return cls(VectorField.from_dict(d["field"]), SamplerConfig(**d["sampler"]),
                   None if sc is None else LatentScaler.from_dict(sc))


def generate_latents(ckpt, text, n, rng, sampler=None):
    c = ckpt.text_encoder(text)
    tau = ckpt.text_head(c)
    return ckpt.head.sample(tau, n, rng, sampler)


def generate_motion(ckpt, text, n, cfg=None, call_index=0):
    """Decode ``n`` trajectories for ``text`` from a checkpoint with a trained head.

    Randomness comes from the stream ``(cfg.seed, "generate", call_index)``.
    """
    if n == 0:
        return []
    cfg = cfg or getattr(ckpt.head, "sampler", None) or SamplerConfig()
    rng = make_rng(cfg.seed, "generate", call_index)
    Z = generate_latents(ckpt, text, n, rng, cfg if isinstance(cfg, SamplerConfig) else None)
    return decode_batch(ckpt.manifold, Z)
