"""Shared oracles: finite-difference gradients, random rotations, hand-built fields and networks."""

import numpy as np

from mmfp.latentdiffusion import NoiseSchedule, diffusion_objective
from mmfp.latentflow import VectorField, fm_objective, time_embedding
from mmfp.liegeom import pose, so3_exp
from mmfp.manifold import ManifoldConfig, manifold_objective
from mmfp.metrics import classifier_loss
from mmfp.nncore import Mlp, MlpSpec, unpack
from mmfp.textcond import make_text_head
from mmfp.trajectory import Space

FD_STEP = 1e-5
# Entries smaller than this are compared on an absolute scale: central
# differences of O(1) losses carry ~1e-10 roundoff, which would dominate
# a relative comparison of near-zero entries.
GRAD_FLOOR = 1e-5

# a tiny run configuration for exercising the command line end to end
SMALL_CONFIG = """{
 "manifold": {"epochs": 200, "hidden": [16, 16]},
 "flow": {"epochs": 60, "hidden": [16, 16], "head_hidden": [16]},
 "diffusion": {"epochs": 60, "hidden": [16, 16], "head_hidden": [16], "n_steps": 50},
 "sampler": {"steps": 10},
 "eval": {"n": 8},
 "classifier": {"epochs": 40, "hidden": [16]}
}
"""


def fd_gradient(f, params, idx=None, h=FD_STEP):
    """Central differences of ``f()`` with respect to ``params[idx]`` (perturbed in place)."""
    idx = np.arange(params.size) if idx is None else idx
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = params[i]
        params[i] = old + h
        fp = f()
        params[i] = old - h
        fm = f()
        params[i] = old
        out[k] = (fp - fm) / (2.0 * h)
    return out


def max_rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check(params, value_fn, analytic, rng, max_coords=80):
    idx = np.arange(params.size)
    if params.size > max_coords:
        idx = np.sort(rng.choice(params.size, max_coords, replace=False))
    numeric = fd_gradient(value_fn, params, idx)
    return max_rel_error(analytic[idx], numeric)


# ---------------------------------------------------------------------------
# families; each returns a dict name -> max relative error
# ---------------------------------------------------------------------------


def _random_se3_targets(rng, n, T):
    out = np.empty((n, T, 4, 4))
    for i in range(n):
        for t in range(T):
            out[i, t] = pose(so3_exp(rng.normal(scale=0.8, size=3)), rng.normal(size=3))
    return out


def manifold_instance(rng, seed, se3=False):
    T = int(rng.integers(2, 5))
    space = Space.se3() if se3 else Space.euclidean(int(rng.integers(1, 4)))
    D = T * space.local_dim
    m = int(rng.integers(1, 4))
    hidden = (int(rng.integers(2, 7)),)
    cfg = ManifoldConfig(m=m, hidden=hidden, eta=float(rng.uniform(0.01, 0.5)),
                         delta=float(rng.uniform(0.01, 0.5)), seed=seed)
    enc = Mlp.create((D, *hidden, m), seed, "encoder")
    dec = Mlp.create((m, *hidden, D), seed, "decoder")
    B, M = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    F = rng.normal(size=(B, D))
    targets = _random_se3_targets(rng, B, T) if se3 else rng.normal(size=(B, D))
    pa, pb = rng.normal(size=(M, D)), rng.normal(size=(M, D))
    alphas = rng.uniform(cfg.mixup_low, cfg.mixup_high, size=M)

    def value():
        return manifold_objective(enc, dec, space, T, F, targets, pa, pb, alphas, cfg).total

    g = manifold_objective(enc, dec, space, T, F, targets, pa, pb, alphas, cfg).grads
    return {
        "encoder": check(enc.params, value, g["encoder"], rng),
        "decoder": check(dec.params, value, g["decoder"], rng),
    }


def _text_batch(rng, B, n_text):
    C = rng.normal(size=(n_text, 768))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    text_idx = rng.integers(0, n_text, size=B)
    para_idx = [rng.integers(0, n_text, size=int(rng.integers(0, 3))) for _ in range(B)]
    return C, text_idx, para_idx


def flow_instance(rng, seed):
    m, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    tf = "raw" if rng.uniform() < 0.5 else "sinusoidal"
    field = VectorField.create(m, p, (int(rng.integers(2, 7)),) * 2, seed, tf)
    head = make_text_head(p, (4,), seed)
    B = int(rng.integers(1, 5))
    C, tidx, pidx = _text_batch(rng, B, int(rng.integers(2, 5)))
    Z1 = rng.normal(size=(B, m))
    item = np.repeat(np.arange(B), int(rng.integers(1, 3)))
    S = rng.uniform(size=len(item))
    Z0 = rng.normal(size=(len(item), m))
    gamma = float(rng.uniform(0.0, 1.0))

    def value():
        return fm_objective(field, head, Z1, tidx, pidx, C, S, Z0, gamma, item)[0]

    g = fm_objective(field, head, Z1, tidx, pidx, C, S, Z0, gamma, item)[3]
    return {
        "vector_field": check(field.net.params, value, g["field"], rng),
        "text_head": check(head.params, value, g["head"], rng),
    }


def diffusion_instance(rng, seed):
    m, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    kind = ("ve", "vp_linear", "vp_cosine")[int(rng.integers(3))]
    sched = NoiseSchedule(kind, n_steps=int(rng.integers(1, 50)))
    net = VectorField.create(m, p, (int(rng.integers(2, 7)),) * 2, seed, name="score-net")
    head = make_text_head(p, (4,), seed + 1)
    B = int(rng.integers(1, 5))
    C, tidx, pidx = _text_batch(rng, B, int(rng.integers(2, 5)))
    Z1 = rng.normal(size=(B, m))
    item = np.repeat(np.arange(B), int(rng.integers(1, 3)))
    t = rng.integers(1, sched.n_steps + 1, size=len(item))
    eps = rng.normal(size=(len(item), m))
    gamma = float(rng.uniform(0.0, 1.0))

    def value():
        return diffusion_objective(net, head, Z1, tidx, pidx, C, sched, t, eps, gamma, item)[0]

    g = diffusion_objective(net, head, Z1, tidx, pidx, C, sched, t, eps, gamma, item)[3]
    return {
        "score_net": check(net.net.params, value, g["field"], rng),
        "text_head": check(head.params, value, g["head"], rng),
    }


def classifier_instance(rng, seed):
    D, k = int(rng.integers(2, 10)), int(rng.integers(2, 5))
    net = Mlp.create((D, int(rng.integers(2, 8)), int(rng.integers(2, 8)), k), seed, "classifier")
    n = int(rng.integers(1, 8))
    F = rng.normal(size=(n, D))
    y = rng.integers(0, k, size=n)
    wd = float(rng.uniform(0.0, 1e-2))
    _, g = classifier_loss(net, F, y, wd)
    return {"classifier": check(net.params, lambda: classifier_loss(net, F, y, wd)[0], g, rng)}


def all_family_errors(n_instances=20, seed=0):
    """Max relative error per family over ``n_instances`` random instances each."""
    rng = np.random.default_rng(seed)
    worst = {}
    counts = {}
    makers = [
        lambda s: manifold_instance(rng, s, se3=False),
        lambda s: manifold_instance(rng, s, se3=True),
        lambda s: flow_instance(rng, s),
        lambda s: diffusion_instance(rng, s),
        lambda s: classifier_instance(rng, s),
    ]
    for k in range(n_instances):
        for make in makers:
            for name, err in make(k).items():
                worst[name] = max(worst.get(name, 0.0), err)
                counts[name] = counts.get(name, 0) + 1
    return worst, counts


def random_rotations(rng, n):
    """Uniform rotations from normalized Gaussian quaternions (independent of so3_exp)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def affine_field(m, p, W=None, b=None, time_features="raw"):
    """Single-layer field ``[s-feat, z, tau] @ W + b``."""
    n_in = time_embedding(0.0, time_features).shape[1] + m + p
    spec = MlpSpec((n_in, m))
    params = np.zeros(spec.n_params)
    Wl, bl = unpack(spec, params)[0]
    if W is not None:
        Wl[...] = W
    if b is not None:
        bl[...] = b
    return VectorField(Mlp(spec, params), m, p, time_features)
