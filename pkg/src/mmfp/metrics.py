"""Evaluation: kernel MMD, trajectory classifiers and motion accuracy.

Sets of trajectories are compared through features: normalized local
coordinates subsampled to at most 64 timesteps with a uniform stride and
flattened.  MMD uses a Gaussian RBF kernel and the biased V-statistic.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ._accel import pairwise_sqdist
from .errors import ConfigError, ShapeError
from .latentflow import SamplerConfig, generate_latents
from .manifold import decode_batch
from .nncore import Mlp, Trainer, cosine_lr
from .rng import make_rng

log = logging.getLogger(__name__)

MAX_KERNEL_STEPS = 64


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF ``exp(-|x - y|^2 / (2 h^2))``; ``bandwidth=None`` selects the median heuristic."""

    bandwidth: float = None

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be positive")


def _canonical_pair(A, B):
    """Order two arrays by shape then raw bytes so symmetric quantities are computed identically."""
    ka = (A.shape, A.tobytes())
    kb = (B.shape, B.tobytes())
    return (A, B) if ka <= kb else (B, A)


def median_bandwidth(A, B=None):
    """Median pairwise distance over distinct pairs of the pooled set (1.0 if degenerate)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if B is not None:
        A, B = _canonical_pair(A, np.atleast_2d(np.asarray(B, dtype=np.float64)))
        A = np.concatenate([A, B])
    if len(A) < 2:
        return 1.0
    D = pairwise_sqdist(A, A)
    d = np.sqrt(D[np.triu_indices(len(A), k=1)])
    h = float(np.median(d))
    return h if h > 0.0 else 1.0


def mmd_sq(A, B, kernel=None):
    """Biased squared MMD between sample sets ``A (nA, D)`` and ``B (nB, D)``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if len(A) == 0 or len(B) == 0:
        raise ShapeError("mmd_sq needs non-empty sets")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    kernel = kernel or KernelSpec()
    A, B = _canonical_pair(A, B)
    h = kernel.bandwidth if kernel.bandwidth is not None else median_bandwidth(A, B)
    c = -0.5 / (h * h)
    kaa = np.mean(np.exp(c * pairwise_sqdist(A, A)))
    kbb = np.mean(np.exp(c * pairwise_sqdist(B, B)))
    kab = np.mean(np.exp(c * pairwise_sqdist(A, B)))
    return float(kaa + kbb - 2.0 * kab)


def kernel_stride(T, max_steps=MAX_KERNEL_STEPS):
    return max(1, -(-T // max_steps))


def trajectory_features(xs, normalization, max_steps=MAX_KERNEL_STEPS):
    """``(N, D)`` features: normalized local coordinates at a uniform stride, flattened."""
    if not xs:
        raise ShapeError("no trajectories to featurize")
    T = xs[0].T
    stride = kernel_stride(T, max_steps)
    rows = []
    for x in xs:
        if x.T != T:
            raise ShapeError(f"mixed trajectory lengths {T} and {x.T}")
        rows.append(normalization.apply(x.local())[::stride].reshape(-1))
    return np.stack(rows)


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------


@dataclass
class ClassifierConfig:
    hidden: tuple = (128, 128)
    epochs: int = 2000
    lr: float = 3e-3
    lr_final: float = 1e-4
    mixup_per_group: int = 8
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)


@dataclass
class TrajClassifier:
    net: Mlp
    label_kind: str
    classes: tuple
    label_names: tuple
    T: int
    normalization: object

    def features(self, xs):
        for x in xs:
            if x.T != self.T:
                raise ShapeError(f"classifier expects T={self.T}, got T={x.T}")
        return trajectory_features(xs, self.normalization)

    def predict(self, xs):
        """Class ids (dataset tag values) for a list of trajectories."""
        if not xs:
            return np.zeros(0, dtype=int)
        logits = self.net(self.features(xs))
        return np.asarray(self.classes)[np.argmax(logits, axis=1)]

    def accuracy(self, xs, labels):
        return float(np.mean(self.predict(xs) == np.asarray(labels)))


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(np.mean(logp[np.arange(n), y]))
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return loss, g / n


def classifier_examples(dataset, label_kind, with_groups=False):
    """Trajectories and labels for ``label_kind``: demonstrations plus tagged negatives.

    With ``with_groups`` also returns a mixup group per example: demonstrations
    sharing their full tag set form a group, each negative is its own group.
    """
    xs, ys, groups = [], [], []
    for x, anns in zip(dataset.trajectories, dataset.annotations):
        vals = {a.tags[label_kind] for a in anns if label_kind in a.tags}
        if len(vals) > 1:
            raise ConfigError(f"trajectory carries conflicting {label_kind!r} tags {sorted(vals)}")
        if vals:
            xs.append(x)
            ys.append(vals.pop())
            groups.append(tuple(sorted({(k, v) for a in anns for k, v in a.tags.items()})))
    for i, (x, tags) in enumerate(dataset.negatives):
        if label_kind in tags:
            xs.append(x)
            ys.append(tags[label_kind])
            groups.append(("negative", i))
    ys = np.asarray(ys, dtype=int)
    return (xs, ys, groups) if with_groups else (xs, ys)


def classifier_loss(net, F, y, weight_decay=0.0):
    """Cross-entropy plus L2 on all parameters; returns ``(value, grad)``."""
    out, cache = net.forward(F)
    loss, g = _softmax_xent(out, y)
    grad, _ = net.backward(cache, g)
    loss += 0.5 * weight_decay * float(net.params @ net.params)
    return loss, grad + weight_decay * net.params


def train_classifier(dataset, label_kind, cfg=None):
    """Full-batch softmax classifier with mixup inside groups of identically tagged demos."""
    cfg = cfg or ClassifierConfig()
    xs, ys, groups = classifier_examples(dataset, label_kind, with_groups=True)
    classes = tuple(int(c) for c in sorted(set(ys.tolist())))
    if len(classes) < 2:
        raise ConfigError(f"label kind {label_kind!r} has {len(classes)} class(es); need at least 2")
    y = np.searchsorted(classes, ys)
    F = trajectory_features(xs, dataset.normalization)
    net = Mlp.create((F.shape[1], *cfg.hidden, len(classes)), cfg.seed, f"classifier-{label_kind}")
    trainer = Trainer({"clf": net}, lr=cfg.lr)
    rng = make_rng(cfg.seed, "classifier", label_kind)
    keys = {g: k for k, g in enumerate(dict.fromkeys(groups))}
    gid = np.array([keys[g] for g in groups])
    members = [np.flatnonzero(gid == k) for k in range(len(keys))]
    for epoch in range(cfg.epochs):
        Fa, ya = [F], [y]
        for idx in members:
            if cfg.mixup_per_group and len(idx) > 1:
                i = rng.choice(idx, cfg.mixup_per_group)
                j = rng.choice(idx, cfg.mixup_per_group)
                a = rng.uniform(0.0, 1.0, size=(cfg.mixup_per_group, 1))
                Fa.append(a * F[i] + (1.0 - a) * F[j])
                ya.append(np.full(cfg.mixup_per_group, y[idx[0]]))
        loss, grad = classifier_loss(net, np.concatenate(Fa), np.concatenate(ya), cfg.weight_decay)
        trainer.set_lr(cosine_lr(cfg.lr, cfg.lr_final, epoch, cfg.epochs))
        trainer.step({"clf": grad})
    names = tuple(dataset.label_names.get(label_kind, [str(c) for c in classes]))
    clf = TrajClassifier(net, label_kind, classes, names, dataset.T, dataset.normalization)
    acc = clf.accuracy(xs, ys)
    log.info("classifier %s: train accuracy %.3f on %d examples", label_kind, acc, len(xs))
    return clf


def train_classifiers(dataset, cfg=None):
    """One classifier per label kind that has at least two classes."""
    out = {}
    for kind in dataset.label_kinds():
        _, ys = classifier_examples(dataset, kind)
        if len(set(ys.tolist())) >= 2:
            out[kind] = train_classifier(dataset, kind, cfg)
    return out


# ---------------------------------------------------------------------------
# generators and metrics
# ---------------------------------------------------------------------------


def checkpoint_generator(ckpt, seed=0, sampler=None):
    """``gen(text, n, slot)`` drawing from a trained checkpoint.

    The random stream depends on ``(seed, slot)`` only, so conditioning on a
    different text with the same slot reuses the same noise.
    """
    sampler = sampler or getattr(ckpt.head, "sampler", None) or SamplerConfig()

    def gen(text, n, slot=None):
        if n == 0:
            return []
        rng = make_rng(seed, "eval", text if slot is None else slot)
        Z = generate_latents(ckpt, text, n, rng, sampler)
        return decode_batch(ckpt.manifold, Z)

    return gen


def _as_generator(model, seed, sampler):
    return model if callable(model) else checkpoint_generator(model, seed, sampler)


def expected_labels(dataset, texts, kinds):
    out = {}
    for t in texts:
        tags = dataset.tags_for_text(t)
        use = {k: tags[k] for k in kinds if k in tags}
        if not use:
            raise ConfigError(f"text {t!r} has no expected label among {sorted(kinds)}")
        out[t] = use
    return out


def motion_accuracy(model, texts_labels, n, classifiers, seed=0, sampler=None):
    """Percentage of generated samples matching each expected label, plus ``"both"``.

    ``texts_labels`` maps text -> ``{label_kind: class id}``.  Per kind the
    percentage is over all samples of texts carrying that kind; ``"both"``
    counts samples matching every expected label of their text.
    """
    gen = _as_generator(model, seed, sampler)
    hits = {}
    joint = []
    for text in sorted(texts_labels):
        labels = texts_labels[text]
        if not labels:
            raise ConfigError(f"text {text!r} has no expected label")
        missing = set(labels) - set(classifiers)
        if missing:
            raise ConfigError(f"no classifier for label kind(s) {sorted(missing)}")
        xs = gen(text, n, text)
        ok = np.ones(len(xs), dtype=bool)
        for kind, want in sorted(labels.items()):
            match = classifiers[kind].predict(xs) == want
            hits.setdefault(kind, []).append(match)
            ok &= match
        joint.append(ok)
    out = {k: 100.0 * float(np.mean(np.concatenate(v))) for k, v in sorted(hits.items())}
    out["both"] = 100.0 * float(np.mean(np.concatenate(joint)))
    return out


def _level_texts(dataset, level):
    texts = dataset.texts(level)
    if not texts:
        raise ConfigError(f"no texts at level {level}")
    return texts


def _demo_features(dataset, text):
    return trajectory_features([dataset.trajectories[i] for i in dataset.indices_for_text(text)], dataset.normalization)


def level_mmd(model, dataset, level, n, kernel=None, seed=0, sampler=None):
    """Mean over level-``level`` texts of MMD(generated | text, demos of text)."""
    gen = _as_generator(model, seed, sampler)
    vals = []
    for text in _level_texts(dataset, level):
        G = trajectory_features(gen(text, n, text), dataset.normalization)
        vals.append(mmd_sq(G, _demo_features(dataset, text), kernel))
    return float(np.mean(vals))


def robust_level_mmd(model, dataset, level, paraphrases, n, kernel=None, seed=0, sampler=None):
    """Like :func:`level_mmd` but conditioned on held-out paraphrases of each text.

    Each paraphrase reuses the noise stream of its canonical text.
    """
    gen = _as_generator(model, seed, sampler)
    vals = []
    for text in _level_texts(dataset, level):
        ps = (paraphrases or {}).get(text)
        variants = list(getattr(ps, "variants", ps) or [])
        if not variants:
            continue
        D = _demo_features(dataset, text)
        per = [mmd_sq(trajectory_features(gen(v, n, text), dataset.normalization), D, kernel) for v in variants]
        vals.append(float(np.mean(per)))
    if not vals:
        raise ConfigError(f"no held-out paraphrases for any level-{level} text")
    return float(np.mean(vals))


def mmd_separation(model, dataset, level, n, seed=0, sampler=None):
    """``M[i, j]`` = MMD(generated | text_i, demos of text_j) with one shared bandwidth.

    The bandwidth is the median heuristic over all demonstrations at the level,
    so entries within a row are comparable.  Returns ``(texts, M)``.
    """
    gen = _as_generator(model, seed, sampler)
    texts = _level_texts(dataset, level)
    demos = [_demo_features(dataset, t) for t in texts]
    kernel = KernelSpec(median_bandwidth(np.concatenate(demos)))
    M = np.zeros((len(texts), len(texts)))
    for i, t in enumerate(texts):
        G = trajectory_features(gen(t, n, t), dataset.normalization)
        for j, D in enumerate(demos):
            M[i, j] = mmd_sq(G, D, kernel)
    return texts, M


def separation_rate(M):
    """Fraction of rows whose diagonal entry is strictly below every off-diagonal entry."""
    k = len(M)
    if k < 2:
        return 1.0
    ok = [all(M[i, i] < M[i, j] for j in range(k) if j != i) for i in range(k)]
    return float(np.mean(ok))


@dataclass
class EvalConfig:
    n: int = 100
    seed: int = 0
    bandwidth: float = None

    def kernel(self):
        return KernelSpec(self.bandwidth)


def evaluate(ckpt, dataset, classifiers, heldout=None, cfg=None, sampler=None):
    """Metrics report: per level MMD and robust MMD, per level accuracy by label kind."""
    cfg = cfg or EvalConfig()
    gen = checkpoint_generator(ckpt, cfg.seed, sampler)
    kinds = sorted(classifiers)
    report = {"levels": {}, "accuracy": {}, "config": asdict(cfg),
              "kernel_stride": kernel_stride(dataset.T),
              "head": ckpt.head.kind if ckpt.head is not None else None}
    for level in dataset.levels:
        entry = {"mmd": level_mmd(gen, dataset, level, cfg.n, cfg.kernel())}
        try:
            entry["robust_mmd"] = robust_level_mmd(gen, dataset, level, heldout, cfg.n, cfg.kernel())
        except ConfigError:
            entry["robust_mmd"] = None
        report["levels"][str(level)] = entry
        texts = dataset.texts(level)
        labels = {t: {k: v for k, v in dataset.tags_for_text(t).items() if k in kinds} for t in texts}
        if all(labels.values()):
            report["accuracy"][str(level)] = motion_accuracy(gen, labels, cfg.n, classifiers)
    return report
