"""Fully-connected ELU networks on flat float64 parameter vectors, with Adam.

Parameter layout is layer by layer: the ``(n_in, n_out)`` weight matrix in
row-major order followed by the ``n_out`` bias.  A layer computes
``x @ W + b``; every layer but the last applies ELU (alpha = 1).
"""

from dataclasses import dataclass, field

import numpy as np

from ._accel import adam_update
from .errors import NumericError, ShapeError
from .rng import make_rng

ACTIVATIONS = ("elu", "identity")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "elu"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), d.get("activation", "elu"))


def unpack(spec, params):
    """Views ``[(W, b), ...]`` into ``params``; writes through."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    layers = []
    off = 0
    s = spec.layer_sizes
    for a, b in zip(s[:-1], s[1:]):
        W = params[off : off + a * b].reshape(a, b)
        off += a * b
        layers.append((W, params[off : off + b]))
        off += b
    return layers


def init_params(spec, seed, name="net"):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.

    ``name`` selects an independent stream so sibling networks built from
    one seed do not share initial weights.
    """
    rng = make_rng(seed, "mlp-init", name)
    params = np.empty(spec.n_params)
    for W, b in unpack(spec, params):
        bound = np.sqrt(1.0 / W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


def _elu(x):
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.n_in:
        raise ShapeError(f"input: expected last dim {spec.n_in}, got shape {x.shape}")
    return X, single


def mlp_forward(spec, params, x):
    X, single = _as_batch(spec, x)
    layers = unpack(spec, params)
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1 and spec.activation == "elu":
            h = _elu(h)
    return h[0] if single else h


def mlp_forward_cached(spec, params, X):
    """Batched forward pass returning ``(output, cache)`` for :func:`mlp_backward`."""
    X, _ = _as_batch(spec, X)
    layers = unpack(spec, params)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1 and spec.activation == "elu":
            h = _elu(h)
        acts.append(h)
    return h, acts


def mlp_backward(spec, params, cache, grad_out, input_grad=True):
    """Return ``(grad_params, grad_input)`` given dLoss/dOutput for a cached batch.

    With ``input_grad=False`` the input gradient is skipped and returned as ``None``.
    """
    layers = unpack(spec, params)
    grad = np.empty(spec.n_params)
    glayers = unpack(spec, grad)
    g = np.asarray(grad_out, dtype=np.float64)
    n_layers = len(layers)
    for i in range(n_layers - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = glayers[i]
        if i < n_layers - 1 and spec.activation == "elu":
            out = cache[i + 1]
            # ELU'(x) = 1 for x > 0, exp(x) = out + 1 otherwise
            g = g * np.where(out > 0.0, 1.0, out + 1.0)
        np.matmul(cache[i].T, g, out=gW)
        np.sum(g, axis=0, out=gb)
        if i > 0 or input_grad:
            g = g @ W.T
    return grad, (g if input_grad else None)


def mlp_gradient(spec, params, loss, inputs):
    """Gradient of ``loss(outputs)`` with respect to ``params``.

    ``loss`` maps the ``(B, n_out)`` output batch to ``(value, dvalue/doutput)``.
    """
    out, cache = mlp_forward_cached(spec, params, inputs)
    value, g_out = loss(out)
    if not np.isfinite(value) or not np.all(np.isfinite(g_out)):
        bad = ~np.all(np.isfinite(out), axis=1) | ~np.all(np.isfinite(np.atleast_2d(g_out)), axis=1)
        idx = int(np.flatnonzero(bad)[0]) if bad.any() else None
        raise NumericError(f"non-finite loss (batch index {idx})", index=idx)
    grad, _ = mlp_backward(spec, params, cache, np.broadcast_to(g_out, out.shape))
    return grad


@dataclass
class Mlp:
    """A network spec bundled with its parameters."""

    spec: MlpSpec
    params: np.ndarray

    @classmethod
    def create(cls, layer_sizes, seed, name="net", activation="elu"):
        spec = MlpSpec(tuple(layer_sizes), activation)
        return cls(spec, init_params(spec, seed, name))

    def __call__(self, x):
        return mlp_forward(self.spec, self.params, x)

    def forward(self, X):
        return mlp_forward_cached(self.spec, self.params, X)

    def backward(self, cache, grad_out, input_grad=True):
        return mlp_backward(self.spec, self.params, cache, grad_out, input_grad)

    def copy(self):
        return Mlp(self.spec, self.params.copy())

    def to_dict(self):
        return {**self.spec.to_dict(), "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d):
        spec = MlpSpec.from_dict(d)
        params = np.array(d["params"], dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got {params.size}")
        return cls(spec, params)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, epsilon)


def adam_step(state, params, grad):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        idx = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericError(f"non-finite gradient entry at {idx}", index=idx)
    t = state.step_count + 1
    new_params, m, v = adam_update(params, grad, state.first_moment, state.second_moment,
                                   state.lr, state.beta1, state.beta2, state.epsilon, t)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


@dataclass
class Trainer:
    """Adam states for a group of named networks updated in lockstep."""

    nets: dict
    lr: float = 1e-3
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, net in self.nets.items():
            self.states[name] = AdamState.zeros(net.spec.n_params, lr=self.lr)

    def set_lr(self, lr):
        for st in self.states.values():
            st.lr = lr

    def step(self, grads):
        for name, g in grads.items():
            net = self.nets[name]
            net.params, self.states[name] = adam_step(self.states[name], net.params, g)


def cosine_lr(lr, lr_final, step, total):
    """Cosine decay from ``lr`` to ``lr_final`` over ``total`` steps."""
    if total <= 1:
        return lr
    frac = min(step / (total - 1), 1.0)
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + np.cos(np.pi * frac))
