"""Small fully connected ReLU networks with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

SIGMA_FLOOR = 1e-4


@dataclass
class MlpParams:
    """Affine layers ``W x + b``; ReLU between layers, identity on the output."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.validate()

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def validate(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("network needs one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"layer {k}: weight {w.shape} and bias {b.shape} are inconsistent")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValidationError(
                    f"layer {k} expects width {w.shape[1]}, previous layer gives {self.weights[k - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {k} has non-finite parameters")

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data) -> "MlpParams":
        try:
            sizes = [int(s) for s in data["layer_sizes"]]
            params = cls(data["weights"], data["biases"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed network description: {exc}") from exc
        if params.layer_sizes != sizes:
            raise ValidationError(f"layer_sizes {sizes} disagree with weight shapes {params.layer_sizes}")
        return params


def init_mlp(layer_sizes, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def zero_mlp(layer_sizes) -> MlpParams:
    return MlpParams([np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
                     [np.zeros(o) for o in layer_sizes[1:]])


def mlp_forward(params: MlpParams, x):
    """Run the network on a vector or on rows of a matrix.

    Returns the output and a cache of layer inputs and pre-activations for
    :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ValidationError(f"input width {x.shape[-1]} != network input width {params.weights[0].shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("network input contains non-finite values")
    single = x.ndim == 1
    a = np.atleast_2d(x)
    inputs, pre = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if k == last else np.maximum(z, 0.0)
    cache = {"inputs": inputs, "pre": pre, "single": single}
    return (a[0] if single else a), cache


def mlp_backward(params: MlpParams, cache, upstream):
    """Reverse-mode gradients of ``sum(upstream * output)``.

    Returns ``(weight_grads, bias_grads, input_grad)``.  The ReLU
    derivative at exactly zero is taken as zero.
    """
    if len(cache["inputs"]) != len(params.weights):
        raise ValidationError("cache does not come from this network")
    g = np.atleast_2d(np.asarray(upstream, dtype=float))
    if g.shape != cache["pre"][-1].shape:
        raise ValidationError(f"upstream gradient shape {g.shape} != output shape {cache['pre'][-1].shape}")
    n_layers = len(params.weights)
    dw, db = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k != n_layers - 1:
            g = g * (cache["pre"][k] > 0.0)
        dw[k] = g.T @ cache["inputs"][k]
        db[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return dw, db, (g[0] if cache["single"] else g)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, params, grads, sigma_index=None):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are parallel lists of arrays.  If
    ``sigma_index`` is given, that entry is the RBF shape parameter and is
    clamped to stay at least ``SIGMA_FLOOR``.  Returns ``(new_params,
    new_state)``; the inputs are not modified.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ValidationError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to Adam")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m = [b1 * m + (1.0 - b1) * g for m, g in zip(state.m, grads)]
    new_v = [b2 * v + (1.0 - b2) * g * g for v, g in zip(state.v, grads)]
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_params = [p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
                  for p, m, v in zip(params, new_m, new_v)]
    if sigma_index is not None:
        new_params[sigma_index] = np.maximum(new_params[sigma_index], SIGMA_FLOOR)
    new_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_params, new_state
