"""Small fully connected networks with hand-written backpropagation.

A network is a tuple of :class:`Layer` objects. Each layer computes
``act(x @ W.T + b)`` where ``act`` is ``prelu`` (one learnable slope per
layer), ``sigmoid`` or ``linear``. Gradients returned by :func:`mlp_backward`
are exact derivatives of ``sum(dY * Y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, ValidationError

ACTIVATIONS = ("prelu", "sigmoid", "linear")
PRELU_SLOPE = 0.2


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "prelu"
    slope: float = PRELU_SLOPE

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Mlp:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("an Mlp needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {layer.activation!r}")
            w, b = layer.weight, layer.bias
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.isfinite(layer.slope)):
                raise ValidationError(f"layer {i}: non-finite parameters")
            if i and w.shape[1] != self.layers[i - 1].out_dim:
                raise ValidationError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                    f"{self.layers[i - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def arrays(self) -> list[np.ndarray]:
        """Parameters as a flat list ``[W0, b0, slope0, W1, ...]``; slopes are 0-d arrays."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias, np.asarray(layer.slope, dtype=np.float64)]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "Mlp":
        if len(arrays) != 3 * len(self.layers):
            raise ValidationError("parameter list length does not match the network")
        layers = []
        for i, layer in enumerate(self.layers):
            w, b, s = arrays[3 * i: 3 * i + 3]
            layers.append(Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64),
                                layer.activation, float(s)))
        return Mlp(tuple(layers))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "Mlp":
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(vec[pos: pos + a.size]).reshape(a.shape))
            pos += a.size
        if pos != len(vec):
            raise ValidationError("vector length does not match the network")
        return self.with_arrays(arrays)

    def zeros_like(self) -> "Mlp":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])


def init_mlp(widths: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
             slope: float = PRELU_SLOPE) -> Mlp:
    """Glorot-uniform weights, zero biases, PReLU slopes at ``slope``."""
    if len(widths) < 2 or len(activations) != len(widths) - 1:
        raise ValidationError("need len(activations) == len(widths) - 1 >= 1")
    layers = []
    for fan_in, fan_out, act in zip(widths[:-1], widths[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act, slope))
    return Mlp(tuple(layers))


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, layer: Layer):
    if layer.activation == "prelu":
        return np.where(z >= 0, z, layer.slope * z)
    if layer.activation == "sigmoid":
        return _sigmoid(z)
    return z


@dataclass
class ForwardTape:
    params: Mlp
    inputs: list = field(default_factory=list)  # per-layer input activations
    pre: list = field(default_factory=list)  # per-layer pre-activations
    outputs: list = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.inputs[0].shape[0]


def mlp_forward(params: Mlp, x) -> tuple[np.ndarray, ForwardTape]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.in_dim:
        raise ValidationError(f"network expects (batch, {params.in_dim}) input, got {a.shape}")
    tape = ForwardTape(params)
    for layer in params.layers:
        z = a @ layer.weight.T + layer.bias
        tape.inputs.append(a)
        tape.pre.append(z)
        a = _activate(z, layer)
        tape.outputs.append(a)
    return a, tape


def mlp_backward(params: Mlp, tape: ForwardTape, dy) -> tuple[Mlp, np.ndarray]:
    """Gradients of ``sum(dy * Y)`` w.r.t. every parameter and the input.

    Returns the gradient as an ``Mlp`` of the same shape (slope entries hold
    the slope gradients) together with ``dX``.
    """
    if tape.params is not params:
        raise ValidationError("tape was recorded with a different parameter set")
    d = np.asarray(dy, dtype=np.float64)
    if d.shape != (tape.batch, params.out_dim):
        raise ValidationError(f"dY has shape {d.shape}, expected {(tape.batch, params.out_dim)}")
    grads = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        z = tape.pre[i]
        dslope = 0.0
        if layer.activation == "prelu":
            neg = z < 0
            dslope = float(np.sum(d * np.where(neg, z, 0.0)))
            d = np.where(neg, layer.slope * d, d)
        elif layer.activation == "sigmoid":
            s = tape.outputs[i]
            d = d * s * (1.0 - s)
        dw = d.T @ tape.inputs[i]
        db = d.sum(axis=0)
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db)) and np.isfinite(dslope)):
            raise DivergenceError(f"non-finite gradient in layer {i}")
        grads[i] = Layer(dw, db, layer.activation, dslope)
        d = d @ layer.weight
    return Mlp(tuple(grads)), d


# --- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, **kw) -> "AdamState":
        arrays = params.arrays() if isinstance(params, Mlp) else list(params)
        return cls([np.zeros_like(a, dtype=np.float64) for a in arrays],
                   [np.zeros_like(a, dtype=np.float64) for a in arrays], **kw)


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are either two ``Mlp`` values or two sequences of
    arrays. Returns ``(new_params, new_state)``; the inputs are not modified.
    """
    is_mlp = isinstance(params, Mlp)
    p_arrays = params.arrays() if is_mlp else [np.asarray(a, dtype=np.float64) for a in params]
    g_arrays = grads.arrays() if isinstance(grads, Mlp) else [np.asarray(g, dtype=np.float64) for g in grads]
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ValidationError("Adam: params, grads and state have different lengths")
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("Adam: non-finite gradient")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValidationError(f"Adam: shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps)
    return (params.with_arrays(new_p) if is_mlp else new_p), new_state


def finite_diff_grad(f: Callable, params, h: float = 1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``params``.

    ``params`` may be an ``Mlp`` (result is an ``Mlp``-shaped gradient) or an
    array of any shape (result has that shape).
    """
    if isinstance(params, Mlp):
        vec = params.to_vector()
        g = finite_diff_grad(lambda v: f(params.from_vector(v)), vec, h)
        return params.from_vector(g)
    x = np.array(params, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x.copy())
        flat[i] = orig - h
        fm = f(x.copy())
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
