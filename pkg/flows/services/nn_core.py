"""
Small feed-forward networks with hand-written backpropagation, an Adam
optimizer, and a finite-difference gradient checker.

Networks are immutable parameter records (MlpParams); forward passes return an
ActivationCache that the backward pass consumes. Every function accepts a
single input vector or a batch (rows = samples); batch gradients are summed
over rows.
"""

import math
from dataclasses import dataclass

import numpy as np

from cometflows.exceptions import NumericalError, ParameterError, ShapeError

ACTIVATIONS = ('tanh', 'identity')

ADAM_DEFAULTS = {'lr': 1e-3, 'beta1': 0.9, 'beta2': 0.999, 'eps': 1e-8}
GRAD_CHECK_STEP = 1e-5
_NEAR_ZERO = 1e-7


# ============================================
# PARAMETER RECORDS
# ============================================

@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray      # (out, in)
    bias: np.ndarray        # (out,)
    activation: str = 'tanh'

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=float)
        bias = np.asarray(self.bias, dtype=float)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(f"layer shapes do not match: weight {weight.shape}, bias {bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation '{self.activation}'")
        object.__setattr__(self, 'weight', weight)
        object.__setattr__(self, 'bias', bias)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Affine layers with per-layer activation tags."""
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ShapeError(f"layer dimensions do not compose: {prev.out_dim} -> {nxt.in_dim}")
        object.__setattr__(self, 'layers', layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def arrays(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_arrays(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError("array count does not match layer count")
        layers = []
        for i, layer in enumerate(self.layers):
            weight, bias = arrays[2 * i], arrays[2 * i + 1]
            if np.shape(weight) != layer.weight.shape or np.shape(bias) != layer.bias.shape:
                raise ShapeError(f"layer {i}: replacement arrays have the wrong shape")
            layers.append(DenseLayer(weight, bias, layer.activation))
        return MlpParams(tuple(layers))

    def zeros_like(self):
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def parameter_count(self):
        return sum(a.size for a in self.arrays())


def init_mlp(sizes, rng, zero_last=False):
    """
    Glorot-uniform weights, zero biases, tanh hidden layers, identity output.

    zero_last=True zeroes the output layer so the network starts at 0.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"invalid layer sizes {sizes}")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        if last and zero_last:
            weight = np.zeros((fan_out, fan_in))
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weight, np.zeros(fan_out), 'identity' if last else 'tanh'))
    return MlpParams(tuple(layers))


# ============================================
# FORWARD / BACKWARD
# ============================================

@dataclass(frozen=True, eq=False)
class ActivationCache:
    params: MlpParams
    inputs: tuple       # input to every layer, (n, in_l)
    outputs: tuple      # post-activation output of every layer, (n, out_l)
    batched: bool


def mlp_forward(params, x):
    """Return (output, cache) for an input vector or batch."""
    arr = np.asarray(x, dtype=float)
    batched = arr.ndim == 2
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != params.in_dim:
        raise ShapeError(f"MLP expects input width {params.in_dim}, got shape {np.shape(x)}")

    inputs, outputs = [], []
    h = arr
    for layer in params.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        h = np.tanh(z) if layer.activation == 'tanh' else z
        outputs.append(h)

    cache = ActivationCache(params, tuple(inputs), tuple(outputs), batched)
    return (h if batched else h[0]), cache


def mlp_backward(params, cache, output_grad):
    """
    Gradients of <output_grad, output> with respect to parameters and input.

    The cache must come from mlp_forward on these same params.
    """
    if cache.params is not params:
        raise ShapeError("activation cache was produced by different parameters")
    g = np.asarray(output_grad, dtype=float)
    if not cache.batched:
        g = g[None, :] if g.ndim == 1 else g
    n = cache.inputs[0].shape[0]
    if g.shape != (n, params.out_dim):
        raise ShapeError(f"output gradient shape {np.shape(output_grad)} does not match output ({n}, {params.out_dim})")

    grads = [None] * (2 * len(params.layers))
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == 'tanh':
            a = cache.outputs[i]
            g = g * (1.0 - a * a)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weight

    input_grad = g if cache.batched else g[0]
    return params.with_arrays(grads), input_grad


# ============================================
# ADAM
# ============================================

def _flatten(params):
    """Flatten an MlpParams or a sequence of them into one array list."""
    if isinstance(params, MlpParams):
        return params.arrays(), lambda arrays: params.with_arrays(arrays)
    nets = list(params)
    counts = [len(net.arrays()) for net in nets]

    def rebuild(arrays):
        out, pos = [], 0
        for net, count in zip(nets, counts):
            out.append(net.with_arrays(arrays[pos:pos + count]))
            pos += count
        return out

    flat = [a for net in nets for a in net.arrays()]
    return flat, rebuild


@dataclass(frozen=True, eq=False)
class AdamState:
    m: tuple
    v: tuple
    step: int = 0
    lr: float = ADAM_DEFAULTS['lr']
    beta1: float = ADAM_DEFAULTS['beta1']
    beta2: float = ADAM_DEFAULTS['beta2']
    eps: float = ADAM_DEFAULTS['eps']


def adam_init(params, lr=None, beta1=None, beta2=None, eps=None):
    flat, _ = _flatten(params)
    return AdamState(
        m=tuple(np.zeros_like(a) for a in flat),
        v=tuple(np.zeros_like(a) for a in flat),
        step=0,
        lr=ADAM_DEFAULTS['lr'] if lr is None else float(lr),
        beta1=ADAM_DEFAULTS['beta1'] if beta1 is None else float(beta1),
        beta2=ADAM_DEFAULTS['beta2'] if beta2 is None else float(beta2),
        eps=ADAM_DEFAULTS['eps'] if eps is None else float(eps),
    )


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns (new params, new state)."""
    flat_p, rebuild = _flatten(params)
    flat_g, _ = _flatten(grads)
    if len(flat_p) != len(flat_g) or len(flat_p) != len(state.m):
        raise ShapeError("parameters, gradients and optimizer state do not line up")

    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(flat_p, flat_g, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch in Adam step: {p.shape} vs {g.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)

    new_state = AdamState(
        m=tuple(new_m), v=tuple(new_v), step=t,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )
    return rebuild(new_p), new_state


# ============================================
# GRADIENT CHECK
# ============================================

def grad_check(f, point, step=GRAD_CHECK_STEP):
    """
    Max relative error between f's analytic gradient and central differences.

    f(x) returns (value, gradient). Coordinates whose gradients are both
    below 1e-7 in magnitude are compared by absolute difference.
    """
    x0 = np.array(point, dtype=float).ravel()
    value, analytic = f(x0.copy())
    analytic = np.asarray(analytic, dtype=float).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NumericalError("grad_check: non-finite evaluation at the base point")
    if analytic.shape != x0.shape:
        raise ShapeError("grad_check: gradient shape does not match the point")

    worst = 0.0
    for i in range(x0.size):
        plus, minus = x0.copy(), x0.copy()
        plus[i] += step
        minus[i] -= step
        f_plus, _ = f(plus)
        f_minus, _ = f(minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"grad_check: non-finite evaluation at coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        scale = max(abs(analytic[i]), abs(numeric))
        diff = abs(analytic[i] - numeric)
        worst = max(worst, diff if scale < _NEAR_ZERO else diff / scale)
    return worst
